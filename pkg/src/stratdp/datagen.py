"""Seeded synthetic data: symmetric Dirichlet vectors and Gaussian mixtures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .estimation import StratifiedSample
from .privacy import InvalidParameterError, RngLike, as_generator


@dataclass(frozen=True)
class DirichletParams:
    """Symmetric Dirichlet D(alpha, k)."""

    alpha: float
    k: int

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidParameterError(f"alpha must be positive, got {self.alpha}")
        if self.k < 1:
            raise InvalidParameterError(f"k must be positive, got {self.k}")


def sample_dirichlet(params: DirichletParams, rng: RngLike, size: Optional[int] = None) -> np.ndarray:
    """Normalize k independent Gamma(alpha, 1) draws.

    Returns shape ``(k,)`` or ``(size, k)``.
    """
    gen = as_generator(rng)
    shape = (params.k,) if size is None else (int(size), params.k)
    g = gen.standard_gamma(params.alpha, size=shape)
    total = g.sum(axis=-1, keepdims=True)
    # all-zero rows only occur through underflow at tiny alpha; fall back to a vertex
    zero = total[..., 0] == 0
    if np.any(zero):
        idx = gen.integers(params.k, size=int(np.sum(zero)))
        g[zero] = 0.0
        g[zero, idx] = 1.0
        total = g.sum(axis=-1, keepdims=True)
    return g / total


def largest_remainder_sizes(weights, n: int) -> np.ndarray:
    """Integer sizes summing to ``n``, proportional to ``weights``, all >= 1.

    Floors ``w_i * n`` and hands the leftover units to the largest fractional
    parts (ties go to the lower index). Groups left empty then take one unit
    each from the currently largest group.
    """
    w = np.asarray(weights, dtype=float)
    k = w.size
    if n < k:
        raise InvalidParameterError(f"cannot give {k} groups at least one of {n} points")
    raw = w / w.sum() * n
    sizes = np.floor(raw).astype(np.int64)
    leftover = int(n - sizes.sum())
    order = np.lexsort((np.arange(k), -(raw - sizes)))
    sizes[order[:leftover]] += 1
    for i in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))
        sizes[donor] -= 1
        sizes[i] += 1
    return sizes


@dataclass(frozen=True)
class MixtureSpec:
    n: int
    k: int
    alpha: float
    mu_prior_sd: float = 1.0
    sigma_range: tuple[float, float] = (0.1, 2.0)
    equal_sizes: bool = False

    def __post_init__(self) -> None:
        if self.k < 1 or self.n < self.k:
            raise InvalidParameterError(f"need n >= k >= 1, got n={self.n}, k={self.k}")
        if not self.alpha > 0:
            raise InvalidParameterError("alpha must be positive")
        if not self.mu_prior_sd > 0:
            raise InvalidParameterError("mu_prior_sd must be positive")
        lo, hi = self.sigma_range
        if not 0 < lo < hi:
            raise InvalidParameterError(f"sigma range must satisfy 0 < lo < hi, got {self.sigma_range}")


@dataclass
class MixtureData:
    sample: StratifiedSample
    mixture_weights: np.ndarray
    mus: np.ndarray
    sigmas: np.ndarray

    @property
    def sizes(self) -> np.ndarray:
        return self.sample.sizes

    @property
    def group_means(self) -> np.ndarray:
        return self.sample.group_means()

    @property
    def global_mean(self) -> float:
        return float(self.sample.values().mean())

    @property
    def population_mean(self) -> float:
        """Size-weighted average of the generating means."""
        return float(np.dot(self.sizes, self.mus) / self.sizes.sum())

    @property
    def population_sd(self) -> float:
        """Standard deviation of the generating mixture at the realised sizes."""
        w = self.sizes / self.sizes.sum()
        m = np.dot(w, self.mus)
        return float(math.sqrt(np.dot(w, self.sigmas**2 + self.mus**2) - m**2))


def gaussian_mixture(spec: MixtureSpec, rng: RngLike) -> MixtureData:
    """Draw group weights, group parameters and then the grouped data."""
    gen = as_generator(rng)
    v = sample_dirichlet(DirichletParams(spec.alpha, spec.k), gen)
    mus = gen.normal(0.0, spec.mu_prior_sd, size=spec.k)
    sigmas = gen.uniform(*spec.sigma_range, size=spec.k)
    if spec.equal_sizes:
        sizes = largest_remainder_sizes(np.ones(spec.k), spec.n)
    else:
        sizes = largest_remainder_sizes(v, spec.n)
    strata = [(i, mus[i] + sigmas[i] * gen.standard_normal(int(sizes[i]))) for i in range(spec.k)]
    return MixtureData(StratifiedSample(strata), v, mus, sigmas)


def write_sample_csv(sample: StratifiedSample, path) -> None:
    """Dump ``group_id,value`` rows, values in repr precision."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group_id", "value"])
        for gid, values in sample.strata:
            for x in values:
                w.writerow([gid, repr(float(x))])


def read_sample_csv(path) -> StratifiedSample:
    groups: dict = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            gid = row["group_id"]
            gid = int(gid) if gid.lstrip("-").isdigit() else gid
            groups.setdefault(gid, []).append(float(row["value"]))
    return StratifiedSample.from_groups(groups)
