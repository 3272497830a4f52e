"""Clipped-Laplace private means, per-group estimates and the stratified aggregate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Optional

import numpy as np

from .privacy import (
    InvalidParameterError,
    PrivacyBudget,
    RngHandle,
    RngLike,
    compose_parallel,
    laplace_noise,
)


class EmptyDatasetError(ValueError):
    pass


class EmptyStratumError(ValueError):
    def __init__(self, group_id):
        super().__init__(f"stratum {group_id!r} is empty")
        self.group_id = group_id


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ClipConfig:
    """``R`` bounds |mu|; ``gamma`` is the failure-probability knob."""

    R: float
    gamma: float

    def __post_init__(self) -> None:
        if not (self.R > 0 and math.isfinite(self.R)):
            raise InvalidParameterError(f"R must be positive, got {self.R}")
        if not 0 < self.gamma < 1:
            raise InvalidParameterError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass
class StratifiedSample:
    """A dataset split into disjoint, nonempty strata.

    ``strata`` is a list of ``(group_id, values)`` pairs. ``public_weights``,
    when given, are externally known group proportions in the same order.
    """

    strata: list[tuple[Hashable, np.ndarray]]
    public_weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not self.strata:
            raise EmptyDatasetError("a stratified sample needs at least one stratum")
        cleaned = []
        seen = set()
        for gid, values in self.strata:
            arr = np.asarray(values, dtype=float).ravel()
            if arr.size == 0:
                raise EmptyStratumError(gid)
            if gid in seen:
                raise ShapeError(f"duplicate group id {gid!r}")
            seen.add(gid)
            cleaned.append((gid, arr))
        self.strata = cleaned
        if self.public_weights is not None:
            self.public_weights = validate_weights(self.public_weights, len(cleaned))

    @classmethod
    def from_groups(cls, groups: dict, public_weights=None) -> "StratifiedSample":
        return cls(list(groups.items()), public_weights)

    @property
    def k(self) -> int:
        return len(self.strata)

    @property
    def group_ids(self) -> list:
        return [gid for gid, _ in self.strata]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([v.size for _, v in self.strata], dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.sizes.sum())

    def values(self) -> np.ndarray:
        return np.concatenate([v for _, v in self.strata])

    def group_means(self) -> np.ndarray:
        return np.array([v.mean() for _, v in self.strata])

    def aggregation_sizes(self) -> np.ndarray:
        """Sizes used to recombine group estimates.

        True sizes when available; ``n * public_weights`` otherwise.
        """
        if self.public_weights is not None:
            return self.n * self.public_weights
        return self.sizes.astype(float)


@dataclass
class MeanEstimateResult:
    global_estimate: float
    per_group: list[tuple[Hashable, float]]
    budget_spent: PrivacyBudget
    extra: dict = field(default_factory=dict)

    @property
    def group_estimates(self) -> np.ndarray:
        return np.array([est for _, est in self.per_group])


def validate_weights(weights, k: int, tol: float = 1e-9) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != k:
        raise InvalidParameterError(f"expected {k} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidParameterError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > tol:
        raise InvalidParameterError(f"weights must sum to 1 (got {w.sum():.12g})")
    return w


def clip_threshold(cfg: ClipConfig, m: int) -> float:
    """Half-width R + sqrt(ln(m / gamma)) of the symmetric clip interval."""
    if m < 1:
        raise InvalidParameterError(f"m must be a positive count, got {m}")
    return cfg.R + math.sqrt(math.log(m / cfg.gamma))


def clip(x, cfg: ClipConfig, m: int):
    c = clip_threshold(cfg, m)
    out = np.clip(x, -c, c)
    return float(out) if np.ndim(out) == 0 else out


def private_mean_scale(m: int, cfg: ClipConfig, epsilon: float) -> float:
    """Laplace scale of the clipped mean: sensitivity 2c/m divided by epsilon."""
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")
    return 2.0 * clip_threshold(cfg, m) / (m * epsilon)


def private_mean(values, cfg: ClipConfig, epsilon: float, rng: RngLike) -> float:
    """(epsilon, 0)-DP mean of ``values`` via clipping and Laplace noise."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise EmptyDatasetError("cannot estimate the mean of an empty dataset")
    m = x.size
    clipped_mean = float(np.mean(clip(x, cfg, m)))
    return clipped_mean + float(laplace_noise(private_mean_scale(m, cfg, epsilon), rng))


def stratified_mean(per_group, group_sizes) -> float:
    """Size-weighted average of per-group estimates."""
    est = np.asarray(per_group, dtype=float).ravel()
    sizes = np.asarray(group_sizes, dtype=float).ravel()
    if est.shape != sizes.shape:
        raise ShapeError(f"{est.size} estimates but {sizes.size} group sizes")
    if sizes.size == 0 or np.any(sizes <= 0):
        raise InvalidParameterError("group sizes must be positive")
    return float(np.dot(sizes, est) / sizes.sum())


def group_private_means(
    sample: StratifiedSample, cfg: ClipConfig, epsilon: float, rng: RngLike
) -> MeanEstimateResult:
    """Private mean of every stratum at the full epsilon, plus their aggregate.

    Strata are disjoint, so the whole release is (epsilon, 0)-DP. Stratum i
    draws its noise from substream i when ``rng`` is an :class:`RngHandle`.
    """
    per_group = []
    for i, (gid, values) in enumerate(sample.strata):
        sub = rng.substream(i) if isinstance(rng, RngHandle) else rng
        per_group.append((gid, private_mean(values, cfg, epsilon, sub)))
    estimates = [e for _, e in per_group]
    budget = compose_parallel(PrivacyBudget.pure(epsilon), partition_disjoint=True)
    return MeanEstimateResult(
        stratified_mean(estimates, sample.aggregation_sizes()), per_group, budget
    )


def _check_bound_args(n: int, k: int, cfg: ClipConfig, epsilon: float) -> None:
    if k < 1 or n < k:
        raise InvalidParameterError(f"need n >= k >= 1, got n={n}, k={k}")
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")


def fresh_error_bound(n: int, cfg: ClipConfig, epsilon: float, C: float = 1.0) -> float:
    """C * ln(1/gamma) * (R + sqrt(ln(n/gamma))) / (n * epsilon)."""
    _check_bound_args(n, 1, cfg, epsilon)
    return C * math.log(1 / cfg.gamma) * (cfg.R + math.sqrt(math.log(n / cfg.gamma))) / (n * epsilon)


def strat_error_bound(n: int, k: int, cfg: ClipConfig, epsilon: float, C: float = 1.0) -> float:
    """Worst-case stratified bound; equals :func:`fresh_error_bound` at k=1."""
    _check_bound_args(n, k, cfg, epsilon)
    g = cfg.gamma
    return C * math.log(1 / g) * math.sqrt(k) * (cfg.R + math.sqrt(math.log(n / (k * g)))) / (n * epsilon)


def normalized_error(estimate: float, truth: float, scale: float) -> float:
    """|estimate - truth| / scale; NaN when the scale is zero."""
    if not scale > 0:
        return float("nan")
    return abs(float(estimate) - float(truth)) / float(scale)
