"""Univariate Coinpress: iterative private confidence-interval mean estimation.

Each step projects the data into the current interval widened by a Gaussian
tail margin, releases the projected mean with the Gaussian mechanism, and
returns a shorter interval around the noisy mean. The stratified variant runs
the whole procedure on every stratum and recombines with group weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .estimation import (
    EmptyDatasetError,
    MeanEstimateResult,
    StratifiedSample,
    validate_weights,
)
from .privacy import (
    InvalidParameterError,
    PrivacyBudget,
    RngHandle,
    RngLike,
    compose_parallel,
    gaussian_noise,
)


class MissingGroupWeightError(KeyError):
    def __init__(self, group_id):
        super().__init__(f"group {group_id!r} has no records in the public holdout")
        self.group_id = group_id


class UndefinedNormalizationError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class IntervalEstimate:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo <= self.hi:
            raise InvalidParameterError(f"interval lower end {self.lo} exceeds upper end {self.hi}")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __contains__(self, x: float) -> bool:
        return self.lo <= x <= self.hi


def default_rho_schedule(rho_total: float, t: int) -> list[float]:
    """Split ``rho_total`` over ``t`` steps in proportion {1, ..., 1, 5}."""
    if t < 1:
        raise InvalidParameterError("t must be at least 1")
    if not rho_total > 0:
        raise InvalidParameterError("rho_total must be positive")
    if t == 1:
        return [float(rho_total)]
    parts = [1.0] * (t - 1) + [5.0]
    total = sum(parts)
    return [rho_total * p / total for p in parts]


@dataclass(frozen=True)
class CoinpressConfig:
    """Hyperparameters of :func:`uvm_rec`.

    ``interval`` is a prior ``(lo, hi)`` containing the mean, ``sigma`` the
    known data standard deviation and ``rho_schedule`` the per-step zCDP
    budgets (its length is the iteration count ``t``). ``group_sigmas`` is an
    optional per-stratum override used by :func:`strat_coinpress`.
    """

    interval: tuple[float, float]
    sigma: float
    rho_schedule: tuple[float, ...]
    beta: float
    group_sigmas: Optional[tuple[float, ...]] = field(default=None)

    def __post_init__(self) -> None:
        lo, hi = self.interval
        if not lo < hi:
            raise InvalidParameterError(f"prior interval must satisfy lo < hi, got {self.interval}")
        if not self.sigma > 0:
            raise InvalidParameterError("sigma must be positive")
        sched = tuple(float(r) for r in self.rho_schedule)
        if not sched or any(not r > 0 for r in sched):
            raise InvalidParameterError("rho schedule must be a nonempty list of positive values")
        object.__setattr__(self, "rho_schedule", sched)
        object.__setattr__(self, "interval", (float(lo), float(hi)))
        if not 0 < self.beta < 1:
            raise InvalidParameterError("beta must lie in (0, 1)")
        if self.group_sigmas is not None:
            gs = tuple(float(s) for s in self.group_sigmas)
            if any(not s > 0 for s in gs):
                raise InvalidParameterError("group sigmas must be positive")
            object.__setattr__(self, "group_sigmas", gs)

    @classmethod
    def with_total(cls, rho_total: float, t: int = 4, interval=(-100.0, 100.0), sigma: float = 1.0, beta: float = 0.05):
        return cls(tuple(interval), sigma, tuple(default_rho_schedule(rho_total, t)), beta)

    @property
    def t(self) -> int:
        return len(self.rho_schedule)

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget.zcdp(math.fsum(self.rho_schedule))

    def beta_schedule(self) -> list[float]:
        """Per-step failure budgets: beta/(4(t-1)) for t-1 steps, then beta/4."""
        t = self.t
        if t == 1:
            return [self.beta / 4]
        return [self.beta / (4 * (t - 1))] * (t - 1) + [self.beta / 4]


def _tail_margin(sigma: float, n: int, beta_s: float) -> float:
    return sigma * math.sqrt(2.0 * math.log(2.0 * n / beta_s))


def uvm_step(values, interval: IntervalEstimate, sigma: float, rho_s: float, beta_s: float, rng: RngLike) -> IntervalEstimate:
    """One private interval-shrinking step; rho_s-zCDP."""
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise EmptyDatasetError("cannot run a Coinpress step on an empty dataset")
    if not (sigma > 0 and rho_s > 0 and beta_s > 0):
        raise InvalidParameterError("sigma, rho_s and beta_s must be positive")
    margin = _tail_margin(sigma, n, beta_s)
    lo, hi = interval.lo - margin, interval.hi + margin
    projected_mean = float(np.mean(np.clip(x, lo, hi)))
    sensitivity = (interval.hi - interval.lo + 2.0 * margin) / n
    noise_var = sensitivity**2 / (2.0 * rho_s)
    z = projected_mean + float(gaussian_noise(math.sqrt(noise_var), rng))
    half = math.sqrt(2.0 * (sigma**2 / n + noise_var) * math.log(2.0 / beta_s))
    return IntervalEstimate(z - half, z + half)


class UVMResult(NamedTuple):
    estimate: float
    interval: IntervalEstimate


def uvm_rec(values, cfg: CoinpressConfig, rng: RngLike, sigma: Optional[float] = None) -> UVMResult:
    """Run ``cfg.t`` steps and return the midpoint of the last interval.

    Total cost is ``cfg.budget``, i.e. sum(rho_schedule)-zCDP.
    """
    sigma = cfg.sigma if sigma is None else sigma
    interval = IntervalEstimate(*cfg.interval)
    for rho_s, beta_s in zip(cfg.rho_schedule, cfg.beta_schedule()):
        interval = uvm_step(values, interval, sigma, rho_s, beta_s, rng)
    return UVMResult(interval.midpoint, interval)


def strat_coinpress(sample: StratifiedSample, cfg: CoinpressConfig, weights, rng: RngLike) -> MeanEstimateResult:
    """Coinpress on every stratum, recombined as sum(w_i * mu_i).

    Each stratum gets the full rho schedule (parallel composition) and a
    failure budget of beta/k. With an :class:`RngHandle`, stratum i uses
    substream i.
    """
    w = validate_weights(weights, sample.k)
    if cfg.group_sigmas is not None and len(cfg.group_sigmas) != sample.k:
        raise InvalidParameterError(f"{len(cfg.group_sigmas)} group sigmas for {sample.k} strata")
    beta_i = cfg.beta / sample.k
    per_group = []
    intervals = []
    for i, (gid, values) in enumerate(sample.strata):
        sigma_i = cfg.sigma if cfg.group_sigmas is None else cfg.group_sigmas[i]
        sub_cfg = CoinpressConfig(cfg.interval, sigma_i, cfg.rho_schedule, beta_i)
        sub_rng = rng.substream(i) if isinstance(rng, RngHandle) else rng
        est, iv = uvm_rec(values, sub_cfg, sub_rng)
        per_group.append((gid, est))
        intervals.append(iv)
    estimates = np.array([e for _, e in per_group])
    budget = compose_parallel(cfg.budget, partition_disjoint=True)
    return MeanEstimateResult(float(np.dot(w, estimates)), per_group, budget, {"intervals": intervals, "weights": w})


def holdout_weights(sample: StratifiedSample, public_holdout: StratifiedSample) -> np.ndarray:
    counts = dict(zip(public_holdout.group_ids, public_holdout.sizes))
    missing = [gid for gid in sample.group_ids if gid not in counts]
    if missing:
        raise MissingGroupWeightError(missing[0])
    w = np.array([counts[gid] for gid in sample.group_ids], dtype=float)
    return w / w.sum()


def pub_strat_coinpress(sample: StratifiedSample, cfg: CoinpressConfig, public_holdout: StratifiedSample, rng: RngLike) -> MeanEstimateResult:
    """:func:`strat_coinpress` with weights estimated from a public holdout."""
    return strat_coinpress(sample, cfg, holdout_weights(sample, public_holdout), rng)


def parity_error(truth: Sequence[float], estimate: Sequence[float], omega: Optional[float] = None) -> float:
    """Normalized parity error over k groups plus a trailing global entry.

    ``truth`` and ``estimate`` hold the k group values followed by the
    population value. ``omega`` weights the population term and defaults
    to 1/k.
    """
    f = np.asarray(truth, dtype=float).ravel()
    m = np.asarray(estimate, dtype=float).ravel()
    if f.shape != m.shape or f.size < 2:
        raise InvalidParameterError("truth and estimate need equal length k+1 >= 2")
    if np.any(f == 0):
        bad = [int(i) for i in np.flatnonzero(f == 0)]
        raise UndefinedNormalizationError(f"truth entries {bad} are zero; relative error undefined")
    k = f.size - 1
    omega = 1.0 / k if omega is None else float(omega)
    rel = np.abs((f - m) / f)
    return float(omega * rel[-1] + rel[:-1].sum())


parity_error_coinpress = parity_error
