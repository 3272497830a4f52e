"""Digamma and the bound calculators for sums of log group sizes.

The error of the stratified estimator depends on the group sizes through
sum_i ln|G_i|. This module gives its worst case k ln(n/k), its expectation
k (psi(alpha) - psi(k alpha) + ln n) under symmetric Dirichlet group
proportions, the sparse-case reference (k - 1) + ln(n - k), a Monte Carlo
check of the expectation, and a fitter for the Dirichlet concentration.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .datagen import DirichletParams, sample_dirichlet
from .privacy import InvalidParameterError, RngLike, as_generator

__all__ = [
    "DirichletParams",
    "BoundReport",
    "AlphaSaturationWarning",
    "digamma",
    "thm1_bound",
    "lemma1_max",
    "sparse_ref",
    "expected_sum_log_mc",
    "fit_dirichlet_alpha",
    "bound_report",
]

# Bernoulli-number coefficients B_2j / (2j) of the asymptotic series
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_RECURRENCE_FLOOR = 10.0


def digamma(x: float) -> float:
    """psi(x) = d/dx ln Gamma(x) for x > 0.

    Shifts x upward with psi(x) = psi(x + 1) - 1/x until x >= 10, then sums
    ln x - 1/(2x) - sum_j B_2j / (2j x^2j).
    """
    x = float(x)
    if not x > 0 or math.isnan(x):
        raise ValueError(f"digamma is only defined here for x > 0, got {x}")
    if math.isinf(x):
        return math.inf
    shift = 0.0
    while x < _RECURRENCE_FLOOR:
        shift -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _ASYMPTOTIC:
        series += c * power
        power *= inv2
    return shift + math.log(x) - 0.5 / x - series


def thm1_bound(params: DirichletParams, n: int) -> float:
    """k (psi(alpha) - psi(k alpha) + ln n)."""
    if n < params.k:
        raise InvalidParameterError(f"need n >= k, got n={n}, k={params.k}")
    a, k = params.alpha, params.k
    return k * (digamma(a) - digamma(k * a) + math.log(n))


def lemma1_max(n: float, k: int) -> float:
    """Largest possible sum of ln g_i for positive g_i summing to n: k ln(n/k)."""
    if k < 1 or n < k:
        raise InvalidParameterError(f"need n >= k >= 1, got n={n}, k={k}")
    return k * math.log(n / k)


def sparse_ref(n: int, k: int) -> float:
    """(k - 1) + ln(n - k): the one-majority-group reference curve."""
    if k < 1 or n <= k:
        raise InvalidParameterError(f"need n > k >= 1, got n={n}, k={k}")
    return (k - 1) + math.log(n - k)


class MCEstimate(NamedTuple):
    mean: float
    sd: float
    trials: int

    @property
    def se(self) -> float:
        return self.sd / math.sqrt(self.trials)


def expected_sum_log_mc(params: DirichletParams, n: float, trials: int, rng: RngLike, batch: int = 20000) -> MCEstimate:
    """Monte Carlo estimate of E[sum_i ln(g_i n)] for g ~ D(alpha, k).

    Group sizes are the real numbers g_i * n (no rounding). ``sd`` is the
    per-trial standard deviation; ``se`` the standard error of the mean.
    """
    if trials < 1:
        raise InvalidParameterError("trials must be at least 1")
    gen = as_generator(rng)
    log_n = math.log(n)
    totals = np.empty(trials)
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        g = sample_dirichlet(params, gen, size=m)
        with np.errstate(divide="ignore"):
            totals[done : done + m] = np.log(g).sum(axis=1) + params.k * log_n
        done += m
    sd = float(totals.std(ddof=1)) if trials > 1 else 0.0
    return MCEstimate(float(totals.mean()), sd, trials)


class AlphaSaturationWarning(UserWarning):
    """The fitted alpha sits at an end of the search grid."""


def _dirichlet_loglik(log_p_sum: float, k: int, alpha: float) -> float:
    return (alpha - 1.0) * log_p_sum - k * math.lgamma(alpha) + math.lgamma(k * alpha)


def _sorted_distance(target_sorted: np.ndarray, alpha: float, draws: int, seed: int) -> float:
    gen = np.random.Generator(np.random.PCG64(seed))
    g = sample_dirichlet(DirichletParams(alpha, target_sorted.size), gen, size=draws)
    g = -np.sort(-g, axis=1)
    return float(np.abs(g - target_sorted).sum(axis=1).mean())


def fit_dirichlet_alpha(
    proportions: Sequence[float],
    grid: tuple[float, float, int] = (1e-3, 1e2, 25),
    method: str = "montecarlo",
    draws: int = 20000,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Fit the symmetric Dirichlet concentration to one proportion vector.

    Parameters
    ----------
    proportions : sequence of float
        Nonnegative group proportions summing to 1 (within 1e-6).
    grid : (lo, hi, steps)
        Log-spaced search grid. The search runs three passes, each one
        re-gridding the bracket around the previous optimum.
    method : {"montecarlo", "mle"}
        ``"montecarlo"`` picks the alpha whose draws, sorted in decreasing
        order, are closest in expected L1 distance to the sorted observed
        vector (common random numbers across the grid). ``"mle"`` maximizes
        the Dirichlet log-likelihood of the vector itself.
    floor : float
        Zero proportions are raised to this value before fitting.

    Warns
    -----
    AlphaSaturationWarning
        If the optimum lies at either end of the grid.
    """
    p = np.asarray(proportions, dtype=float).ravel()
    if p.size < 2:
        raise InvalidParameterError("need at least two proportions")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidParameterError("proportions must be nonnegative and sum to 1")
    lo, hi, steps = grid
    if not (0 < lo < hi) or steps < 3:
        raise InvalidParameterError(f"bad grid {grid}")
    p = np.maximum(p, floor)
    p = p / p.sum()
    k = p.size

    if method == "mle":
        log_p_sum = float(np.log(p).sum())

        def objective(a: float) -> float:
            return -_dirichlet_loglik(log_p_sum, k, a)

    elif method == "montecarlo":
        target = -np.sort(-p)

        def objective(a: float) -> float:
            return _sorted_distance(target, a, draws, seed)

    else:
        raise InvalidParameterError(f"unknown method {method!r}")

    a_lo, a_hi = float(lo), float(hi)
    best = a_lo
    for _ in range(3):
        pts = np.geomspace(a_lo, a_hi, int(steps))
        vals = [objective(a) for a in pts]
        i = int(np.argmin(vals))
        best = float(pts[i])
        a_lo = float(pts[max(i - 1, 0)])
        a_hi = float(pts[min(i + 1, len(pts) - 1)])
    if math.isclose(best, lo, rel_tol=1e-9) or math.isclose(best, hi, rel_tol=1e-9):
        warnings.warn(f"fitted alpha {best:g} is at the grid boundary [{lo:g}, {hi:g}]", AlphaSaturationWarning, stacklevel=2)
    return best


@dataclass(frozen=True)
class BoundReport:
    n: int
    k: int
    alpha: Optional[float]
    thm1: float
    lemma1_max: float
    sparse_ref: float


def bound_report(n: int, k: int, alpha: Optional[float] = None) -> BoundReport:
    thm = thm1_bound(DirichletParams(alpha, k), n) if alpha is not None else float("nan")
    return BoundReport(n, k, alpha, thm, lemma1_max(n, k), sparse_ref(n, k))
