"""Privacy budgets, noise mechanisms and composition accounting.

All logarithms are natural. Every sampler takes an explicit :class:`RngHandle`
so that a (seed, stream) pair fully determines the noise sequence.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np


class InvalidParameterError(ValueError):
    """A mechanism or budget parameter is outside its valid range."""


class IncompatibleBudgetError(ValueError):
    """Budgets of different kinds were composed without explicit conversion."""


class DisjointnessError(ValueError):
    """Parallel composition was requested over inputs not asserted disjoint."""


class BudgetKind(enum.Enum):
    PURE_DP = "pure_dp"
    APPROX_DP = "approx_dp"
    ZCDP = "zcdp"


@dataclass(frozen=True)
class PrivacyBudget:
    """An (epsilon, delta)-DP or rho-zCDP allowance.

    Use the ``pure``, ``approx`` and ``zcdp`` constructors rather than
    filling fields directly.
    """

    kind: BudgetKind
    epsilon: float = 0.0
    delta: float = 0.0
    rho: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is BudgetKind.ZCDP:
            if not self.rho > 0 or not math.isfinite(self.rho):
                raise InvalidParameterError(f"rho must be positive and finite, got {self.rho}")
            return
        if not self.epsilon > 0 or not math.isfinite(self.epsilon):
            raise InvalidParameterError(f"epsilon must be positive and finite, got {self.epsilon}")
        if self.kind is BudgetKind.PURE_DP and self.delta != 0:
            raise InvalidParameterError("pure DP budget cannot carry a delta")
        if not 0 <= self.delta < 1:
            raise InvalidParameterError(f"delta must lie in [0, 1), got {self.delta}")

    @classmethod
    def pure(cls, epsilon: float) -> "PrivacyBudget":
        return cls(BudgetKind.PURE_DP, epsilon=float(epsilon))

    @classmethod
    def approx(cls, epsilon: float, delta: float) -> "PrivacyBudget":
        return cls(BudgetKind.APPROX_DP, epsilon=float(epsilon), delta=float(delta))

    @classmethod
    def zcdp(cls, rho: float) -> "PrivacyBudget":
        return cls(BudgetKind.ZCDP, rho=float(rho))

    def __str__(self) -> str:
        if self.kind is BudgetKind.ZCDP:
            return f"{self.rho:g}-zCDP"
        if self.kind is BudgetKind.PURE_DP:
            return f"({self.epsilon:g}, 0)-DP"
        return f"({self.epsilon:g}, {self.delta:g})-DP"


@dataclass
class RngHandle:
    """Seeded random stream.

    Two handles with the same ``seed``, ``stream`` and substream path produce
    bit-identical draws. ``substream`` derives independent child streams, so
    per-stratum or per-trial noise does not depend on execution order.
    """

    seed: int
    stream: int = 0
    path: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise InvalidParameterError("seed must be a 64-bit unsigned integer")
        if self.stream < 0:
            raise InvalidParameterError("stream id must be non-negative")
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),) + tuple(self.path))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, index: int) -> "RngHandle":
        return RngHandle(self.seed, self.stream, self.path + (int(index),))


RngLike = Union[RngHandle, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngHandle):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngHandle or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class NoiseSample:
    """A single noise draw together with the distribution it came from."""

    value: float
    mechanism: str  # "laplace" or "gaussian"
    scale: float  # Laplace scale b, or Gaussian standard deviation


def _check_positive(name: str, x: float) -> float:
    x = float(x)
    if not (x > 0 and math.isfinite(x)):
        raise InvalidParameterError(f"{name} must be positive and finite, got {x}")
    return x


def laplace_scale(sensitivity: float, epsilon: float) -> float:
    return _check_positive("sensitivity", sensitivity) / _check_positive("epsilon", epsilon)


def gaussian_sd(sensitivity: float, rho: float) -> float:
    sensitivity = _check_positive("sensitivity", sensitivity)
    rho = _check_positive("rho", rho)
    return math.sqrt(sensitivity**2 / (2.0 * rho))


def laplace_noise(scale: float, rng: RngLike, size=None):
    """Draw centered Laplace noise by inverse-CDF transform of uniforms."""
    scale = _check_positive("scale", scale)
    u = as_generator(rng).random(size) - 0.5
    # 1 - 2|u| lies in (0, 1] since random() is in [0, 1)
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def gaussian_noise(sd: float, rng: RngLike, size=None):
    sd = _check_positive("sd", sd)
    return sd * as_generator(rng).standard_normal(size)


def laplace_sample(sensitivity: float, epsilon: float, rng: RngLike) -> NoiseSample:
    b = laplace_scale(sensitivity, epsilon)
    return NoiseSample(float(laplace_noise(b, rng)), "laplace", b)


def gaussian_sample(sensitivity: float, rho: float, rng: RngLike) -> NoiseSample:
    sd = gaussian_sd(sensitivity, rho)
    return NoiseSample(float(gaussian_noise(sd, rng)), "gaussian", sd)


def laplace_mechanism(value: float, sensitivity: float, epsilon: float, rng: RngLike) -> float:
    """Release ``value + Lap(sensitivity / epsilon)``; (epsilon, 0)-DP."""
    return float(value) + laplace_sample(sensitivity, epsilon, rng).value


def gaussian_mechanism(value: float, sensitivity: float, rho: float, rng: RngLike) -> float:
    """Release ``value + N(0, sensitivity**2 / (2 rho))``; rho-zCDP."""
    return float(value) + gaussian_sample(sensitivity, rho, rng).value


def compose_sequential(budgets: Sequence[PrivacyBudget]) -> PrivacyBudget:
    """Sum a list of same-kind budgets component-wise."""
    budgets = list(budgets)
    if not budgets:
        raise InvalidParameterError("cannot compose an empty list of budgets")
    kinds = {b.kind for b in budgets}
    if len(kinds) > 1:
        names = sorted(k.value for k in kinds)
        raise IncompatibleBudgetError(f"cannot compose mixed budget kinds {names}; convert first")
    kind = budgets[0].kind
    if kind is BudgetKind.ZCDP:
        return PrivacyBudget.zcdp(math.fsum(b.rho for b in budgets))
    eps = math.fsum(b.epsilon for b in budgets)
    if kind is BudgetKind.PURE_DP:
        return PrivacyBudget.pure(eps)
    return PrivacyBudget.approx(eps, math.fsum(b.delta for b in budgets))


def compose_parallel(budget: PrivacyBudget, partition_disjoint: bool) -> PrivacyBudget:
    """Cost of running one mechanism on each cell of a disjoint partition."""
    if not partition_disjoint:
        raise DisjointnessError("parallel composition requires disjoint inputs")
    return budget


def compose_parallel_many(budgets: Iterable[PrivacyBudget]) -> PrivacyBudget:
    """Parallel composition of possibly different same-kind budgets: the max."""
    budgets = list(budgets)
    if not budgets:
        raise InvalidParameterError("cannot compose an empty list of budgets")
    if len({b.kind for b in budgets}) > 1:
        raise IncompatibleBudgetError("cannot compose mixed budget kinds; convert first")
    key = (lambda b: b.rho) if budgets[0].kind is BudgetKind.ZCDP else (lambda b: (b.epsilon, b.delta))
    return max(budgets, key=key)


def pure_dp_to_zcdp(epsilon: float) -> PrivacyBudget:
    epsilon = _check_positive("epsilon", epsilon)
    return PrivacyBudget.zcdp(epsilon**2 / 2.0)


def zcdp_to_approx_dp(rho: float, delta: float) -> PrivacyBudget:
    """Convert rho-zCDP to (eps, delta)-DP through the pure-DP chain.

    Uses eps = sqrt(2 rho) * sqrt(2 ln(1/delta)). This is looser than the
    direct bound rho + 2 sqrt(rho ln(1/delta)), which is not used here.
    """
    rho = _check_positive("rho", rho)
    delta = float(delta)
    if not 0 < delta < 1:
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}")
    eps = math.sqrt(2.0 * rho) * math.sqrt(2.0 * math.log(1.0 / delta))
    return PrivacyBudget.approx(eps, delta)


def laplace_tail_probability(alpha: float) -> float:
    """Upper bound e^-alpha on Pr[|Y| >= alpha * b] for Y ~ Lap(b)."""
    alpha = float(alpha)
    if alpha < 0 or math.isnan(alpha):
        raise InvalidParameterError(f"alpha must be non-negative, got {alpha}")
    return math.exp(-alpha)
