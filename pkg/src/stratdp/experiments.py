"""Trial runners behind the CLI sweeps.

Every trial is a pure function of its arguments: the master seed and the
trial index pick the random stream, so trials can run in any order or in
worker processes and still produce identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coinpress import (
    CoinpressConfig,
    MissingGroupWeightError,
    UndefinedNormalizationError,
    holdout_weights,
    parity_error,
    strat_coinpress,
    uvm_rec,
)
from .datagen import MixtureSpec, gaussian_mixture
from .estimation import (
    ClipConfig,
    StratifiedSample,
    group_private_means,
    normalized_error,
    private_mean,
)
from .privacy import RngHandle, pure_dp_to_zcdp

MEAN_METHODS = ("laplace", "strat_laplace", "coinpress", "strat_coinpress", "pubstrat_coinpress")


@dataclass(frozen=True)
class CoinpressSettings:
    t: int = 4
    rho_weights: Optional[tuple[float, ...]] = None  # relative schedule; default {1,...,1,5}
    interval: tuple[float, float] = (-100.0, 100.0)
    beta: float = 0.05
    sigma: Optional[float] = None  # None: use the data's known/pooled sd
    per_group_sigma: bool = False

    def config(self, rho_total: float, sigma: float, group_sigmas=None) -> CoinpressConfig:
        if self.rho_weights is None:
            cfg = CoinpressConfig.with_total(rho_total, self.t, self.interval, sigma, self.beta)
        else:
            w = np.asarray(self.rho_weights, dtype=float)
            cfg = CoinpressConfig(self.interval, sigma, tuple(rho_total * w / w.sum()), self.beta)
        if group_sigmas is not None:
            cfg = CoinpressConfig(cfg.interval, cfg.sigma, cfg.rho_schedule, cfg.beta, tuple(group_sigmas))
        return cfg


def _scores(group_truth, global_truth, scale, group_est, global_est) -> tuple[float, float]:
    err = normalized_error(global_est, global_truth, scale)
    try:
        par = parity_error(list(group_truth) + [global_truth], list(group_est) + [global_est])
    except UndefinedNormalizationError:
        par = float("nan")
    return err, par


def mean_sweep_trial(
    n: int,
    k: int,
    alpha: float,
    epsilon: float,
    seed: int,
    trial: int,
    clip_R: float = 3.0,
    gamma: float = 0.05,
    coinpress: CoinpressSettings = CoinpressSettings(),
    holdout_frac: float = 0.1,
    equal_sizes: bool = False,
    methods: Sequence[str] = MEAN_METHODS,
) -> dict[str, tuple[float, float]]:
    """One draw of the Gaussian mixture and every estimator run on it.

    Returns ``{method: (normalized global error, parity error)}``. Errors
    are measured against the empirical means of the generated data and
    normalized by its pooled standard deviation. Laplace estimators run at
    ``epsilon``; Coinpress at rho = epsilon**2 / 2. Non-stratified methods
    use their global estimate as every group's estimate.
    """
    rng = RngHandle(seed, trial)
    data = gaussian_mixture(MixtureSpec(n, k, alpha, equal_sizes=equal_sizes), rng.substream(0))
    sample = data.sample
    values = sample.values()
    truth = float(values.mean())
    scale = float(values.std())
    group_truth = sample.group_means()
    out: dict[str, tuple[float, float]] = {}

    lap_rng = rng.substream(1)
    clip_cfg = ClipConfig(clip_R, gamma)
    if "laplace" in methods:
        est = private_mean(values, clip_cfg, epsilon, lap_rng.substream(0))
        out["laplace"] = _scores(group_truth, truth, scale, [est] * k, est)
    if "strat_laplace" in methods:
        res = group_private_means(sample, clip_cfg, epsilon, lap_rng)
        out["strat_laplace"] = _scores(group_truth, truth, scale, res.group_estimates, res.global_estimate)

    rho = pure_dp_to_zcdp(epsilon).rho
    cp_rng = rng.substream(2)
    sigma = coinpress.sigma if coinpress.sigma is not None else data.population_sd
    if "coinpress" in methods:
        est, _ = uvm_rec(values, coinpress.config(rho, sigma), cp_rng.substream(0))
        out["coinpress"] = _scores(group_truth, truth, scale, [est] * k, est)
    group_sigmas = data.sigmas if coinpress.per_group_sigma else None
    strat_cfg = coinpress.config(rho, sigma, group_sigmas)
    if "strat_coinpress" in methods:
        res = strat_coinpress(sample, strat_cfg, sample.sizes / sample.n, cp_rng)
        out["strat_coinpress"] = _scores(group_truth, truth, scale, res.group_estimates, res.global_estimate)
    if "pubstrat_coinpress" in methods and holdout_frac > 0:
        m = max(1, int(round(holdout_frac * n)))
        counts = rng.substream(3).generator.multinomial(m, data.mixture_weights)
        holdout = StratifiedSample([(i, np.zeros(int(c))) for i, c in enumerate(counts) if c > 0])
        try:
            w = holdout_weights(sample, holdout)
        except MissingGroupWeightError:
            out["pubstrat_coinpress"] = (float("nan"), float("nan"))
        else:
            res = strat_coinpress(sample, strat_cfg, w, cp_rng)
            out["pubstrat_coinpress"] = _scores(group_truth, truth, scale, res.group_estimates, res.global_estimate)
    return out


def coinpress_table_trial(
    values: np.ndarray,
    group_index: np.ndarray,
    k: int,
    epsilon: float,
    seed: int,
    trial: int,
    grid_id: int,
    coinpress: CoinpressSettings = CoinpressSettings(),
    holdout_frac: float = 0.0,
) -> dict[str, tuple[float, float]]:
    """Coinpress variants on one numeric column partitioned into ``k`` groups.

    ``group_index`` maps each value to its group in ``range(k)``. With a
    positive ``holdout_frac`` a random disjoint subset is set aside as the
    public holdout for the weight estimates; all methods then run on the
    remaining records. The known sigma is the pooled sample sd unless set.
    """
    rng = RngHandle(seed, trial, (grid_id,))
    if holdout_frac > 0:
        perm = rng.substream(3).generator.permutation(values.size)
        m = int(round(holdout_frac * values.size))
        hold, keep = perm[:m], np.sort(perm[m:])
    else:
        hold, keep = np.zeros(0, dtype=np.int64), np.arange(values.size)
    x, gi = values[keep], group_index[keep]
    present = [g for g in range(k) if np.any(gi == g)]
    sample = StratifiedSample([(g, x[gi == g]) for g in present])
    truth = float(x.mean())
    scale = float(x.std())
    group_truth = sample.group_means()
    kk = sample.k
    rho = pure_dp_to_zcdp(epsilon).rho
    sigma = coinpress.sigma if coinpress.sigma is not None else (scale if scale > 0 else 1.0)
    cfg = coinpress.config(rho, sigma)
    cp_rng = rng.substream(2)
    out = {}
    est, _ = uvm_rec(x, cfg, cp_rng.substream(0))
    out["coinpress"] = _scores(group_truth, truth, scale, [est] * kk, est)
    res = strat_coinpress(sample, cfg, sample.sizes / sample.n, cp_rng)
    out["strat_coinpress"] = _scores(group_truth, truth, scale, res.group_estimates, res.global_estimate)
    if holdout_frac > 0:
        hg = group_index[hold]
        holdout = StratifiedSample([(g, np.zeros(int(np.sum(hg == g)))) for g in present if np.any(hg == g)]) if hold.size else None
        try:
            if holdout is None:
                raise MissingGroupWeightError(present[0])
            w = holdout_weights(sample, holdout)
        except MissingGroupWeightError:
            out["pubstrat_coinpress"] = (float("nan"), float("nan"))
        else:
            res = strat_coinpress(sample, cfg, w, cp_rng)
            out["pubstrat_coinpress"] = _scores(group_truth, truth, scale, res.group_estimates, res.global_estimate)
    return out


def summarize(values: Sequence[float]) -> tuple[float, float, int]:
    """Mean and sd over finite values, plus the count of non-finite ones."""
    arr = np.asarray(values, dtype=float)
    ok = arr[np.isfinite(arr)]
    bad = int(arr.size - ok.size)
    if ok.size == 0:
        return math.nan, math.nan, bad
    sd = float(ok.std(ddof=1)) if ok.size > 1 else 0.0
    return float(ok.mean()), sd, bad
