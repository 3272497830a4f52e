from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratdp.coinpress import (
    CoinpressConfig,
    IntervalEstimate,
    MissingGroupWeightError,
    UndefinedNormalizationError,
    default_rho_schedule,
    holdout_weights,
    parity_error,
    pub_strat_coinpress,
    strat_coinpress,
    uvm_rec,
    uvm_step,
)
from stratdp.estimation import StratifiedSample
from stratdp.privacy import InvalidParameterError, PrivacyBudget, RngHandle, gaussian_noise


def _normal(seed, mu, sd, n):
    return RngHandle(seed).generator.normal(mu, sd, n)


class TestSchedules:
    def test_default_rho(self):
        assert default_rho_schedule(0.8, 4) == pytest.approx([0.1, 0.1, 0.1, 0.5])
        assert default_rho_schedule(0.3, 1) == [0.3]
        assert math.fsum(default_rho_schedule(0.5, 7)) == pytest.approx(0.5, rel=1e-15)

    def test_beta_schedule(self):
        cfg = CoinpressConfig.with_total(0.5, t=4, beta=0.05)
        sched = cfg.beta_schedule()
        assert sched[:3] == [0.05 / 12] * 3 and sched[3] == 0.05 / 4
        assert math.fsum(sched) == pytest.approx(0.025)
        assert CoinpressConfig.with_total(0.5, t=1).beta_schedule() == [0.05 / 4]

    def test_budget(self):
        cfg = CoinpressConfig((-1, 1), 1.0, (0.1, 0.2, 0.3), 0.05)
        assert cfg.budget == PrivacyBudget.zcdp(math.fsum([0.1, 0.2, 0.3]))
        assert cfg.t == 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(interval=(1, 1), sigma=1.0, rho_schedule=(0.1,), beta=0.1),
            dict(interval=(0, 1), sigma=0.0, rho_schedule=(0.1,), beta=0.1),
            dict(interval=(0, 1), sigma=1.0, rho_schedule=(), beta=0.1),
            dict(interval=(0, 1), sigma=1.0, rho_schedule=(0.1, -0.1), beta=0.1),
            dict(interval=(0, 1), sigma=1.0, rho_schedule=(0.1,), beta=1.0),
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(InvalidParameterError):
            CoinpressConfig(**kwargs)


class TestStep:
    def test_margin_and_sensitivity(self):
        # with the noise drawn from the same stream, the output is reproducible by hand
        x = _normal(0, 0.0, 1.0, 100)
        margin = math.sqrt(2 * math.log(2000))
        assert margin == pytest.approx(3.89895, abs=1e-5)
        delta = (20 + 2 * margin) / 100
        assert delta == pytest.approx(0.277979, abs=1e-6)
        rho, beta = 0.5, 0.1
        iv = uvm_step(x, IntervalEstimate(-10, 10), 1.0, rho, beta, RngHandle(3))
        noise_var = delta**2 / (2 * rho)
        z = float(np.clip(x, -10 - margin, 10 + margin).mean()) + float(gaussian_noise(math.sqrt(noise_var), RngHandle(3)))
        half = math.sqrt(2 * (1 / 100 + noise_var) * math.log(2 / beta))
        assert iv.lo == pytest.approx(z - half, rel=1e-12)
        assert iv.hi == pytest.approx(z + half, rel=1e-12)

    def test_symmetric_about_center(self):
        iv = uvm_step(_normal(1, 3.0, 1.0, 500), IntervalEstimate(-50, 50), 1.0, 0.2, 0.05, RngHandle(1))
        assert iv.midpoint - iv.lo == pytest.approx(iv.hi - iv.midpoint, rel=1e-12)

    def test_noiseless_contains_mean(self):
        x = _normal(2, -1.5, 1.0, 1000)
        iv = uvm_step(x, IntervalEstimate(-100, 100), 1.0, 1e6, 0.05, RngHandle(2))
        assert iv.midpoint == pytest.approx(x.mean(), abs=1e-3)
        assert x.mean() in iv


class TestUvmRec:
    def test_t1_is_single_step(self):
        x = _normal(3, 0.5, 1.0, 1000)
        cfg = CoinpressConfig((-20, 20), 1.0, (0.4,), 0.08)
        est, iv = uvm_rec(x, cfg, RngHandle(7))
        ref = uvm_step(x, IntervalEstimate(-20, 20), 1.0, 0.4, 0.02, RngHandle(7))
        assert iv == ref and est == ref.midpoint

    def test_midpoint_inside(self):
        cfg = CoinpressConfig.with_total(0.1, t=5)
        for s in range(20):
            est, iv = uvm_rec(_normal(s, 2.0, 1.0, 300), cfg, RngHandle(s))
            assert est in iv

    def test_accuracy(self):
        cfg = CoinpressConfig.with_total(0.25, t=4, interval=(-100, 100), beta=0.05)
        errs = [abs(uvm_rec(_normal(s, 0.5, 1.0, 10**4), cfg, RngHandle(s, 1)).estimate - 0.5) for s in range(50)]
        assert np.mean(errs) <= 0.05


class TestStratCoinpress:
    cfg = CoinpressConfig.with_total(0.5, t=4)

    def test_k1_matches_uvm_rec(self):
        x = _normal(0, 1.0, 1.0, 5000)
        res = strat_coinpress(StratifiedSample([(0, x)]), self.cfg, [1.0], RngHandle(4))
        ref = uvm_rec(x, self.cfg, RngHandle(4).substream(0))
        assert res.global_estimate == ref.estimate
        assert res.budget_spent == self.cfg.budget

    def test_weighted_sum(self):
        s = StratifiedSample([(i, _normal(i, i, 1.0, 2000)) for i in range(3)])
        w = [0.2, 0.3, 0.5]
        res = strat_coinpress(s, self.cfg, w, RngHandle(1))
        assert res.global_estimate == pytest.approx(float(np.dot(w, res.group_estimates)), rel=1e-14)
        assert len(res.extra["intervals"]) == 3

    def test_per_stratum_beta(self):
        # beta/k per stratum: check against a manual run
        s = StratifiedSample([(0, _normal(1, 0, 1, 500)), (1, _normal(2, 1, 1, 500))])
        res = strat_coinpress(s, self.cfg, [0.5, 0.5], RngHandle(9))
        sub = CoinpressConfig(self.cfg.interval, self.cfg.sigma, self.cfg.rho_schedule, self.cfg.beta / 2)
        assert res.group_estimates[1] == uvm_rec(s.strata[1][1], sub, RngHandle(9).substream(1)).estimate

    def test_group_sigmas(self):
        s = StratifiedSample([(0, _normal(1, 0, 0.1, 500)), (1, _normal(2, 1, 3, 500))])
        cfg = CoinpressConfig(self.cfg.interval, 1.0, self.cfg.rho_schedule, self.cfg.beta, (0.1, 3.0))
        res = strat_coinpress(s, cfg, [0.5, 0.5], RngHandle(9))
        sub = CoinpressConfig(cfg.interval, 3.0, cfg.rho_schedule, cfg.beta / 2)
        assert res.group_estimates[1] == uvm_rec(s.strata[1][1], sub, RngHandle(9).substream(1)).estimate
        with pytest.raises(InvalidParameterError):
            strat_coinpress(StratifiedSample([(0, [1.0])]), cfg, [1.0], RngHandle(0))

    def test_identical_strata_match_global(self):
        # identically distributed strata, uniform weights: errors comparable to one global run
        strat_err, glob_err = [], []
        for s in range(50):
            x = _normal(s, 0.3, 1.0, 12000)
            sample = StratifiedSample([(i, x[i::4]) for i in range(4)])
            strat_err.append(abs(strat_coinpress(sample, self.cfg, [0.25] * 4, RngHandle(s, 1)).global_estimate - x.mean()))
            glob_err.append(abs(uvm_rec(x, self.cfg, RngHandle(s, 2)).estimate - x.mean()))
        # each stratum has n/4 points at the same rho, so noise sd per group is 4x; averaging 4 halves it
        assert np.mean(strat_err) == pytest.approx(2 * np.mean(glob_err), rel=0.5)

    def test_bad_weights(self):
        s = StratifiedSample([(0, [1.0]), (1, [2.0])])
        with pytest.raises(InvalidParameterError):
            strat_coinpress(s, self.cfg, [0.7, 0.7], RngHandle(0))


class TestPubStrat:
    cfg = CoinpressConfig.with_total(0.5, t=4)

    def test_proportional_holdout_matches_true_weights(self):
        s = StratifiedSample([(0, _normal(0, 0, 1, 300)), (1, _normal(1, 2, 1, 100))])
        hold = StratifiedSample([(1, np.zeros(10)), (0, np.zeros(30))])
        a = pub_strat_coinpress(s, self.cfg, hold, RngHandle(5))
        b = strat_coinpress(s, self.cfg, s.sizes / s.n, RngHandle(5))
        assert a.global_estimate == pytest.approx(b.global_estimate, rel=1e-14)

    def test_linear_in_weights(self):
        s = StratifiedSample([(0, _normal(0, 0, 1, 300)), (1, _normal(1, 2, 1, 300)), (2, _normal(2, 5, 1, 400))])
        base = strat_coinpress(s, self.cfg, [0.3, 0.3, 0.4], RngHandle(5))
        moved = strat_coinpress(s, self.cfg, [0.4, 0.2, 0.4], RngHandle(5))
        mu = base.group_estimates
        assert moved.global_estimate - base.global_estimate == pytest.approx(0.1 * (mu[0] - mu[1]), abs=1e-12)

    def test_missing_group(self):
        s = StratifiedSample([(0, [1.0]), (1, [2.0])])
        with pytest.raises(MissingGroupWeightError):
            holdout_weights(s, StratifiedSample([(0, [0.0])]))


class TestParity:
    def test_hand_example(self):
        assert parity_error([2, 4, 3], [1, 4, 3], omega=0.5) == pytest.approx(0.5)

    def test_zero_when_exact(self):
        assert parity_error([1, 2, 3, 2], [1, 2, 3, 2]) == 0.0

    def test_default_omega(self):
        assert parity_error([1, 1, 1, 2], [1, 1, 1, 3]) == pytest.approx(0.5 / 3)

    def test_zero_truth(self):
        with pytest.raises(UndefinedNormalizationError):
            parity_error([0, 1, 1], [0, 1, 1])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(0.1, 100), min_size=3, max_size=10),
        st.floats(0.01, 100),
        st.integers(0, 2**31),
    )
    def test_scale_invariance(self, truth, factor, seed):
        est = np.asarray(truth) * RngHandle(seed).generator.uniform(0.5, 1.5, len(truth))
        a = parity_error(truth, est)
        b = parity_error(np.asarray(truth) * factor, est * factor)
        assert b == pytest.approx(a, rel=1e-9, abs=1e-12)
