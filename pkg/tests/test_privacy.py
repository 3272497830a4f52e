from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratdp.privacy import (
    BudgetKind,
    DisjointnessError,
    IncompatibleBudgetError,
    InvalidParameterError,
    PrivacyBudget,
    RngHandle,
    compose_parallel,
    compose_parallel_many,
    compose_sequential,
    gaussian_mechanism,
    gaussian_noise,
    gaussian_sample,
    gaussian_sd,
    laplace_mechanism,
    laplace_noise,
    laplace_sample,
    laplace_scale,
    laplace_tail_probability,
    pure_dp_to_zcdp,
    zcdp_to_approx_dp,
)


class TestBudget:
    def test_constructors(self):
        assert PrivacyBudget.pure(1.0).kind is BudgetKind.PURE_DP
        b = PrivacyBudget.approx(2.0, 1e-6)
        assert (b.epsilon, b.delta) == (2.0, 1e-6)
        assert PrivacyBudget.zcdp(0.5).rho == 0.5

    @pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
    def test_rejects_bad_epsilon(self, bad):
        with pytest.raises(InvalidParameterError):
            PrivacyBudget.pure(bad)
        with pytest.raises(InvalidParameterError):
            PrivacyBudget.zcdp(bad)

    def test_rejects_bad_delta(self):
        with pytest.raises(InvalidParameterError):
            PrivacyBudget.approx(1.0, 1.0)
        with pytest.raises(InvalidParameterError):
            PrivacyBudget(BudgetKind.PURE_DP, epsilon=1.0, delta=0.1)

    def test_str(self):
        assert str(PrivacyBudget.zcdp(0.5)) == "0.5-zCDP"
        assert str(PrivacyBudget.pure(1)) == "(1, 0)-DP"


class TestConversions:
    def test_pure_to_zcdp(self):
        assert pure_dp_to_zcdp(1.0) == PrivacyBudget.zcdp(0.5)
        assert pure_dp_to_zcdp(2.0).rho == 2.0

    @pytest.mark.parametrize(
        "rho, delta, eps",
        [(0.5, math.exp(-2), 2.0), (2.0, math.exp(-2), 4.0), (0.5, 1e-6, 5.2565)],
    )
    def test_zcdp_to_approx(self, rho, delta, eps):
        b = zcdp_to_approx_dp(rho, delta)
        assert b.kind is BudgetKind.APPROX_DP
        assert b.epsilon == pytest.approx(eps, abs=1e-4)
        assert b.delta == delta

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1])
    def test_zcdp_to_approx_rejects_delta(self, delta):
        with pytest.raises(InvalidParameterError):
            zcdp_to_approx_dp(0.5, delta)


class TestComposition:
    def test_sequential_sums(self):
        b = compose_sequential([PrivacyBudget.approx(0.5, 1e-6), PrivacyBudget.approx(0.25, 2e-6)])
        assert b == PrivacyBudget.approx(0.75, 3e-6)

    def test_mixed_kinds_rejected(self):
        with pytest.raises(IncompatibleBudgetError):
            compose_sequential([PrivacyBudget.pure(1), PrivacyBudget.zcdp(1)])
        with pytest.raises(IncompatibleBudgetError):
            compose_parallel_many([PrivacyBudget.pure(1), PrivacyBudget.zcdp(1)])

    def test_empty_rejected(self):
        with pytest.raises(InvalidParameterError):
            compose_sequential([])

    def test_parallel_identity(self):
        b = PrivacyBudget.zcdp(0.3)
        assert compose_parallel(b, partition_disjoint=True) is b
        with pytest.raises(DisjointnessError):
            compose_parallel(b, partition_disjoint=False)

    def test_parallel_many_is_max(self):
        bs = [PrivacyBudget.pure(0.5), PrivacyBudget.pure(2.0), PrivacyBudget.pure(1.0)]
        assert compose_parallel_many(bs) == PrivacyBudget.pure(2.0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=20))
    def test_sequential_additivity(self, rhos):
        b = compose_sequential([PrivacyBudget.zcdp(r) for r in rhos])
        assert b.rho == math.fsum(rhos)


class TestMechanisms:
    def test_scales(self):
        assert laplace_scale(2.0, 0.5) == 4.0
        assert gaussian_sd(1.0, 0.5) == 1.0
        with pytest.raises(InvalidParameterError):
            laplace_scale(1.0, 0.0)

    def test_samples_record_distribution(self):
        s = laplace_sample(1.0, 2.0, RngHandle(1))
        assert (s.mechanism, s.scale) == ("laplace", 0.5)
        g = gaussian_sample(2.0, 2.0, RngHandle(1))
        assert (g.mechanism, g.scale) == ("gaussian", 1.0)

    def test_determinism(self):
        a = laplace_noise(1.0, RngHandle(5, 2, (1,)), size=100)
        b = laplace_noise(1.0, RngHandle(5, 2, (1,)), size=100)
        c = laplace_noise(1.0, RngHandle(5, 2, (2,)), size=100)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert laplace_mechanism(3.0, 1.0, 1.0, RngHandle(9)) == laplace_mechanism(3.0, 1.0, 1.0, RngHandle(9))
        assert gaussian_mechanism(3.0, 1.0, 1.0, RngHandle(9)) == gaussian_mechanism(3.0, 1.0, 1.0, RngHandle(9))

    def test_substreams_independent_of_order(self):
        root = RngHandle(11)
        first = root.substream(3).generator.random(4)
        root.substream(0).generator.random(10)
        assert np.array_equal(RngHandle(11).substream(3).generator.random(4), first)

    def test_rejects_bad_rng(self):
        with pytest.raises(TypeError):
            laplace_noise(1.0, 42)

    def test_laplace_moments(self):
        b, n = 2.0, 10**6
        y = laplace_noise(b, RngHandle(0), size=n)
        assert abs(y.mean()) <= 5 * b * math.sqrt(2) / math.sqrt(n)
        assert y.var() == pytest.approx(2 * b * b, rel=0.02)

    def test_gaussian_variance(self):
        y = gaussian_noise(gaussian_sd(3.0, 0.5), RngHandle(0), size=10**6)
        assert y.var() == pytest.approx(9.0, rel=0.02)

    def test_laplace_mechanism_mean(self):
        gen = RngHandle(3).generator
        vals = [laplace_mechanism(10.0, 1.0, 1.0, gen) for _ in range(20000)]
        assert np.mean(vals) == pytest.approx(10.0, abs=5 * math.sqrt(2) / math.sqrt(20000))


class TestTail:
    def test_closed_form(self):
        assert laplace_tail_probability(0) == 1.0
        assert laplace_tail_probability(math.log(2)) == pytest.approx(0.5, rel=1e-15)
        with pytest.raises(InvalidParameterError):
            laplace_tail_probability(-1)

    def test_empirical_tail(self):
        n = 10**6
        y = np.abs(laplace_noise(1.0, RngHandle(2), size=n))
        p = math.exp(-3)
        assert np.mean(y >= 3) <= p + 3 * math.sqrt(p * (1 - p) / n)
