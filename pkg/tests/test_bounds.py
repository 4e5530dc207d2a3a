import math
from dataclasses import replace

import numpy as np
import pytest

from fpld.bounds import (
    BoundEstimates,
    BoundParams,
    RegimeWarning,
    check_small_error,
    het_bandwidth_term,
    lower_bound_fpld,
    multiround_bound,
    multiround_remainder,
    upper_bound_homogeneous,
)


def params(**kw):
    base = dict(d=1.0, K=4, n=30000.0, m=64, V=256, B=4.0 * 256, L=1.0)
    base.update(kw)
    return BoundParams(**base)


class TestValidation:
    def test_rejects_bad_ranges(self):
        for kw in (
            dict(d=0), dict(K=0), dict(n=0.5), dict(m=0), dict(V=0),
            dict(delta=0.0), dict(delta=1.0), dict(rho=0.5), dict(eps_opt=-1),
            dict(cp=0.0), dict(cp=1.5), dict(T=0), dict(L=-1.0),
            dict(B=(1.0, 2.0)),  # wrong per-node length for K=4
        ):
            with pytest.raises(ValueError):
                params(**kw)

    def test_infinite_n_allowed(self):
        p = params(n=math.inf)
        assert upper_bound_homogeneous(p).statistical_term == 0.0

    def test_estimates_total_invariant(self):
        with pytest.raises(ValueError):
            BoundEstimates(1.0, 1.0, 1.0, 0.0, 2.0, True, True)


class TestUpperBound:
    def test_bandwidth_hand_value(self):
        est = upper_bound_homogeneous(params())
        assert est.bandwidth_term == pytest.approx(2.0 ** -8 / 24, rel=1e-12)
        assert est.bandwidth_term == pytest.approx(1.6276e-4, rel=1e-4)

    def test_terms_sum(self):
        est = upper_bound_homogeneous(params(eps_opt=0.1, eps_fit=0.2))
        assert est.total == pytest.approx(
            est.statistical_term + est.probe_term + est.bandwidth_term + 0.3
        )

    def test_large_budget_kills_bandwidth(self):
        est = upper_bound_homogeneous(params(B=1e6))
        assert est.bandwidth_term < 1e-300
        assert est.total == pytest.approx(est.statistical_term + est.probe_term)

    def test_doubling_K_halves_terms(self):
        a = upper_bound_homogeneous(params(K=4))
        b = upper_bound_homogeneous(params(K=8))
        assert b.statistical_term == pytest.approx(a.statistical_term / 2)
        assert b.bandwidth_term == pytest.approx(a.bandwidth_term / 2)

    def test_heterogeneous_rejected(self):
        with pytest.raises(ValueError):
            upper_bound_homogeneous(params(B=(256.0,) * 4))


class TestLowerBound:
    def test_hand_value(self):
        value = lower_bound_fpld(params(cp=0.9))
        assert value == pytest.approx(0.9 / 48 * 2.0 ** -8, rel=1e-12)
        assert value == pytest.approx(7.324e-5, rel=1e-3)

    def test_degenerate_cp_vacuous(self):
        assert lower_bound_fpld(params(cp=0.0)) == 0.0

    def test_below_upper_bandwidth(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = params(
                K=int(rng.integers(1, 64)),
                B=float(rng.uniform(1, 8)) * 256,
                L=float(rng.uniform(0.1, 8)),
                cp=float(rng.uniform(0.01, 1.0)),
            )
            assert lower_bound_fpld(p) <= upper_bound_homogeneous(p).bandwidth_term / 2 + 1e-300

    def test_regime_warning_below_V(self):
        with pytest.warns(RegimeWarning):
            lower_bound_fpld(params(B=100.0))


class TestMultiround:
    def test_T1_equals_homogeneous_bandwidth(self):
        p = params(T=1)
        assert multiround_bound(p) == upper_bound_homogeneous(p).bandwidth_term

    def test_round_ratio(self):
        p1 = params(T=1, B=2.0 * 256)
        p2 = params(T=2, B=2.0 * 256)
        assert multiround_bound(p2) / multiround_bound(p1) == pytest.approx(2.0 ** -4)

    def test_hand_value(self):
        p = params(T=3)
        assert multiround_bound(p) == pytest.approx((1 / 24) * 2.0 ** -24, rel=1e-12)
        assert multiround_bound(p) == pytest.approx(2.483e-9, rel=1e-3)

    def test_remainder_diagnostic(self):
        p = params(T=2)
        expected = math.log(256) ** 1.5 / 8 * 2.0 ** (-3 * 2 * 4)
        assert multiround_remainder(p) == pytest.approx(expected, rel=1e-12)


class TestHeterogeneous:
    def test_uniform_budgets_reduce_to_homogeneous(self):
        hom = upper_bound_homogeneous(params()).bandwidth_term
        het = het_bandwidth_term(params(B=(4.0 * 256,) * 4))
        assert het == pytest.approx(hom, rel=1e-15)

    def test_hand_value_uniform_clip(self):
        p = BoundParams(d=1, K=2, n=1000, m=4, V=1, B=(1.0, 3.0), L=1.0)
        assert het_bandwidth_term(p) == pytest.approx((1 / 24) * (0.25 + 2.0 ** -6), rel=1e-12)
        assert het_bandwidth_term(p) == pytest.approx(0.011068, rel=1e-4)

    def test_hand_value_per_node_clip(self):
        p = BoundParams(d=1, K=4, n=1000, m=4, V=256, B=(512.0,) * 4,
                        L=(1.0, 1.0, 4.0, 4.0))
        assert het_bandwidth_term(p) == pytest.approx(34 / 1536, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            BoundParams(d=1, K=4, n=1000, m=4, V=1, B=(1.0, 2.0, 3.0), L=1.0)


class TestSmallError:
    def test_hand_value_fails(self):
        p = params(K=4, B=1.0 * 256, c0=0.5)
        lhs = 0.5 * math.log(256) ** 1.5 / 2
        assert lhs == pytest.approx(3.265, rel=1e-3)
        se, _ = check_small_error(p, 0.5)
        assert not se

    def test_large_budget_passes(self):
        se, sep = check_small_error(params(B=20.0 * 256), 0.5)
        assert se and sep

    def test_large_K_passes(self):
        se, _ = check_small_error(params(K=10 ** 9, B=1.0 * 256), 0.5)
        assert se

    def test_cp_calibrated_threshold(self):
        # (SE') threshold scales with cp: tighter for degenerate targets
        loose = check_small_error(params(B=6.0 * 256, cp=1.0))[1]
        tight = check_small_error(params(B=6.0 * 256, cp=0.01))[1]
        assert loose and not tight


class TestMonotonicity:
    def test_total_monotone_in_each_parameter(self):
        rng = np.random.default_rng(1)
        grows = dict(K=("int", 1, 64), n=("float", 1, 10 ** 6), m=("int", 1, 10 ** 4),
                     B=("float", 256, 8 * 256))
        shrinks = dict(L=("float", 0.1, 8.0), rho=("float", 1.0, 10.0),
                       d=("float", 0.5, 100.0))
        for _ in range(200):
            base = params(
                K=int(rng.integers(1, 64)), n=float(rng.uniform(1, 1e6)),
                m=int(rng.integers(1, 1e4)), B=float(rng.uniform(1, 8)) * 256,
                L=float(rng.uniform(0.1, 8)), rho=float(rng.uniform(1, 10)),
                d=float(rng.uniform(0.5, 100)),
            )
            total = upper_bound_homogeneous(base).total
            for name, (kind, lo, hi) in grows.items():
                bumped = getattr(base, name) * 2
                if kind == "int":
                    bumped = int(bumped)
                assert upper_bound_homogeneous(replace(base, **{name: bumped})).total <= total * (1 + 1e-12)
            for name, (kind, lo, hi) in shrinks.items():
                bumped = getattr(base, name) * 2
                assert upper_bound_homogeneous(replace(base, **{name: bumped})).total >= total * (1 - 1e-12)
