import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpld.alloc import (
    AllocationPlan,
    InfeasibleBudgetError,
    integerize,
    inverse_weighted_baseline,
    kkt_oracle,
    objective_F,
    waterfill,
    waterfill_clipped,
)


class TestObjective:
    def test_zero_budget(self):
        w = np.array([1.0, 2.0, 3.0])
        assert objective_F(np.zeros(3), w, 16) == pytest.approx(w.sum() / 9)

    def test_hand_value(self):
        F = objective_F([256, 256, 768, 768], [1, 1, 16, 16], 256)
        assert F == pytest.approx(0.0625, rel=1e-12)

    def test_weight_scaling_linear(self):
        B = np.array([1.0, 2.0, 3.0])
        w = np.array([1.0, 4.0, 2.0])
        assert objective_F(B, 5 * w, 4) == pytest.approx(5 * objective_F(B, w, 4))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            objective_F([1.0, 2.0], [1.0], 4)


class TestWaterfill:
    def test_equal_weights_uniform(self):
        plan = waterfill(np.ones(5), 100.0, 16)
        assert np.allclose(plan.B, 20.0)

    def test_reference_instance(self):
        plan = waterfill([1, 1, 16, 16], 2048.0, 256)
        assert np.allclose(plan.B, [256, 256, 768, 768])

    def test_budget_conserved(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            K = int(rng.integers(1, 40))
            w = np.exp(rng.normal(0, 3, K))
            B_tot = float(rng.uniform(1, 1000))
            plan = waterfill(w, B_tot, int(rng.choice([1, 16, 256])))
            assert abs(plan.B.sum() - B_tot) < 1e-9 * max(1.0, B_tot)

    def test_doubling_one_weight_adds_half_V_direct_tilt(self):
        # V/2 extra bits enter through the node's own tilt term before the
        # geometric-mean renormalization spreads -V/(2K) over everyone
        V, K = 256, 4
        w = np.array([1.0, 2.0, 3.0, 4.0])
        a = waterfill(w, 1000.0, V)
        w2 = w.copy()
        w2[1] *= 2
        b = waterfill(w2, 1000.0, V)
        assert b.B[1] - a.B[1] == pytest.approx(V / 2 - V / (2 * K), rel=1e-12)
        for i in (0, 2, 3):
            assert b.B[i] - a.B[i] == pytest.approx(-V / (2 * K), rel=1e-9)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            waterfill([1.0, -1.0], 10.0, 4)
        with pytest.raises(ValueError):
            waterfill([1.0, 1.0], 0.0, 4)


class TestWaterfillClipped:
    def test_inactive_constraints_match_unclipped(self):
        w = [1.0, 2.0, 4.0]
        a = waterfill(w, 300.0, 16)
        b = waterfill_clipped(w, 300.0, 16, B_max=1000.0)
        assert np.allclose(a.B, b.B)

    def test_two_node_pinning_example(self):
        # unclipped tilt (V/2) log2(w/geomean) gives (-1.5, 3.5); the box
        # pins node 1 at 0 and hands the whole budget to node 2
        un = waterfill([1.0, 1024.0], 2.0, 1)
        assert np.allclose(un.B, [-1.5, 3.5])
        plan = waterfill_clipped([1.0, 1024.0], 2.0, 1, B_max=2.0)
        assert np.allclose(plan.B, [0.0, 2.0])
        assert plan.saturated.tolist() == [True, True]

    def test_saturated_cap_example(self):
        plan = waterfill_clipped([1.0, 1024.0], 2.0, 1, B_max=1.5)
        assert np.allclose(plan.B, [0.5, 1.5])
        assert plan.saturated.tolist() == [False, True]

    def test_infeasible(self):
        with pytest.raises(InfeasibleBudgetError):
            waterfill_clipped([1.0, 1.0], 10.0, 4, B_max=4.0)

    def test_budget_and_box_always_hold(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            K = int(rng.integers(2, 32))
            w = np.exp(rng.normal(0, 2.5, K))
            V = int(rng.choice([1, 16, 256]))
            B_tot = float(rng.uniform(0.2, 6.0)) * K * V
            B_max = float(rng.uniform(1.05, 4.0)) * B_tot / K
            plan = waterfill_clipped(w, B_tot, V, B_max)
            assert abs(plan.B.sum() - B_tot) <= 1e-9 * max(1.0, B_tot)
            assert np.all(plan.B >= -1e-9) and np.all(plan.B <= B_max + 1e-9)

    def test_interior_marginals_equal(self):
        w = np.exp(np.random.default_rng(2).normal(0, 2, 12))
        plan = waterfill_clipped(w, 50.0, 4, B_max=10.0)
        interior = ~plan.saturated
        marg = w[interior] * 2.0 ** (-2 * plan.B[interior] / 4)
        if interior.sum() > 1:
            assert np.max(marg) - np.min(marg) <= 1e-9 * np.max(marg)


class TestKKTOracle:
    def test_equal_weights_uniform(self):
        plan = kkt_oracle(np.ones(8), 64.0, 16)
        assert np.allclose(plan.B, 8.0, atol=1e-9)

    def test_reference_instance(self):
        plan = kkt_oracle([1, 1, 16, 16], 2048.0, 256)
        assert np.allclose(plan.B, [256, 256, 768, 768], atol=1e-6)

    def test_matches_active_set_on_random_instances(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(300):
            K = int(rng.integers(2, 48))
            w = np.exp(rng.normal(0, 2.5, K))
            V = int(rng.choice([1, 16, 256]))
            B_tot = float(rng.uniform(0.2, 6.0)) * K * V
            B_max = float(rng.uniform(1.05, 4.0)) * B_tot / K
            a = waterfill_clipped(w, B_tot, V, B_max)
            b = kkt_oracle(w, B_tot, V, B_max)
            worst = max(worst, float(np.max(np.abs(a.B - b.B))))
        assert worst <= 1e-6

    def test_budget_residual(self):
        plan = kkt_oracle(np.exp(np.random.default_rng(4).normal(0, 2, 20)), 500.0, 16,
                          B_max=100.0)
        assert abs(plan.B.sum() - 500.0) <= 1e-8

    def test_global_optimality_spot_check(self):
        rng = np.random.default_rng(5)
        w = np.exp(rng.normal(0, 2, 6))
        V, B_tot, B_max = 16, 300.0, 90.0
        opt = kkt_oracle(w, B_tot, V, B_max)
        F_opt = objective_F(opt.B, w, V)
        uniform = np.full(6, B_tot / 6)
        for _ in range(1000):
            y = rng.uniform(0, B_max, 6)
            y *= B_tot / y.sum()
            # shrink toward the uniform point until inside the box
            over = y > B_max
            alpha = 1.0
            if over.any():
                alpha = float(np.min((B_max - uniform[over]) / (y[over] - uniform[over])))
            cand = uniform + alpha * (y - uniform)
            assert F_opt <= objective_F(cand, w, V) + 1e-12


class TestInverseBaseline:
    def test_equal_weights_uniform(self):
        plan = inverse_weighted_baseline(np.ones(4), 40.0, 4)
        assert np.allclose(plan.B, 10.0)

    def test_sign_flipped_tilt(self):
        plan = inverse_weighted_baseline([1, 1, 16, 16], 2048.0, 256)
        assert np.allclose(plan.B, [768, 768, 256, 256])

    def test_objective_ordering(self):
        w = np.array([1.0, 1.0, 16.0, 16.0])
        V, B_tot = 256, 2048.0
        F_opt = objective_F(waterfill(w, B_tot, V).B, w, V)
        F_uni = objective_F(np.full(4, B_tot / 4), w, V)
        F_inv = objective_F(inverse_weighted_baseline(w, B_tot, V).B, w, V)
        assert F_opt <= F_uni <= F_inv

    def test_clips_at_zero_with_redistribution(self):
        plan = inverse_weighted_baseline([1.0, 10 ** 6], 4.0, 1)
        assert np.all(plan.B >= 0)
        assert plan.B.sum() == pytest.approx(4.0)


class TestIntegerize:
    def test_exact_multiples_round_trip(self):
        plan = waterfill([1, 1, 16, 16], 2048.0, 256)
        assert integerize(plan, 256).tolist() == [1, 1, 3, 3]

    def test_budget_never_exceeded(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            K = int(rng.integers(2, 16))
            w = np.exp(rng.normal(0, 2, K))
            V = int(rng.choice([16, 256]))
            B_tot = float(rng.uniform(0.5, 6.0)) * K * V
            plan = waterfill_clipped(w, B_tot, V)
            bits = integerize(plan, V)
            assert bits.sum() * V <= B_tot + 1e-9
            assert np.all(bits >= 0)

    def test_leftover_budget_spent(self):
        # rounding down leaves >= V bits of slack; repair should spend it
        plan = AllocationPlan(B=np.array([6.0, 6.0]), weights=np.array([1.0, 1.0]),
                              B_tot=12.0, B_max=None, saturated=np.zeros(2, bool))
        bits = integerize(plan, 4)
        assert bits.sum() * 4 == 12  # one node gets the extra coordinate
        assert sorted(bits.tolist()) == [1, 2]

    def test_respects_cap(self):
        plan = waterfill_clipped([1.0, 1024.0], 8.0, 1, B_max=5.0)
        bits = integerize(plan, 1)
        assert np.all(bits <= 5)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(0.01, 100.0), min_size=2, max_size=12),
    st.floats(1.0, 500.0),
    st.sampled_from([1, 4, 256]),
)
def test_waterfill_invariances(weights, B_tot, V):
    w = np.asarray(weights)
    plan = waterfill(w, B_tot, V)
    # permutation equivariance
    perm = np.random.default_rng(0).permutation(len(w))
    plan_p = waterfill(w[perm], B_tot, V)
    assert np.allclose(plan_p.B, plan.B[perm], atol=1e-8)
    # weight-scale invariance: only ratios to the geometric mean matter
    plan_s = waterfill(7.5 * w, B_tot, V)
    assert np.allclose(plan_s.B, plan.B, atol=1e-8)
