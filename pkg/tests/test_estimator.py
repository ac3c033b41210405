import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstgd.estimator import (P_MAX, BlendCoefficients, CategoryMoments, MemoryState,
                             category_moments, check_weights, compute_blend_equal_mean,
                             compute_blend_general, memoryless_variance, stratified_mean,
                             update_component, update_component_zero_mean, variance_sp)

pos = st.floats(1e-3, 1e3)
nonzero_mean = st.floats(0.05, 50).flatmap(lambda x: st.sampled_from([x, -x]))


def mom(E, V):
    return CategoryMoments(np.atleast_1d(float(E)), np.atleast_1d(float(V)), 5)


class TestGeneralBlend:
    def test_equal_moments_split_evenly(self):
        c = compute_blend_general(1.0, 1.0, 3.0, 3.0)
        assert c.p == pytest.approx(0.5) and c.q == pytest.approx(0.5)

    def test_hand_case(self):
        c = compute_blend_general(2.0, 1.0, 1.0, 2.0)
        assert c.p == pytest.approx(4 / 9, abs=1e-15)
        assert c.q == pytest.approx(1 / 9, abs=1e-15)
        assert c.p / (1 - c.q) == pytest.approx(0.5, rel=1e-12)
        assert not c.any_fallback

    def test_zero_variance_falls_back(self):
        c = compute_blend_general(1.0, 1.0, 0.0, 0.0)
        assert (c.p, c.q) == (0.0, 1.0) and c.fallback

    def test_negative_p_is_dropped_to_memoryless(self):
        c = compute_blend_general(1.0, -1.0, 1.0, 1.0)
        assert (c.p, c.q) == (0.0, 1.0) and c.clamped

    def test_large_p_clamped_keeps_ratio(self):
        # E grows 10x with negligible previous variance: raw p = 10
        c = compute_blend_general(1.0, 10.0, 1e-9, 1.0)
        assert c.clamped and c.p == P_MAX
        assert c.p / (1 - c.q) == pytest.approx(10.0, rel=1e-12)
        assert 0 <= c.q < 1

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            compute_blend_general(1.0, 1.0, -1.0, 1.0)

    def test_componentwise(self):
        c = compute_blend_general([1.0, 2.0], [1.0, 1.0], [3.0, 1.0], [3.0, 2.0])
        assert np.allclose(c.p, [0.5, 4 / 9]) and np.allclose(c.q, [0.5, 1 / 9])

    @settings(max_examples=300, deadline=None)
    @given(nonzero_mean, nonzero_mean, pos, pos)
    def test_ratio_and_ranges(self, Ep, Ec, Vp, Vc):
        c = compute_blend_general(Ep, Ec, Vp, Vc)
        assert c.p >= 0 and 0 <= c.q < 1 or c.fallback or (c.p == 0 and c.q == 1)
        if c.p > 0:
            # 1 - q cancels when q is near 1; allow for that conditioning
            tol = 1e-12 + 8 * np.finfo(float).eps / (1 - c.q)
            assert c.p / (1 - c.q) == pytest.approx(Ec / Ep, rel=tol)


class TestEqualMeanBlend:
    def test_substitution(self):
        c = compute_blend_equal_mean(1.0, 3.0)
        assert (c.p, c.q) == (0.75, 0.25)

    def test_symmetric(self):
        c = compute_blend_equal_mean(2.5, 2.5)
        assert (c.p, c.q) == (0.5, 0.5)

    def test_certain_fresh_signal_saturates(self):
        c = compute_blend_equal_mean(0.0, 1.0)
        assert (c.p, c.q) == (1.0, 0.0) and c.saturated

    def test_both_zero_falls_back(self):
        c = compute_blend_equal_mean(0.0, 0.0)
        assert (c.p, c.q) == (0.0, 1.0) and c.fallback

    @given(st.floats(0, 1e6), st.floats(0, 1e6))
    def test_sum_is_one(self, a, b):
        c = compute_blend_equal_mean(a, b)
        assert c.p + c.q == 1.0
        assert 0 <= c.p <= 1


class TestUpdates:
    def test_memoryless_returns_draw(self):
        g = np.array([3.0, -1.0])
        out = update_component(np.array([9.0, 9.0]), BlendCoefficients.memoryless(2), g)
        assert np.array_equal(out, g)

    def test_arithmetic(self):
        c = BlendCoefficients(0.5, 0.5)
        assert update_component(np.array([0.5]), c, np.array([1.5]))[0] == 1.0
        assert update_component_zero_mean(np.zeros(1), c, np.array([2.0]), np.array([1.0]))[0] == 0.5

    def test_centered_draw_vanishes(self):
        c = BlendCoefficients(0.3, 0.7)
        assert np.all(update_component_zero_mean(np.zeros(3), c, np.ones(3), np.ones(3)) == 0)

    @given(st.floats(-10, 10), st.floats(0, 1))
    def test_fixed_point(self, g, p):
        c = BlendCoefficients(p, 1 - p)
        assert update_component(np.array([g]), c, np.array([g]))[0] == pytest.approx(g)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            update_component(np.zeros(2), BlendCoefficients(0.5, 0.5), np.zeros(3))
        with pytest.raises(ValueError):
            update_component_zero_mean(np.zeros(2), BlendCoefficients(0.5, 0.5), np.zeros(2), np.zeros(1))


class TestStratifiedMean:
    def test_add_back(self):
        state = MemoryState(np.array([[1.0], [3.0]]), np.zeros((2, 1)), np.zeros((2, 1)))
        assert stratified_mean([0.5, 0.5], state, means=True)[0] == 2.0

    def test_single_stratum(self):
        assert stratified_mean([1.0], np.array([[2.0]]), np.array([[0.5]]))[0] == 2.5

    def test_memoryless_equals_classical_stratified_mean(self):
        from mstgd.data import gen_uniform_population, make_rng, draw_stratified
        pop = gen_uniform_population([(0, 10)], seed=3)
        picks = draw_stratified(pop, 1, make_rng(0, "t"))
        G = MemoryState.zeros(4, 1)
        for j, ix in enumerate(picks):
            G.components[j] = update_component(G.components[j], BlendCoefficients.memoryless(1),
                                               pop.values[0, ix[0]])
        oracle = sum(0.25 * pop.values[0, ix[0], 0] for ix in picks)
        assert stratified_mean(pop.weights, G)[0] == pytest.approx(oracle, abs=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            stratified_mean([0.5, 0.5], np.zeros((3, 1)))

    def test_zero_state(self):
        s = MemoryState.zeros(3, 4)
        assert s.components.shape == (3, 4) and not s.components.any() and s.iteration == 0


class TestVarianceSp:
    def test_equal_moments_halve(self):
        assert variance_sp([mom(1, 4)], [mom(1, 4)], [1.0])[0] == pytest.approx(2.0)

    def test_hand_case(self):
        assert variance_sp([mom(2, 1)], [mom(1, 2)], [1.0])[0] == pytest.approx(2 / 9, abs=1e-15)

    def test_degenerate_flagged(self):
        v, flags = variance_sp([mom(1, 0)], [mom(1, 0)], [1.0], with_flags=True)
        assert v[0] == 0 and flags.all()

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.tuples(nonzero_mean, nonzero_mean, pos, pos), min_size=1, max_size=5))
    def test_strictly_below_memoryless(self, cats):
        w = np.full(len(cats), 1 / len(cats))
        prev = [mom(Ep, Vp) for Ep, _, Vp, _ in cats]
        cur = [mom(Ec, Vc) for _, Ec, _, Vc in cats]
        assert np.all(variance_sp(prev, cur, w) < memoryless_variance(cur, w))


class TestMoments:
    def test_unbiased_variance(self):
        m = category_moments(np.array([[1.0], [2.0], [3.0]]))
        assert m.mean[0] == 2.0 and m.variance[0] == 1.0 and m.sample_count == 3

    def test_single_sample_zero_variance(self):
        assert category_moments(np.array([[4.0, 5.0]])).variance.tolist() == [0.0, 0.0]

    def test_invalid(self):
        with pytest.raises(ValueError):
            CategoryMoments(np.zeros(1), -np.ones(1), 1)
        with pytest.raises(ValueError):
            CategoryMoments(np.zeros(1), np.ones(1), 0)
        with pytest.raises(ValueError):
            category_moments(np.empty((0, 2)))

    def test_weights(self):
        check_weights([0.25] * 4)
        with pytest.raises(ValueError):
            check_weights([0.5, 0.6])
        with pytest.raises(ValueError):
            check_weights([1.5, -0.5])
