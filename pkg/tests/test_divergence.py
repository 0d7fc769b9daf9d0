import numpy as np
import pytest
from scipy import stats

from smiling.diffusion import DiffusionSchedule, make_gaussian_score_fn
from smiling.divergence import (
    ds_divergence_gaussian,
    ds_divergence_mc,
    hellinger_grid,
    naive_vs_corrected_gap,
)


def near_continuous(T=1.0) -> DiffusionSchedule:
    return DiffusionSchedule(T=T, n_steps=2000, t_min=1e-6)


class TestDsMc:
    def test_identical_scores_give_exact_zero(self):
        sched = near_continuous()
        score = make_gaussian_score_fn(np.zeros(1), 1.0)
        samples = np.random.default_rng(0).standard_normal((100, 1))
        est = ds_divergence_mc(score, score, samples, sched, 5000,
                               np.random.default_rng(1))
        assert est.value == 0.0
        assert est.std_error == 0.0

    def test_equal_variance_closed_form(self):
        sched = near_continuous()
        rng = np.random.default_rng(2)
        samples = rng.standard_normal((200_000, 1))
        est = ds_divergence_mc(make_gaussian_score_fn(np.zeros(1), 1.0),
                               make_gaussian_score_fn(np.ones(1), 1.0),
                               samples, sched, 200_000, rng)
        target = (1 - np.exp(-2.0)) / 2.0
        assert abs(est.value - target) < 3 * est.std_error
        assert est.value == pytest.approx(0.43233, abs=0.01)

    def test_quadratic_scaling_of_score_difference(self):
        sched = near_continuous()
        rng = np.random.default_rng(3)
        samples = rng.standard_normal((50_000, 1))
        base = make_gaussian_score_fn(np.zeros(1), 1.0)

        def plus_delta(scale):
            def fn(x, t):
                return base(x, t) + scale * 0.5
            return fn

        e1 = ds_divergence_mc(base, plus_delta(1.0), samples, sched, 50_000,
                              np.random.default_rng(4))
        e2 = ds_divergence_mc(base, plus_delta(2.0), samples, sched, 50_000,
                              np.random.default_rng(5))
        assert e2.value == pytest.approx(4 * e1.value, rel=0.05)

    def test_empty_samples_rejected(self):
        sched = near_continuous()
        score = make_gaussian_score_fn(np.zeros(1), 1.0)
        with pytest.raises(ValueError):
            ds_divergence_mc(score, score, np.zeros((0, 1)), sched, 10,
                             np.random.default_rng(0))

    def test_asymmetry(self):
        sched = DiffusionSchedule(T=1.0, n_steps=500, t_min=1e-3)
        a = ds_divergence_gaussian(np.zeros(1), 1.0, np.array([2.0]), 0.25, sched)
        b = ds_divergence_gaussian(np.array([2.0]), 0.25, np.zeros(1), 1.0, sched)
        assert abs(a - b) > 0.1


class TestDsGaussian:
    def test_identical_distributions_zero(self):
        sched = near_continuous()
        assert ds_divergence_gaussian(np.ones(1), 0.7, np.ones(1), 0.7, sched) == 0.0

    def test_unit_mean_shift_value(self):
        sched = near_continuous()
        v = ds_divergence_gaussian(np.zeros(1), 1.0, np.ones(1), 1.0, sched)
        assert v == pytest.approx((1 - np.exp(-2.0)) / 2.0, abs=1e-4)
        assert v == pytest.approx(0.43233, abs=1e-4)

    def test_cross_check_with_mc_unequal_variance(self):
        sched = near_continuous()
        rng = np.random.default_rng(6)
        samples = rng.standard_normal((200_000, 1))
        est = ds_divergence_mc(make_gaussian_score_fn(np.zeros(1), 1.0),
                               make_gaussian_score_fn(np.ones(1), 0.25),
                               samples, sched, 200_000, rng)
        cf = ds_divergence_gaussian(np.zeros(1), 1.0, np.ones(1), 0.25, sched)
        assert abs(est.value - cf) < 3 * est.std_error

    def test_nonnegative_and_zero_iff_equal(self):
        sched = near_continuous()
        rng = np.random.default_rng(7)
        for _ in range(20):
            m1, m2 = rng.uniform(-2, 2, 2)
            s1, s2 = rng.uniform(0.2, 3.0, 2)
            v = ds_divergence_gaussian(np.array([m1]), s1, np.array([m2]), s2, sched)
            assert v >= 0.0
            if abs(m1 - m2) > 1e-3 or abs(s1 - s2) > 1e-3:
                assert v > 0.0

    def test_invalid_variance_rejected(self):
        sched = near_continuous()
        with pytest.raises(ValueError):
            ds_divergence_gaussian(np.zeros(1), -1.0, np.zeros(1), 1.0, sched)

    def test_multivariate_mean_shift(self):
        # With equal variances the value decomposes over coordinates.
        sched = near_continuous()
        v2 = ds_divergence_gaussian(np.zeros(2), 1.0, np.array([1.0, 1.0]), 1.0, sched)
        v1 = ds_divergence_gaussian(np.zeros(1), 1.0, np.ones(1), 1.0, sched)
        assert v2 == pytest.approx(2 * v1, rel=1e-10)


class TestHellinger:
    def test_equal_densities_zero(self):
        grid = np.linspace(-5, 5, 2001)
        assert hellinger_grid(stats.norm.pdf, stats.norm.pdf, grid) == 0.0

    def test_gaussian_closed_form(self):
        grid = np.arange(-8.0, 9.0, 1e-3)
        h = hellinger_grid(lambda x: stats.norm.pdf(x),
                           lambda x: stats.norm.pdf(x, loc=1.0), grid)
        assert h == pytest.approx(1 - np.exp(-1.0 / 8.0), abs=1e-4)
        assert h == pytest.approx(0.11750, abs=1e-4)

    def test_bounded_for_normalized_densities(self):
        grid = np.linspace(-10, 10, 4001)
        rng = np.random.default_rng(8)
        for _ in range(5):
            m1, m2 = rng.uniform(-3, 3, 2)
            s1, s2 = rng.uniform(0.3, 2.0, 2)
            h = hellinger_grid(lambda x: stats.norm.pdf(x, m1, s1),
                               lambda x: stats.norm.pdf(x, m2, s2), grid)
            assert 0.0 <= h <= 1.0 + 1e-9

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ValueError):
            hellinger_grid(stats.norm.pdf, stats.norm.pdf, np.array([0.0, -1.0, 1.0]))


class TestDataProcessingSanity:
    def test_small_divergence_implies_small_hellinger(self):
        sched = DiffusionSchedule(T=3.0, n_steps=500, t_min=1e-3)
        pairs = [(0.0, 1.0, 0.05, 1.0), (0.0, 1.0, 0.0, 1.1), (0.5, 0.8, 0.45, 0.82)]
        grid = np.linspace(-9, 9, 6001)
        for m1, s1, m2, s2 in pairs:
            ds = ds_divergence_gaussian(np.array([m1]), s1, np.array([m2]), s2, sched)
            if ds < 0.01:
                h = hellinger_grid(lambda x: stats.norm.pdf(x, m1, np.sqrt(s1)),
                                   lambda x: stats.norm.pdf(x, m2, np.sqrt(s2)), grid)
                assert h < 0.05


class TestNaiveVsCorrected:
    def test_perfect_learner_model_both_small(self):
        sched = DiffusionSchedule(T=3.0, n_steps=500, t_min=0.01)
        truth = make_gaussian_score_fn(np.zeros(1), 1.0)
        states = np.random.default_rng(9).standard_normal((5000, 1))

        def g_e(x, t):
            return truth(x, t) + 0.3

        naive, corrected, naive_se, corr_se = naive_vs_corrected_gap(
            g_e, truth, truth, states, sched, 100_000, np.random.default_rng(10),
            with_stderr=True)
        assert naive < 3 * naive_se + 1e-9
        assert corrected < 3 * corr_se + 1e-9

    def test_shifted_expert_model_gap(self):
        sched = DiffusionSchedule(T=3.0, n_steps=500, t_min=0.01)
        truth = make_gaussian_score_fn(np.zeros(1), 1.0)
        states = np.random.default_rng(11).standard_normal((5000, 1))

        def g_pi(x, t):
            return truth(x, t) + 0.05

        errs = {}
        for shift in (1.0, 10.0):
            def g_e(x, t, c=shift):
                return truth(x, t) + c

            errs[shift] = naive_vs_corrected_gap(g_e, g_pi, truth, states, sched,
                                                 200_000, np.random.default_rng(12))
        assert errs[10.0][0] > errs[1.0][0]
        assert errs[10.0][0] / errs[10.0][1] >= 5.0

    def test_more_draws_shrink_stderr(self):
        sched = DiffusionSchedule(T=3.0, n_steps=100, t_min=0.01)
        truth = make_gaussian_score_fn(np.zeros(1), 1.0)
        states = np.random.default_rng(13).standard_normal((2000, 1))

        def g_e(x, t):
            return truth(x, t) + 1.0

        def g_pi(x, t):
            return truth(x, t) + 0.05

        *_, se_small_n, se_small_c = naive_vs_corrected_gap(
            g_e, g_pi, truth, states, sched, 20_000, np.random.default_rng(14),
            with_stderr=True)
        *_, se_big_n, se_big_c = naive_vs_corrected_gap(
            g_e, g_pi, truth, states, sched, 80_000, np.random.default_rng(15),
            with_stderr=True)
        assert se_big_n == pytest.approx(se_small_n / 2, rel=0.15)
        assert se_big_c == pytest.approx(se_small_c / 2, rel=0.15)
