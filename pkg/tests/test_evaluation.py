import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kexpfam import (DegenerateCorrelationError, DimensionCapError, FittedModel, FoldSizeError,
                     GaussianMixture, Grid, IsotropicGaussian, KdeModel, KernelSpec, TrueDensity,
                     correlation, cross_validate, fold_indices, kde_cross_validate, kde_fit,
                     kl_sup_norm_bound, quadrature_divergences, score_objective)


class Shifted:
    """Wrap a density model and add a constant to its log-density."""

    def __init__(self, inner, shift):
        self.inner, self.shift = inner, shift

    def log_density(self, Z):
        return self.inner.log_density(Z) + self.shift

    def grad_log_density(self, Z):
        return self.inner.grad_log_density(Z)

    def laplacian_diag_log_density(self, Z):
        return self.inner.laplacian_diag_log_density(Z)


class LogFunction:
    """Unnormalized density ``exp(f) q0`` from a plain function ``f``."""

    def __init__(self, f, base):
        self.f, self.base = f, base

    def log_density(self, Z):
        return self.f(Z) + self.base.log_density(Z)


def random_model(seed, d=2, n=15):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    return FittedModel(rng.normal(), rng.standard_normal(n * d) * 0.3, X,
                       KernelSpec.gaussian_poly2(1.2), IsotropicGaussian.standard(d, 2.0), 0.1)


class TestScoreObjective:
    @pytest.mark.parametrize("d", [1, 4])
    def test_standard_normal_expectation(self, d):
        Z = np.random.default_rng(d).standard_normal((100_000, d))
        value, se = score_objective(TrueDensity.std_normal(d), Z, return_se=True)
        assert abs(value + d / 2) <= 3 * se

    def test_truth_beats_shifted_copy(self):
        Z = np.random.default_rng(0).standard_normal((100_000, 2))
        true = score_objective(TrueDensity.std_normal(2), Z)
        for shift in ([1.0, 0.0], [0.0, -1.0], [0.7, 0.7]):
            assert score_objective(TrueDensity.gaussian(shift), Z) > true

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-50, 50))
    def test_constant_shift_invariance(self, seed, c):
        m = random_model(seed)
        Z = np.random.default_rng(seed + 1).standard_normal((200, 2))
        assert abs(score_objective(Shifted(m, c), Z) - score_objective(m, Z)) <= 1e-12

    def test_matches_analytic_gaussian_formula(self):
        # N(mu, s^2): sum_i E_p0[0.5 (x_i - mu_i)^2 / s^4 - 1/s^2] under p0 = N(0, I)
        rng = np.random.default_rng(3)
        Z = rng.standard_normal((500, 3))
        mu, s = np.array([0.2, -0.1, 0.4]), 1.7
        expected = np.mean(np.sum(0.5 * (Z - mu) ** 2 / s**4 - 1 / s**2, axis=1))
        assert score_objective(GaussianMixture(mu[None], s), Z) == pytest.approx(expected, rel=1e-13)


class TestCorrelation:
    def test_self_correlation(self):
        Z = np.random.default_rng(0).standard_normal((10_000, 2))
        t = TrueDensity.std_normal(2)
        assert abs(correlation(t, t, Z) - 1.0) <= 1e-12

    def test_scale_invariance(self):
        Z = np.random.default_rng(1).standard_normal((10_000, 1))
        t = TrueDensity.std_normal(1)
        assert abs(correlation(Shifted(t, math.log(7.0)), t, Z) - 1.0) <= 1e-12

    def test_far_apart_gaussians(self):
        Z = np.random.default_rng(2).standard_normal((10_000, 1)) + 4.0
        value = correlation(TrueDensity.std_normal(1), TrueDensity.gaussian([4.0]), Z)
        assert 0.0 < value < 0.1

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-30, 30), st.floats(-30, 30))
    def test_scale_invariance_property(self, seed, c1, c2):
        m = random_model(seed)
        truth = TrueDensity.gaussian([0.3, -0.2], 1.1)
        Z = np.random.default_rng(seed).standard_normal((2000, 2))
        base = correlation(m, truth, Z)
        assert abs(correlation(Shifted(m, c1), Shifted(truth, c2), Z) - base) <= 1e-12
        assert -1.0 <= base <= 1.0

    def test_degenerate(self):
        class Zero:
            def log_density(self, Z):
                return np.full(len(Z), -np.inf)

        Z = np.zeros((5, 1))
        with pytest.raises(DegenerateCorrelationError):
            correlation(Zero(), TrueDensity.std_normal(1), Z)


class TestKde:
    def test_single_sample(self):
        h = 0.4
        k = kde_fit([[1.0, -2.0, 0.5]], h)
        assert k.log_density([1.0, -2.0, 0.5]) == pytest.approx(-1.5 * math.log(2 * math.pi * h * h), rel=1e-14)
        np.testing.assert_array_equal(k.grad_log_density([1.0, -2.0, 0.5]), np.zeros(3))

    def test_integrates_to_one(self):
        k = kde_fit(np.random.default_rng(0).standard_normal((30, 1)), 0.3)
        x = np.linspace(-8, 8, 8001)
        assert np.trapezoid(np.exp(k.log_density(x[:, None])), x) == pytest.approx(1.0, abs=1e-9)

    def test_finite_in_far_tails(self):
        k = kde_fit(np.random.default_rng(0).standard_normal((30, 2)), 0.2)
        lp, g, lap = k.log_terms(np.array([[40.0, -35.0]]))
        assert np.isfinite(lp).all() and np.isfinite(g).all() and np.isfinite(lap).all()

    def test_derivatives_finite_difference(self):
        rng = np.random.default_rng(1)
        k = kde_fit(rng.standard_normal((25, 2)), 0.5)
        step = 1e-4
        for z in rng.standard_normal((30, 2)) * 1.5:
            _, g, lap = k.log_terms(z)
            for i in range(2):
                e = np.zeros(2)
                e[i] = step
                lp, l0, lm = k.log_density(z + e), k.log_density(z), k.log_density(z - e)
                assert abs(g[i] - (lp - lm) / (2 * step)) <= 1e-5 * (1 + abs(g[i]))
                fd2 = (k.grad_log_density(z + e)[i] - k.grad_log_density(z - e)[i]) / (2 * step)
                assert abs(lap[i] - fd2) <= 1e-5 * (1 + abs(lap[i]))

    def test_cv_bandwidth_score_near_truth(self):
        # seeded Monte-Carlo check; the estimate is sensitive to evaluation
        # points beyond the sample range when CV picks a small bandwidth
        rng = np.random.default_rng(0)
        X = rng.standard_normal((1000, 1))
        cv = kde_cross_validate(X, folds=5, seed=0)
        Z = rng.standard_normal((10_000, 1))
        assert abs(score_objective(KdeModel(X, cv.best_bandwidth), Z) + 0.5) <= 0.2

    def test_cv_prefers_reasonable_bandwidth(self):
        X = np.random.default_rng(4).standard_normal((400, 1))
        cv = kde_cross_validate(X, [0.01, 0.3, 5.0], folds=4, seed=1)
        assert cv.best_bandwidth == 0.3
        assert len(cv.table) == 12

    def test_invalid_bandwidth(self):
        with pytest.raises(ValueError):
            kde_fit([[0.0]], 0.0)


class TestQuadrature:
    def test_identical(self):
        t = TrueDensity.gaussian([0.2, -0.1], 0.9)
        out = quadrature_divergences(t, t, Grid.cube(-7, 7, 201, 2))
        assert abs(out["kl"]) <= 1e-8 and out["l1"] <= 1e-8 and out["hellinger"] <= 1e-8

    def test_gaussian_kl(self):
        out = quadrature_divergences(TrueDensity.gaussian([0.5]), TrueDensity.std_normal(1), Grid.cube(-8, 8, 2001, 1))
        assert out["kl"] == pytest.approx(0.125, abs=1e-3)
        assert out["A_model"] == pytest.approx(0.0, abs=1e-6)

    def test_log_partition_of_unnormalized_model(self):
        out = quadrature_divergences(Shifted(TrueDensity.std_normal(1), 2.5), TrueDensity.std_normal(1),
                                     Grid.cube(-9, 9, 3001, 1))
        assert out["A_model"] == pytest.approx(2.5, abs=1e-8)
        assert abs(out["kl"]) <= 1e-10

    def test_sup_norm_bound_and_inequalities(self):
        rng = np.random.default_rng(0)
        base = IsotropicGaussian.standard(1, 1.5)
        grid = Grid.cube(-8, 8, 1601, 1)
        nodes, _ = grid.nodes_and_weights()
        for _ in range(25):
            a, b = rng.normal(0, 0.4, 3), rng.normal(0, 0.4, 3)

            def f(Z, c=a):
                return c[0] * np.sin(Z[:, 0]) + c[1] * np.cos(2 * Z[:, 0]) + c[2] * np.tanh(Z[:, 0])

            def g(Z, c=b):
                return c[0] * np.sin(Z[:, 0]) + c[1] * np.cos(2 * Z[:, 0]) + c[2] * np.tanh(Z[:, 0])

            out = quadrature_divergences(LogFunction(g, base), LogFunction(f, base), grid)
            sup = float(np.max(np.abs(f(nodes) - g(nodes))))
            assert out["kl"] >= -1e-12
            assert out["kl"] <= kl_sup_norm_bound(sup)
            assert out["hellinger"] ** 2 <= out["l1"] + 1e-12

    def test_dimension_cap(self):
        with pytest.raises(DimensionCapError):
            quadrature_divergences(TrueDensity.std_normal(4), TrueDensity.std_normal(4), Grid.cube(-1, 1, 3, 4))


class TestMixture:
    def test_gauss_mix_matches_direct_formula(self):
        t = TrueDensity.gauss_mix(2)
        Z = np.random.default_rng(0).normal(0, 4, (50, 2))
        direct = np.log(0.5 * np.exp(-0.5 * np.sum((Z - 4) ** 2, 1)) + 0.5 * np.exp(-0.5 * np.sum((Z + 4) ** 2, 1))) - math.log(2 * math.pi)
        np.testing.assert_allclose(t.log_density(Z), direct, rtol=1e-12)

    def test_mixture_derivatives_finite_difference(self):
        t = GaussianMixture([[1.0, 0.0], [-1.0, 0.5], [0.0, -2.0]], 0.8, [0.2, 0.5, 0.3])
        step = 1e-5
        for z in np.random.default_rng(2).normal(0, 2, (20, 2)):
            _, g, lap = t.log_terms(z)
            for i in range(2):
                e = np.zeros(2)
                e[i] = step
                assert abs(g[i] - (t.log_density(z + e) - t.log_density(z - e)) / (2 * step)) <= 1e-6 * (1 + abs(g[i]))
                fd2 = (t.grad_log_density(z + e)[i] - t.grad_log_density(z - e)[i]) / (2 * step)
                assert abs(lap[i] - fd2) <= 1e-6 * (1 + abs(lap[i]))

    def test_sampling(self):
        Z = TrueDensity.gauss_mix(1).sample(20_000, np.random.default_rng(0))
        assert abs(np.mean(Z > 0) - 0.5) < 0.02


class TestCrossValidate:
    def test_single_grid_point(self):
        X = np.random.default_rng(0).standard_normal((40, 1))
        k = KernelSpec.gaussian_poly2(1.0)
        cv = cross_validate(X, [k], [0.1], IsotropicGaussian.standard(1, 2.0), folds=4)
        assert cv.best_kernel == k and cv.best_lambda == 0.1
        assert cv.best_score == pytest.approx(np.mean([r["heldout_score"] for r in cv.table]))

    def test_lambda_selected_in_interior(self):
        lams = [1e-3, 1e-2, 1e-1, 1.0, 10.0]
        base = IsotropicGaussian.standard(1, 2.0)
        interior = 0
        for seed in range(10):
            X = np.random.default_rng(seed).standard_normal((200, 1))
            cv = cross_validate(X, [KernelSpec.gaussian_poly2(1.0)], lams, base, folds=5, seed=seed)
            interior += cv.best_lambda not in (lams[0], lams[-1])
        assert interior >= 8

    def test_row_order_does_not_matter(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((60, 2))
        kernels = [KernelSpec.gaussian_poly2(s) for s in (0.5, 1.0, 2.0)]
        base = IsotropicGaussian.standard(2, 2.0)
        a = cross_validate(X, kernels, [0.01, 0.1, 1.0], base, seed=3)
        b = cross_validate(X[rng.permutation(60)], kernels, [0.01, 0.1, 1.0], base, seed=3)
        assert (a.best_kernel, a.best_lambda) == (b.best_kernel, b.best_lambda)
        assert a.table == b.table

    def test_threads_match_serial(self):
        X = np.random.default_rng(6).standard_normal((50, 2))
        kernels = [KernelSpec.gaussian_poly2(s) for s in (0.5, 1.0, 2.0)]
        base = IsotropicGaussian.standard(2, 2.0)
        a = cross_validate(X, kernels, [0.01, 0.1], base, seed=1)
        b = cross_validate(X, kernels, [0.01, 0.1], base, seed=1, threads=3)
        assert a.table == b.table

    @pytest.mark.parametrize("solver", ["showalter", "cutoff"])
    def test_spectral_solvers(self, solver):
        X = np.random.default_rng(7).standard_normal((50, 1))
        cv = cross_validate(X, [KernelSpec.gaussian_poly2(1.0)], [0.01, 0.1, 1.0],
                            IsotropicGaussian.standard(1, 2.0), solver=solver)
        assert math.isfinite(cv.best_score)
        assert len(cv.table) == 15

    def test_all_failures_fall_back_to_first_grid_point(self):
        X = np.random.default_rng(8).standard_normal((30, 2))
        kernels = [KernelSpec.gaussian(1.0), KernelSpec.gaussian(2.0)]
        cv = cross_validate(X, kernels, [0.1, 1.0], IsotropicGaussian.standard(2), size_cap=5)
        assert cv.best_score == math.inf
        assert cv.best_kernel == kernels[0] and cv.best_lambda == 0.1

    def test_table_and_csv(self, tmp_path):
        X = np.random.default_rng(9).standard_normal((30, 1))
        cv = cross_validate(X, [KernelSpec.gaussian_poly2(1.0)], [0.1, 1.0], IsotropicGaussian.standard(1), folds=3)
        path = tmp_path / "cv.csv"
        cv.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "family,sigma,r,c,beta,lambda,fold,heldout_score"
        assert len(lines) == 1 + 2 * 3
        assert cv.summary()["lambda"] == cv.best_lambda

    def test_fold_errors(self):
        with pytest.raises(FoldSizeError):
            fold_indices(np.zeros((3, 1)), 5, 0)
        with pytest.raises(FoldSizeError):
            fold_indices(np.zeros((3, 1)), 1, 0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(5, 80), st.integers(2, 5), st.integers(0, 1000))
    def test_folds_partition_samples(self, n, folds, seed):
        X = np.random.default_rng(seed).standard_normal((n, 2))
        splits = fold_indices(X, folds, seed)
        vals = np.concatenate([v for _, v in splits])
        assert sorted(vals.tolist()) == list(range(n))
        for tr, val in splits:
            assert len(val) >= 1
            assert set(tr.tolist()).isdisjoint(val.tolist())
            assert len(tr) + len(val) == n
