import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_instance
from kexpfam import (ConfigError, FilterSpec, InvalidInputError, assemble, filter_diagnostics,
                     filter_value, model_from_system, solve_spectral, solve_tikhonov)
from kexpfam.spectral import FILTERS, decompose
from oracles import spectral_by_whitening

def system(seed=5, n=20, d=2, sigma=0.5, lam=0.1):
    X, spec, base = small_instance(seed, n=n, d=d, sigma=sigma)
    return assemble(X, spec, base, lam)


class TestFilterValue:
    @pytest.mark.parametrize("lam", [0.01, 0.3, 2.0])
    def test_tikhonov_at_zero(self, lam):
        assert filter_value(FilterSpec("tikhonov", lam), 0.0) == pytest.approx(1 / lam, rel=1e-15)

    @pytest.mark.parametrize("lam", [0.01, 0.3, 2.0])
    def test_cutoff(self, lam):
        spec = FilterSpec("cutoff", lam)
        assert filter_value(spec, lam / 2) == 0.0
        assert filter_value(spec, 2 * lam) == pytest.approx(1 / (2 * lam), rel=1e-15)
        assert filter_value(spec, lam) == pytest.approx(1 / lam, rel=1e-15)

    @pytest.mark.parametrize("lam", [1e-3, 1.0, 50.0])
    def test_showalter_limit(self, lam):
        spec = FilterSpec("showalter", lam)
        assert filter_value(spec, 0.0) == 1 / lam
        mpmath = pytest.importorskip("mpmath")
        mpmath.mp.dps = 50
        a = mpmath.mpf("1e-12")
        exact = float((1 - mpmath.exp(-a / lam)) / a)
        assert filter_value(spec, 1e-12) == pytest.approx(exact, rel=1e-6)

    def test_vectorized(self):
        a = np.array([0.0, 0.5, 1.0, 4.0])
        for name in FILTERS:
            out = filter_value(FilterSpec(name, 0.7), a)
            assert out.shape == (4,)
            for k, v in enumerate(a):
                assert out[k] == filter_value(FilterSpec(name, 0.7), v)

    def test_negative_eigenvalue(self):
        with pytest.raises(InvalidInputError):
            filter_value(FilterSpec("tikhonov", 1.0), -1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from(FILTERS), st.floats(1e-4, 1e2), st.floats(0, 1e4))
    def test_monotone_shrinkage(self, name, lam, a):
        ag = a * filter_value(FilterSpec(name, lam), a)
        assert -1e-15 <= ag <= 1 + 1e-15

    @pytest.mark.parametrize("name", FILTERS)
    @pytest.mark.parametrize("lam", [1e-3, 0.1, 1.0])
    def test_qualification_bounds(self, name, lam):
        grid = np.linspace(0, 25.0, 20001)
        diag = filter_diagnostics(FilterSpec(name, lam), grid)
        assert diag["A_g"] <= 1 + 1e-12
        assert diag["B_g"] <= 1 + 1e-12
        assert diag["C_g"] <= 1 + 1e-12
        assert 0 <= diag["shrinkage_min"] and diag["shrinkage_max"] <= 1 + 1e-12
        # gamma_eta <= 1 for eta in {1/2, 1}: Tikhonov by AM-GM, cut-off since
        # the residual lives below lambda, Showalter since x^eta e^-x <= 1
        assert diag["gamma_0.5"] <= 1 + 1e-12
        assert diag["gamma_1"] <= 1 + 1e-12

    def test_spec_json(self):
        spec = FilterSpec("showalter", 0.25)
        assert spec.to_dict() == {"filter": "showalter", "lambda": 0.25}
        assert FilterSpec.from_dict(spec.to_dict()) == spec
        for bad in ({"filter": "landweber", "lambda": 1.0}, {"filter": "cutoff"},
                    {"filter": "cutoff", "lambda": -1.0}):
            with pytest.raises(ConfigError):
                FilterSpec.from_dict(bad)


class TestSolveSpectral:
    def test_tikhonov_coefficients_match_linear_system(self):
        for seed in range(5):
            sys = system(seed, n=int(10 + 4 * seed), d=2)
            assert np.linalg.cond(sys.H) < 1e9
            alpha, beta = solve_tikhonov(sys)
            ref = np.r_[alpha, beta]
            m = solve_spectral(sys, FilterSpec("tikhonov", sys.lam))
            assert np.linalg.norm(m.theta - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_tikhonov_agrees_in_rkhs_norm_when_gram_is_singular(self):
        # dense 1-d samples make G nearly singular; coefficients are then not
        # unique but the function is, so compare ||theta - theta'||_B
        for seed in range(5):
            sys = system(seed, n=int(10 + 4 * seed), d=1)
            alpha, beta = solve_tikhonov(sys)
            ref = np.r_[alpha, beta]
            m = solve_spectral(sys, FilterSpec("tikhonov", sys.lam))
            diff = m.theta - ref
            assert np.sqrt(abs(sys.norm2(diff))) <= 1e-6 * np.sqrt(sys.norm2(ref))
            assert m.alpha == -1 / sys.lam

    def test_route_equivalence_in_function_values(self):
        sys = system(2, n=30, d=2, sigma=1.0, lam=0.05)
        lin = model_from_system(sys, *solve_tikhonov(sys))
        spec = solve_spectral(sys, FilterSpec("tikhonov", 0.05))
        Z = np.random.default_rng(0).standard_normal((50, 2))
        f = lin.f(Z)
        assert np.max(np.abs(spec.f(Z) - f)) <= 1e-6 * (1 + np.max(np.abs(f)))
        assert spec.method == "spectral:tikhonov" and spec.lam == 0.05

    @pytest.mark.parametrize("name", FILTERS)
    @pytest.mark.parametrize("lam", [0.01, 0.3])
    def test_whitening_oracle(self, name, lam):
        sys = system(7, n=12, d=2, sigma=0.5)
        m = solve_spectral(sys, FilterSpec(name, lam))
        alpha, beta = spectral_by_whitening(sys, name, lam)
        ref = model_from_system(sys.with_lambda(lam), alpha, beta)
        Z = np.random.default_rng(1).standard_normal((40, 2))
        f = ref.f(Z)
        assert np.max(np.abs(m.f(Z) - f)) <= 1e-6 * (1 + np.max(np.abs(f)))

    @pytest.mark.parametrize("name", FILTERS)
    def test_zero_xi_gives_zero_model(self, name):
        sys = system()
        zero = dataclasses.replace(sys, h=np.zeros_like(sys.h), xi_norm2=0.0, _cache={})
        m = solve_spectral(zero, FilterSpec(name, 0.1))
        assert m.alpha == 0.0 and not np.any(m.beta)

    def test_cutoff_above_spectrum(self):
        # every in-span component is cut and g(0) = 0 removes the remainder
        sys = system()
        top = decompose(sys).s.max() / sys.n
        m = solve_spectral(sys, FilterSpec("cutoff", 2 * top))
        assert m.alpha == 0.0
        assert np.max(np.abs(m.beta)) == 0.0

    def test_showalter_large_lambda_keeps_only_remainder_scale(self):
        # for lambda >> spectrum, g(a) ~ 1/lambda - a/(2 lambda^2): f -> -(1/lambda) xi
        sys = system()
        lam = 1e8
        m = solve_spectral(sys, FilterSpec("showalter", lam))
        assert m.alpha == pytest.approx(-1 / lam, rel=1e-15)
        assert np.max(np.abs(m.beta)) <= 1e-6 * abs(m.alpha)

    def test_reuses_decomposition(self):
        sys = system()
        dec = decompose(sys)
        a = solve_spectral(sys, FilterSpec("showalter", 0.2), dec)
        b = solve_spectral(sys, FilterSpec("showalter", 0.2))
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_singular_gram_is_truncated(self):
        X = np.array([[0.3, 0.1], [0.3, 0.1], [-0.5, 1.0]])
        X, spec, base = X, small_instance(0, d=2)[1], small_instance(0, d=2, base_kind="gaussian")[2]
        sys = assemble(X, spec, base, 0.1)
        dec = decompose(sys)
        assert len(dec.s) < 6
        m = solve_spectral(sys, FilterSpec("cutoff", 1e-3))
        assert np.all(np.isfinite(m.theta))
