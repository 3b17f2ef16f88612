import math

import mpmath
import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from ballfield import limits as L
from ballfield.model import Density, MeasureFamily, RadiusLaw, WeightLaw
from ballfield.sampler import substream

from conftest import cfga

# Values of the canonical configuration (unit box, rho = 1, lambda = 1),
# frozen from an offline nested adaptive quadrature (scipy.quad in x inside
# scipy.quad in log r) of the closed-form erf smear of the unit box, with
# analytic large-r tails; c2 and the limit variance were cross-checked by a
# 1-D panel quadrature of the closed form of int mu[tau h]^2 dx.
C2_CANONICAL = 3.700555062241
C4_CANONICAL = 7.61183168896
CF_CANONICAL = {0.5: 0.64186003735, 1.0: 0.20784137834}
# int int mu[tau h]^2 beta C_beta r^(-beta-1) dr dx for the unit box
LIMIT_VARIANCE = 10.80758122389


def _stable_abs_moment(gamma, alpha):
    """E|X|^gamma for log E e^{itX} = -|t|^alpha."""
    return (2**gamma * special.gamma((1 + gamma) / 2) * special.gamma(1 - gamma / alpha)
            / (special.gamma(1 - gamma / 2) * math.sqrt(math.pi)))


class TestLevyExponents:
    @pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
    @pytest.mark.parametrize("z", [0.01, 0.4, 0.999, 1.0, 3.0, 25.0])
    def test_pareto_tail_against_mpmath(self, alpha, z):
        mpmath.mp.dps = 30
        s = alpha + 1
        ref = float(mpmath.re(mpmath.mpf(z) ** (1 - s) * mpmath.expint(s, -1j * mpmath.mpf(z))) - mpmath.mpf(z) ** -alpha / alpha)
        got = L.pareto_tail_integral(alpha, np.array([z]))[0]
        assert got == pytest.approx(ref, rel=1e-11, abs=1e-14)

    def test_psi_pareto_against_oscillatory_quadrature(self):
        G = WeightLaw.two_sided_pareto(1.5, 2.0)
        u = 0.7
        mpmath.mp.dps = 30
        # the non-oscillating part integrates to exactly 1
        f = lambda m: mpmath.cos(u * m) * 1.5 * mpmath.mpf(2) ** 1.5 * m ** mpmath.mpf(-2.5)
        ref = float(mpmath.quadosc(f, [2, mpmath.inf], omega=u) - 1)
        assert L.psi_g(G, np.array([u]))[0].real == pytest.approx(ref, rel=1e-9)

    def test_psi_gaussian_and_stable(self):
        u = np.array([-1.3, 0.2, 2.0])
        np.testing.assert_allclose(L.psi_g(WeightLaw.gaussian(0, 2.0), u), np.expm1(-u**2), rtol=1e-14)
        G = WeightLaw.stable(1.5, 1.0, 0.4)
        np.testing.assert_allclose(L.psi_g(G, u), np.exp(L.psi_alpha(u, 1.5, 1.0, 0.4)) - 1, rtol=1e-14)

    def test_pareto_sigma(self):
        G = WeightLaw.two_sided_pareto(1.5, 1.0)
        closed = L.pareto_sigma_closed_form(G)
        assert closed == pytest.approx(1.84527015, rel=1e-8)
        assert L.calibrate_stable_parameters(G)[1] == pytest.approx(closed, rel=1e-6)

    def test_c_of_g(self):
        assert L.c_of_g(WeightLaw.gaussian(0, 3.0))[0] == pytest.approx(1.5)
        G = WeightLaw.two_sided_pareto(1.5, 1.0)
        u = np.geomspace(1e-3, 1e3, 200)
        assert L.c_of_g(G)[0] >= np.max(np.abs(L.psi_g(G, u)) / u**1.5) * (1 - 1e-9)


class TestFractionalMoments:
    @pytest.mark.parametrize("gamma", [0.5, 1.0, 1.2, 1.5, 1.9])
    def test_a_gamma(self, gamma):
        assert L.a_gamma(gamma) == pytest.approx(L.a_gamma_quadrature(gamma), rel=1e-9)

    def test_a_gamma_values(self):
        assert L.a_gamma(1.0) == pytest.approx(2 / math.pi, rel=1e-15)
        assert L.a_gamma(1.5) == pytest.approx(0.59841342060, rel=1e-10)

    @pytest.mark.parametrize("vectorized", [False, True])
    @pytest.mark.parametrize("gamma", [0.5, 1.2, 1.5, 1.9])
    def test_gaussian(self, gamma, vectorized):
        exact = 2 ** (gamma / 2) * special.gamma((gamma + 1) / 2) / math.sqrt(math.pi)
        got = L.fractional_moment_from_cf(lambda t: -0.5 * np.asarray(t) ** 2, gamma, log=True, vectorized=vectorized)
        assert got == pytest.approx(exact, rel=1e-8)

    @pytest.mark.parametrize("alpha,gamma", [(1.5, 0.5), (1.5, 1.2), (1.2, 1.1)])
    def test_stable(self, alpha, gamma):
        got = L.fractional_moment_from_cf(lambda t: -np.abs(t) ** alpha, gamma, log=True, vectorized=True)
        assert got == pytest.approx(_stable_abs_moment(gamma, alpha), rel=1e-9)

    def test_symmetrized_is_difference_moment(self):
        # X - X' ~ N(0, 2) for X ~ N(0, 1)
        gamma = 1.5
        exact = 2 ** gamma * special.gamma((gamma + 1) / 2) / math.sqrt(math.pi)
        got = L.fractional_moment_from_cf(lambda t: -0.5 * np.asarray(t) ** 2, gamma, symmetrized=True, log=True,
                                          vectorized=True)
        assert got == pytest.approx(exact, rel=1e-8)

    def test_range(self):
        with pytest.raises(ValueError):
            L.fractional_moment_from_cf(lambda t: 0.0, 2.0)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.3, 1.9), st.floats(0.2, 5.0))
    def test_scaling(self, gamma, scale):
        base = L.fractional_moment_from_cf(lambda t: -0.5 * np.asarray(t) ** 2, gamma, log=True, vectorized=True)
        got = L.fractional_moment_from_cf(lambda t: -0.5 * (scale * np.asarray(t)) ** 2, gamma, log=True,
                                          vectorized=True)
        assert got == pytest.approx(scale**gamma * base, rel=1e-7)


class TestExactFormulas:
    @pytest.mark.parametrize("delta,u,side", [(0.5, 3.0, "lower"), (2.0, 3.0, "lower"), (1.5, 7.0, "lower"),
                                              (0.7, 2.5, "upper"), (1.2, 0.5, "upper")])
    def test_truncated_moment(self, delta, u, side):
        F = RadiusLaw(1.5, 1.3)
        dens = lambda r: 1.5 * 1.3**1.5 * r ** (-2.5)
        if side == "lower":
            ref = integrate.quad(lambda r: r**delta * dens(r), 1.3, max(u, 1.3), epsabs=1e-14, epsrel=1e-13)[0]
        else:
            ref = integrate.quad(lambda r: r**delta * dens(r), max(u, 1.3), np.inf, epsabs=1e-14, epsrel=1e-13)[0]
        assert L.truncated_radius_moment(F, delta, u, side).value == pytest.approx(ref, rel=1e-10)

    def test_gaussian_even_moment(self):
        assert L.gaussian_even_moment(1.0, 2) == 3.0
        assert L.gaussian_even_moment(2.0, 3) == pytest.approx(15 * 8)

    @pytest.mark.parametrize("k", range(1, 7))
    def test_moments_from_cumulants_symbolic(self, k):
        t = sympy.symbols("t")
        cs = sympy.symbols("c1:7")
        series = sympy.exp(sum(cs[j] * t ** (j + 1) / sympy.factorial(j + 1) for j in range(6)))
        expr = sympy.diff(series, t, k).subs(t, 0)
        vals = [0.3, 1.7, -0.4, 2.2, 0.9, -1.1]
        ref = float(expr.subs(dict(zip(cs, vals))))
        assert L.moments_from_cumulants(vals, k) == pytest.approx(ref, rel=1e-12)


class TestCanonicalQuantities:
    def test_cumulants(self, model_int, unit_box):
        c = L.theoretical_cumulants(model_int, 1.0, unit_box, 4)
        assert c[1] == 0.0
        assert c[2] == pytest.approx(C2_CANONICAL, rel=1e-9)
        assert c[3] == 0.0
        assert c[4] == pytest.approx(C4_CANONICAL, rel=1e-9)
        assert np.all(c.errors < 1e-7)

    def test_cf(self, model_int, unit_box):
        res = L.theoretical_cf(model_int, 1.0, unit_box, [0.5, 1.0])
        np.testing.assert_allclose(res.value.real, [CF_CANONICAL[0.5], CF_CANONICAL[1.0]], rtol=1e-9)
        np.testing.assert_allclose(res.value.imag, 0.0, atol=1e-15)
        assert res.error_bound < 1e-6

    def test_cf_second_derivative_is_variance(self, model_int, unit_box):
        e = 1e-3
        lc = L.theoretical_cf(model_int, 1.0, unit_box, [e]).log_value[0].real
        assert -2 * lc / e**2 == pytest.approx(C2_CANONICAL, rel=1e-5)

    @settings(max_examples=4, deadline=None)
    @given(st.sampled_from([0.25, 0.5, 2.0]))
    def test_self_similarity(self, rho):
        # c2(1_[0,1], rho) = rho^(3 - beta) c2(1_[0,1/rho], 1) with lambda = rho^-beta
        m = cfga("intermediate")
        lhs = L.theoretical_cumulants(m, rho, Density.box([0.0], [1.0]), 2)[2]
        rhs = rho**1.5 * L.theoretical_cumulants(m, 1.0, Density.box([0.0], [1.0 / rho]), 2)[2]
        assert lhs == pytest.approx(rhs, rel=1e-8)

    def test_smeared_integral(self, model_int, unit_box):
        q = L.smeared_power_integral(model_int, unit_box, 2.0, 1.0)
        assert q.value[0] == pytest.approx(C2_CANONICAL, rel=1e-9)


class TestLimits:
    def test_stable_spec(self, model_large, unit_box):
        spec = L.stable_limit_spec(model_large, unit_box)
        assert spec.sigma == pytest.approx(2.32460547, rel=1e-8)
        assert 2 * spec.sigma**2 == pytest.approx(LIMIT_VARIANCE, rel=1e-9)

    def test_large_regime_variance_approaches_limit(self, model_large, unit_box):
        c = [L.theoretical_cumulants(model_large, rho, unit_box, 2)[2] for rho in (0.1, 0.01, 1e-4)]
        assert c[0] < c[1] < c[2] < LIMIT_VARIANCE
        assert c[2] == pytest.approx(LIMIT_VARIANCE, rel=0.02)

    def test_limit_variances_fbm(self, model_large):
        fam = MeasureFamily("signed-uniform", 1, 1)
        ws = np.array([0.25, 1.0, 3.0])
        v = L.limit_variances(model_large, [fam.density([w]) for w in ws])
        np.testing.assert_allclose(v, LIMIT_VARIANCE * ws**1.5, rtol=1e-9)

    def test_limit_variances_generic_path(self):
        # a ball-indicator shape takes the generic x-quadrature route
        base = cfga("large")
        from ballfield.model import BallModel, ShapeFunction
        m = BallModel.build(base.radius, base.weight, ShapeFunction("ball-indicator", 1), base.intensity, regime="large")
        dn = Density.box([0.0], [1.0]) + Density.box([0.5], [2.0], coef=-1.0)
        v = L.limit_variances(m, [dn])[0]
        assert v == pytest.approx(2 * L.stable_limit_spec(m, dn).sigma ** 2, rel=1e-7)
        fast = L.limit_variances(base, [dn])[0]
        assert fast == pytest.approx(2 * L.stable_limit_spec(base, dn).sigma ** 2, rel=1e-8)

    def test_covariance_is_fbm(self, model_large):
        fam = MeasureFamily("signed-uniform", 1, 1)
        t = np.array([0.5, 1.0, 2.0])
        cov = L.gaussian_limit_covariance(model_large, [fam.density([s]) for s in t])
        H2 = 1.5
        ref = 0.5 * LIMIT_VARIANCE * (t[:, None] ** H2 + t[None, :] ** H2 - np.abs(t[:, None] - t[None, :]) ** H2)
        np.testing.assert_allclose(cov, ref, rtol=1e-8)

    def test_sample_gaussian_paths(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        x = L.sample_gaussian_paths(cov, 200000, substream(1, "t"))
        np.testing.assert_allclose(np.cov(x.T), cov, atol=0.02)

    def test_poisson_cumulants(self, model_int, unit_box):
        c = L.limit_poisson_cumulants(model_int, unit_box, 1.0, 4)
        assert c[2] == pytest.approx(LIMIT_VARIANCE, rel=1e-9)
        split = (L.limit_poisson_cumulants(model_int, unit_box, 1.0, 4, 0.0, 0.3)[4]
                 + L.limit_poisson_cumulants(model_int, unit_box, 1.0, 4, 0.3, np.inf)[4])
        assert c[4] == pytest.approx(split, rel=1e-8)

    def test_poisson_cf_matches_cumulants(self, model_int, unit_box):
        e = 1e-3
        lc = L.limit_poisson_cf(model_int, unit_box, 1.0, [e]).log_value[0].real
        assert -2 * lc / e**2 == pytest.approx(LIMIT_VARIANCE, rel=1e-5)

    def test_certified_spec(self, model_int, unit_box):
        spec = L.poisson_limit_spec(model_int, unit_box, 1.0, 0.02)
        assert spec.certified and spec.details["method"] == "gaussian"
        assert spec.error_bound < 0.01 * math.sqrt(LIMIT_VARIANCE)
        small = L.limit_poisson_cumulants(model_int, unit_box, 1.0, 2, 0.0, 0.02)[2]
        assert spec.small_jump_variance == pytest.approx(small, rel=1e-12)

    def test_truncation_bound_halves(self, model_int, unit_box):
        e = 0.05
        a = L.poisson_limit_spec(model_int, unit_box, 1.0, e, method="truncate").error_bound
        b = L.poisson_limit_spec(model_int, unit_box, 1.0, e * 2 ** (-2 / (2 - 1.5)), method="truncate").error_bound
        assert b == pytest.approx(a / 2, rel=1e-12)

    def test_truncation_bound_dominates_dropped_variance(self, model_int, unit_box):
        e = 0.05
        bound = L.poisson_limit_spec(model_int, unit_box, 1.0, e, method="truncate").error_bound
        dropped = L.limit_poisson_cumulants(model_int, unit_box, 1.0, 2, 0.0, e)[2]
        assert math.sqrt(dropped) <= bound

    def test_poisson_sampler_variance(self, model_int, unit_box):
        vals, spec = L.sample_limit_poisson(model_int, unit_box, 1.0, 0.02, 20000, 3)
        se = np.std(vals**2) / math.sqrt(len(vals))
        assert abs(np.mean(vals**2) - LIMIT_VARIANCE) < 4 * se
        assert abs(np.mean(vals)) < 4 * np.std(vals) / math.sqrt(len(vals))

    def test_stable_sampler(self, model_large, unit_box):
        spec = L.stable_limit_spec(model_large, unit_box)
        x = L.sample_limit_stable(spec, substream(0, "s"), 100000)
        assert np.var(x) == pytest.approx(LIMIT_VARIANCE, rel=0.02)


class TestBounds:
    @pytest.mark.parametrize("beta", [1.2, 1.5, 1.8])
    @pytest.mark.parametrize("rho", [1.0, 0.1])
    def test_smeared_bound(self, beta, rho):
        m = cfga("intermediate", beta=beta)
        phi = Density.box([0.0], [1.0])
        q = L.smeared_power_integral(m, phi, 2.0, rho).value[0]
        assert q <= L.smeared_integral_bound(phi, m.shape, m.radius, 2.0, rho)

    def test_cumulant_bound(self, model_int, unit_box):
        c = L.theoretical_cumulants(model_int, 1.0, unit_box, 4)
        for k in (2, 3, 4):
            assert abs(c[k]) <= L.cumulant_bound(model_int, 1.0, unit_box, k)

    def test_moment_bound_frozen(self, model_int, unit_box):
        assert L.moment_bound(model_int, 1.0, unit_box, 1.5) == pytest.approx(9.27, rel=1e-3)

    def test_moment_bound_exceeds_exact_moment(self, model_int, unit_box):
        cf = lambda t: L.theoretical_cf(model_int, 1.0, unit_box, t).log_value
        exact = L.fractional_moment_from_cf(cf, 1.5, log=True, vectorized=True, log_t_range=(-6, 4))
        assert exact <= L.moment_bound(model_int, 1.0, unit_box, 1.5)

    def test_crossover(self, unit_box, model_int):
        h = model_int.shape
        c = L.crossover_constant(unit_box, h, 2.0)
        lhs = c * unit_box.lp_norm(1.0) ** 2 * h.lp_norm(2.0) ** 2
        rhs = c**2 * unit_box.lp_norm(2.0) ** 2 * h.lp_norm(1.0) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestContinuity:
    def test_smoke(self, model_int, unit_box):
        rep = L.continuity_smoke(model_int, unit_box, np.geomspace(0.1, 10, 9))
        for key, v in rep.max_jump_refined.items():
            assert v <= rep.max_jump[key] + 1e-12
