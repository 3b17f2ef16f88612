"""Theoretical quantities of the rescaled field and of its limits.

Characteristic functions and cumulants are computed by nested quadrature:
an inner integral over ball centers x on panels graded around the edges of
supp phi, and an outer integral over log-radius s = ln r with explicit
bounds on the truncated tails in r.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from ._numerics import graded_edges, panel_rule, tensor_rule
from .field import simulate_fields, smeared_shape
from .model import BallModel, Box, ConditionError, Density, IntensityLaw, ModelParams, RadiusLaw, WeightLaw
from .sampler import stable_cms, substream

# --------------------------------------------------------------------------
# Levy exponents
# --------------------------------------------------------------------------


def psi_alpha(theta, alpha, sigma, b):
    """-sigma^alpha |theta|^alpha (1 + i b sign(theta) tan(pi alpha / 2))."""
    theta = np.asarray(theta, dtype=float)
    skew = 0.0 if alpha == 2.0 else b * math.tan(math.pi * alpha / 2)
    return -(sigma**alpha) * np.abs(theta) ** alpha * (1.0 + 1j * skew * np.sign(theta))


_LAGUERRE = np.polynomial.laguerre.laggauss(120)
_SERIES_TERMS = 20


def pareto_tail_integral(alpha, z):
    """I(z) = int_z^inf (cos y - 1) y^(-alpha-1) dy, vectorized in z > 0.

    For z >= 1 the oscillatory part int_z^inf e^{iy} y^(-s) dy is moved onto
    the ray z + it, giving i e^{iz} z^(-s) int_0^inf e^(-t) (1 + it/z)^(-s) dt
    (Gauss-Laguerre). For z < 1 the cosine series is integrated termwise on
    [z, 1].
    """
    z = np.asarray(z, dtype=float)
    s = alpha + 1.0
    t, w = _LAGUERRE

    def upper(zz):
        ray = (1.0 + 1j * t[None, :] / zz[:, None]) ** (-s) @ w
        return np.real(1j * np.exp(1j * zz) * zz ** (-s) * ray) - zz ** (-alpha) / alpha

    out = np.empty(z.shape)
    big = z >= 1.0
    out[big] = upper(z[big])
    if np.any(~big):
        zs = z[~big]
        acc = np.full(zs.shape, upper(np.array([1.0]))[0])
        for k in range(1, _SERIES_TERMS + 1):
            e = 2 * k - alpha
            acc += (-1) ** k * (1.0 - zs**e) / (math.factorial(2 * k) * e)
        out[~big] = acc
    return out


def psi_g(G: WeightLaw, u):
    """Psi_G(u) = int (e^{ium} - 1 - ium) G(dm), vectorized in u."""
    u = np.asarray(u, dtype=float)
    if G.kind == "gaussian":
        return np.exp(1j * u * G.mean - 0.5 * G.variance * u * u) - 1.0 - 1j * u * G.mean
    if G.kind == "exact-stable":
        return np.exp(1j * u * G.tau + psi_alpha(u, G.alpha, G.sigma, G.b)) - 1.0 - 1j * u * G.tau
    au = np.abs(u)
    out = np.zeros(au.shape)
    nz = au > 0
    out[nz] = G.alpha * G.scale**G.alpha * au[nz] ** G.alpha * pareto_tail_integral(G.alpha, au[nz] * G.scale)
    return out.astype(complex)


def calibrate_stable_parameters(G: WeightLaw, grid=None):
    """(alpha, sigma, b, tau) of the two-sided Pareto law by least squares.

    Fits -Re Psi_G(u) = sigma^alpha u^alpha + c u^2 on a small-u grid; the
    law is symmetric so b = tau = 0.
    """
    if G.kind != "two-sided-pareto":
        return G.stable_parameters
    u = np.geomspace(1e-4, 1e-2, 40) / G.scale if grid is None else np.asarray(grid)
    y = -psi_g(G, u).real / u**G.alpha
    design = np.column_stack([np.ones_like(u), u ** (2 - G.alpha)])
    coef = np.linalg.lstsq(design, y, rcond=None)[0]
    return G.alpha, float(coef[0]) ** (1.0 / G.alpha), 0.0, 0.0


def pareto_sigma_closed_form(G: WeightLaw):
    """sigma with sigma^alpha = scale^alpha Gamma(1-alpha) cos(pi alpha/2)."""
    a = G.alpha
    return (G.scale**a * special.gamma(1 - a) * math.cos(math.pi * a / 2)) ** (1 / a)


def c_of_g(G: WeightLaw, grid=None):
    """C(G) with |Psi_G(u)| <= C(G)|u|^alpha, and the grid it was fitted on."""
    alpha = G.index
    if G.kind == "gaussian" and G.mean == 0:
        return 0.5 * G.variance, None
    u = np.geomspace(1e-4, 1e4, 801) if grid is None else np.asarray(grid)
    ratio = np.abs(psi_g(G, u)) / u**alpha
    return float(ratio.max()), u


@dataclass(frozen=True)
class LevyExponent:
    G: WeightLaw

    def psi_g(self, u):
        return psi_g(self.G, u)

    def psi_alpha(self, theta):
        a, s, b, _ = self.G.stable_parameters
        return psi_alpha(theta, a, s, b)

    @property
    def c_of_g(self):
        return c_of_g(self.G)[0]


# --------------------------------------------------------------------------
# quadrature engine
# --------------------------------------------------------------------------

_X_ORDER = 16
_SHAPE_REACH = {"gaussian-bump": 8.5, "ball-indicator": 1.0, "power-decay": 1e6}


def _axis_anchors(density: Density, axis):
    pts = set()
    for _, piece in density.terms:
        lo, hi = piece.bounds()
        pts.update((float(lo[axis]), float(hi[axis])))
        if hasattr(piece, "center"):
            pts.add(float(piece.center[axis]))
    return np.array(sorted(pts))


def x_rule(density: Density, h, r, order=None):
    """Nodes/weights for int dx over the centers that reach supp phi."""
    reach = _SHAPE_REACH[h.kind]
    order = order or (_X_ORDER if h.d == 1 else 6)
    rules = []
    for axis in range(h.d):
        anchors = _axis_anchors(density, axis)
        if h.kind == "ball-indicator":
            anchors = np.concatenate([anchors - r, anchors, anchors + r])
        lo = anchors.min() - reach * r
        hi = anchors.max() + reach * r
        span = (hi - lo) / r
        edges = graded_edges(anchors, r, lo, hi, span)
        rules.append(panel_rule(edges, order))
    if h.d == 1:
        return rules[0][0][:, None], rules[0][1]
    return tensor_rule(rules)


def x_integral(density: Density, h, r, f):
    """int f(mu[tau_{x,r} h]) dx; f maps smear values (n,) to (n, k)."""
    nodes, weights = x_rule(density, h, r)
    vals = smeared_shape(density, h, nodes, np.full(len(weights), r))
    return weights @ f(vals)


@dataclass
class RadialIntegral:
    value: np.ndarray
    quad_error: float
    tail_bound: float

    @property
    def error(self):
        return self.quad_error + self.tail_bound


def _norm_p(density, p):
    return density.lp_norm(p)


def power_measure_integral(density, h, f, coef, beta, lo, hi, gammas, consts, epsrel=1e-11):
    """int_lo^hi coef r^(-beta-1) int f(mu[tau_{x,r}h]) dx dr.

    ``gammas``/``consts`` describe the envelope |f_j(s)| <= consts_j |s|^gammas_j
    that, through the smeared-shape L^gamma bounds, controls the r-tails
    cut off at 0 and infinity.
    """
    d = h.d
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    consts = np.atleast_1d(np.asarray(consts, dtype=float))
    k_up = np.array([c * _norm_p(density, 1.0) ** g * h.lp_norm(g) ** g for g, c in zip(gammas, consts)])
    k_lo = np.array([c * _norm_p(density, g) ** g * h.lp_norm(1.0) ** g for g, c in zip(gammas, consts)])
    # crossover of the two envelopes for the leading component
    with np.errstate(divide="ignore"):
        cross = np.where(gammas > 1, (k_up / np.maximum(k_lo, 1e-300)) ** (1.0 / ((gammas - 1) * d)), 1.0)
    c_mid = float(np.exp(np.mean(np.log(np.clip(cross, 1e-300, None)))))
    scale = float(np.max([
        coef * (k_lo[j] * c_mid ** (gammas[j] * d - beta) / max(gammas[j] * d - beta, 1e-3)
                + k_up[j] * c_mid ** (d - beta) / (beta - d))
        for j in range(len(gammas))
    ]))
    tol = 1e-14 * max(scale, 1e-300)
    tail = 0.0
    r_hi = hi
    if not np.isfinite(hi):
        # coef K r^(d - beta) / (beta - d) <= tol
        kk = float(k_up.max())
        r_hi = (tol * (beta - d) / max(coef * kk, 1e-300)) ** (1.0 / (d - beta)) if kk > 0 else 1.0
        r_hi = max(r_hi, 10 * max(lo, c_mid, 1.0))
        tail += coef * kk * r_hi ** (d - beta) / (beta - d)
    r_lo = lo
    if lo <= 0:
        g_min = gammas.min()
        kk = float(k_lo.max())
        expo = g_min * d - beta
        if expo <= 0:
            raise ConditionError("small-radius integral diverges: need gamma * d > beta")
        r_lo = (tol * expo / max(coef * kk, 1e-300)) ** (1.0 / expo) if kk > 0 else 1e-12
        r_lo = min(r_lo, 0.1 * min(c_mid, r_hi))
        tail += coef * kk * r_lo**expo / expo

    s0, s1 = math.log(r_lo), math.log(r_hi)
    edges = log_radius_edges(s0, s1, [math.log(c_mid)])
    val, err = log_radius_quadrature(lambda r: coef * r ** (-beta - 1.0) * x_integral(density, h, r, f), edges)
    return RadialIntegral(val, err, float(tail))


_S_PANEL = 0.5
_S_ORDERS = (16, 11)


def log_radius_edges(s0, s1, breaks=()):
    """Panels of width <= 0.5 in s = ln r, with the given break points."""
    n = max(1, int(math.ceil((s1 - s0) / _S_PANEL)))
    extra = [b for b in breaks if s0 < b < s1]
    return np.unique(np.concatenate([np.linspace(s0, s1, n + 1), extra]))


def log_radius_quadrature(g, edges):
    """int g(e^s) e^s ds over the panels, with a two-order error estimate.

    The integrand is smooth in s, so composite Gauss-Legendre on fixed panels
    converges geometrically; the difference of two orders bounds the error
    of the lower one.
    """
    results = []
    for order in _S_ORDERS:
        nodes, weights = panel_rule(edges, order)
        acc = None
        for s, w in zip(nodes, weights):
            r = math.exp(s)
            term = (w * r) * np.atleast_1d(g(r))
            acc = term if acc is None else acc + term
        results.append(acc)
    return results[0], float(np.max(np.abs(results[0] - results[1])))


def _pareto_measure(model: BallModel, rho):
    F = model.radius
    low = F.scale(rho)
    return F.beta * low**F.beta, F.beta, low, np.inf


def _levy_measure(model: BallModel, lo=0.0, hi=np.inf):
    F = model.radius
    return F.beta * F.C_beta, F.beta, lo, hi


def _is_symmetric(G: WeightLaw):
    if G.kind == "gaussian":
        return G.mean == 0
    if G.kind == "exact-stable":
        return G.b == 0 and G.tau == 0
    return True


def _psi_real_symmetric(G: WeightLaw, u):
    """Re Psi_G(u) for a symmetric law, in real arithmetic."""
    if G.kind == "gaussian":
        return np.expm1(-0.5 * G.variance * u * u)
    if G.kind == "exact-stable":
        return np.expm1(-np.abs(G.sigma * u) ** G.alpha)
    return psi_g(G, u).real


def _psi_functional(G, thetas, norm):
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    symmetric = _is_symmetric(G)

    def f(s):
        u = np.outer(s, thetas) / norm
        if symmetric:
            return np.concatenate([_psi_real_symmetric(G, u), np.zeros_like(u)], axis=1)
        z = psi_g(G, u)
        return np.concatenate([z.real, z.imag], axis=1)

    return f, thetas


# --------------------------------------------------------------------------
# characteristic functions and cumulants of the rescaled field
# --------------------------------------------------------------------------


@dataclass
class CFResult:
    theta: np.ndarray
    value: np.ndarray
    log_value: np.ndarray
    error_bound: float


def _x_tail_bound(model, rho, density, scale_factor):
    """Bound on int |mu[tau h]| over centers outside the x-rule window."""
    h = model.shape
    tail = h.tail_mass(_SHAPE_REACH[h.kind])
    return scale_factor * density.lp_norm(1.0) * tail * model.radius.moment(model.d, rho)


def theoretical_cf(model: BallModel, rho, density: Density, theta):
    """E exp(i theta M~_rho(mu)) from the Poisson-integral exponent."""
    prm, G = model.params, model.weight
    thetas = np.atleast_1d(np.asarray(theta, dtype=float))
    lam = prm.lam(rho)
    norm = prm.normalization(rho)
    if lam == 0 or density.is_zero:
        return CFResult(thetas, np.ones(len(thetas), complex), np.zeros(len(thetas), complex), 0.0)
    f, _ = _psi_functional(G, thetas, norm)
    cg = c_of_g(G)[0]
    scale = np.abs(thetas).max() / norm
    consts = [cg * scale**prm.alpha] * (2 * len(thetas))
    gam = [prm.alpha] * (2 * len(thetas))
    coef, beta, lo, hi = _pareto_measure(model, rho)
    res = power_measure_integral(density, model.shape, f, coef, beta, lo, hi, gam, consts)
    k = len(thetas)
    log_cf = lam * (res.value[:k] + 1j * res.value[k:])
    err = lam * res.error + _x_tail_bound(model, rho, density, lam * 2 * G.abs_moment(1) * scale)
    return CFResult(thetas, np.exp(log_cf), log_cf, float(err))


@dataclass
class CumulantVector:
    k_max: int
    c: np.ndarray
    errors: np.ndarray

    def __getitem__(self, order):
        """c_order (1-based)."""
        return float(self.c[order - 1])


def _power_functional(orders):
    orders = list(orders)

    def f(s):
        return np.column_stack([s**k for k in orders])

    return f


def _signed_power_integral(model, density, orders, measure):
    coef, beta, lo, hi = measure
    f = _power_functional(orders)
    return power_measure_integral(density, model.shape, f, coef, beta, lo, hi, orders, [1.0] * len(orders))


def theoretical_cumulants(model: BallModel, rho, density: Density, k_max):
    """Cumulants c_1..c_kmax of M~_rho(mu)."""
    prm, G = model.params, model.weight
    moments = [G.moment(l) for l in range(2, k_max + 1)]
    if not all(np.isfinite(moments)):
        raise ConditionError("weight law lacks the moments needed for these cumulants")
    c = np.zeros(k_max)
    errs = np.zeros(k_max)
    lam, norm = prm.lam(rho), prm.normalization(rho)
    if k_max >= 2 and lam > 0 and not density.is_zero:
        orders = list(range(2, k_max + 1))
        res = _signed_power_integral(model, density, orders, _pareto_measure(model, rho))
        for j, l in enumerate(orders):
            fac = lam / norm**l * moments[j]
            c[l - 1] = fac * res.value[j]
            errs[l - 1] = abs(fac) * res.error
    return CumulantVector(k_max, c, errs)


def limit_poisson_cumulants(model: BallModel, density: Density, a, k_max, lo=0.0, hi=np.inf):
    """Cumulants of J_a(mu) restricted to radii in (lo, hi)."""
    G = model.weight
    c = np.zeros(k_max)
    errs = np.zeros(k_max)
    if k_max < 2 or a == 0 or density.is_zero:
        return CumulantVector(k_max, c, errs)
    orders = list(range(2, k_max + 1))
    res = _signed_power_integral(model, density, orders, _levy_measure(model, lo, hi))
    for j, l in enumerate(orders):
        fac = a * G.moment(l)
        c[l - 1] = fac * res.value[j]
        errs[l - 1] = abs(fac) * res.error
    return CumulantVector(k_max, c, errs)


def limit_poisson_cf(model: BallModel, density: Density, a, theta):
    """log E exp(i theta J_a(mu)) = a int int Psi_G(theta mu[tau h]) beta C_beta r^(-beta-1)."""
    G = model.weight
    thetas = np.atleast_1d(np.asarray(theta, dtype=float))
    if a == 0 or density.is_zero:
        return CFResult(thetas, np.ones(len(thetas), complex), np.zeros(len(thetas), complex), 0.0)
    f, _ = _psi_functional(G, thetas, 1.0)
    cg = c_of_g(G)[0]
    scale = np.abs(thetas).max()
    k = len(thetas)
    coef, beta, lo, hi = _levy_measure(model)
    res = power_measure_integral(density, model.shape, f, coef, beta, lo, hi,
                                 [model.params.alpha] * 2 * k, [cg * scale**model.params.alpha] * 2 * k)
    log_cf = a * (res.value[:k] + 1j * res.value[k:])
    return CFResult(thetas, np.exp(log_cf), log_cf, float(a * res.error))


def smeared_power_integral(model: BallModel, density: Density, gamma, rho):
    """int int |mu[tau_{x,r}h]|^gamma dx F_rho(dr) by quadrature."""
    f = lambda s: np.abs(s)[:, None] ** gamma
    coef, beta, lo, hi = _pareto_measure(model, rho)
    return power_measure_integral(density, model.shape, f, coef, beta, lo, hi, [gamma], [1.0])


# --------------------------------------------------------------------------
# exact radius moments and bounds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedMoment:
    value: float
    asymptote: float | None


def truncated_radius_moment(F: RadiusLaw, delta, u, side):
    """int_{r0}^u r^delta F(dr) (lower) or int_u^inf r^delta F(dr) (upper)."""
    b, r0, cb = F.beta, F.r0, F.C_beta
    if side == "upper":
        if delta >= b:
            raise ConditionError(f"upper truncated moment needs delta < beta (got {delta} >= {b})")
        if u <= r0:
            return TruncatedMoment(F.moment(delta), b * cb * u ** (delta - b) / (b - delta))
        val = b * cb * u ** (delta - b) / (b - delta)
        return TruncatedMoment(val, val)
    if side != "lower":
        raise ValueError("side must be 'lower' or 'upper'")
    if u <= r0:
        return TruncatedMoment(0.0, None)
    if delta == b:
        return TruncatedMoment(b * cb * math.log(u / r0), b * cb * math.log(u))
    val = b * cb * (u ** (delta - b) - r0 ** (delta - b)) / (delta - b)
    asym = b * cb * u ** (delta - b) / (delta - b) if delta > b else None
    return TruncatedMoment(val, asym)


def crossover_constant(density: Density, h, gamma):
    """c at which r^d ||phi||_1^g ||h||_g^g = r^(g d) ||phi||_g^g ||h||_1^g."""
    d = h.d
    ratio = (density.lp_norm(1.0) * h.lp_norm(gamma)) / (density.lp_norm(gamma) * h.lp_norm(1.0))
    return ratio ** (gamma / ((gamma - 1) * d))


def smeared_integral_bound(density: Density, h, F: RadiusLaw, gamma, rho):
    """Explicit bound on int int |mu[tau_{x,r}h]|^gamma dx F_rho(dr).

    For exact Pareto radii the truncated-moment bounds hold with the
    constant C_beta, which is used for M.
    """
    d, beta = h.d, F.beta
    if gamma <= beta / d:
        raise ConditionError(f"need gamma > beta/d (gamma={gamma}, beta/d={beta / d})")
    e1 = gamma * (beta - d) / ((gamma - 1) * d)
    e2 = (gamma * d - beta) * gamma / ((gamma - 1) * d)
    const = (gamma - 1) * beta * d / ((gamma * d - beta) * (beta - d))
    a = density.lp_norm(gamma) * h.lp_norm(1.0)
    b = density.lp_norm(1.0) * h.lp_norm(gamma)
    return rho**beta * F.C_beta * const * a**e1 * b**e2


def a_gamma(gamma):
    """A(gamma) = (int_0^inf (1 - cos x) x^(-1-gamma) dx)^(-1)."""
    if gamma == 1.0:
        return 2.0 / math.pi
    return 1.0 / (-special.gamma(-gamma) * math.cos(math.pi * gamma / 2))


def a_gamma_quadrature(gamma):
    f = lambda x: 2.0 * math.sin(0.5 * x) ** 2 * x ** (-1.0 - gamma)
    head = integrate.quad(f, 0.0, 1.0, epsabs=1e-15, epsrel=1e-12, limit=200)[0]
    osc = integrate.quad(lambda x: x ** (-1.0 - gamma), 1.0, np.inf, weight="cos", wvar=1.0)[0]
    return 1.0 / (head + 1.0 / gamma - osc)


def a_alpha_gamma(alpha, gamma):
    """A(alpha, gamma) = int_0^inf (1 - exp(-t^alpha)) t^(-1-gamma) dt."""
    return special.gamma(1.0 - gamma / alpha) / gamma


def moment_bound(model: BallModel, rho, density: Density, gamma):
    """Upper bound on E|M~_rho(mu)|^gamma for 0 < gamma < alpha."""
    prm, h = model.params, model.shape
    alpha, beta, d = prm.alpha, prm.beta, prm.d
    if not 0 < gamma < alpha:
        raise ConditionError(f"moment bound needs 0 < gamma < alpha (gamma={gamma})")
    if density.is_zero:
        return 0.0
    g = gamma if gamma > 1 else 0.5 * (1.0 + alpha)
    cg = c_of_g(model.weight)[0]
    lead = (
        2.0 * cg * prm.C_beta * (alpha - 1) * beta * d / ((alpha * d - beta) * (beta - d))
        * h.lp_norm(1.0) ** (alpha * (beta - d) / ((alpha - 1) * d))
        * h.lp_norm(alpha) ** ((alpha * d - beta) * alpha / ((alpha - 1) * d))
    )
    const = a_gamma(g) * a_alpha_gamma(alpha, g) * lead ** (g / alpha)
    lam, norm = prm.lam(rho), prm.normalization(rho)
    val = (
        const * (lam * rho**beta / norm**alpha) ** (g / alpha)
        * density.lp_norm(alpha) ** (g * (beta - d) / ((alpha - 1) * d))
        * density.lp_norm(1.0) ** (g * (alpha * d - beta) / ((alpha - 1) * d))
    )
    return val ** (gamma / g) if g != gamma else val


def cumulant_bound(model: BallModel, rho, density: Density, k):
    """Upper bound on |c_k(M~_rho(mu))|, alpha = 2.

    Uses int |m|^k G(dm), which dominates |int m^k G(dm)|.
    """
    prm, h = model.params, model.shape
    if prm.alpha != 2.0:
        raise ConditionError("cumulant bound requires alpha = 2")
    if k < 2:
        raise ValueError("k must be >= 2")
    mk = model.weight.abs_moment(k)
    if not np.isfinite(mk):
        raise ConditionError(f"weight law has no moment of order {k}")
    beta, d = prm.beta, prm.d
    const = (
        prm.C_beta * (k - 1) * beta * d / ((k * d - beta) * (beta - d))
        * h.lp_norm(1.0) ** (k * (beta - d) / ((k - 1) * d))
        * h.lp_norm(k) ** ((k * d - beta) * k / ((k - 1) * d))
        * mk
    )
    lam, norm = prm.lam(rho), prm.normalization(rho)
    return (
        const * lam * rho**beta / norm**k
        * density.lp_norm(k) ** (k * (beta - d) / ((k - 1) * d))
        * density.lp_norm(1.0) ** (k * (k * d - beta) / ((k - 1) * d))
    )


def _one_minus_re(z, log):
    if not log:
        return 1.0 - np.real(z)
    re, im = np.real(z), np.imag(z)
    return -np.expm1(re) * np.cos(im) + 2.0 * np.sin(0.5 * im) ** 2


def fractional_moment_from_cf(cf, gamma, symmetrized=False, log=False, vectorized=False, log_t_range=(-30, 14)):
    """E|X|^gamma = A(gamma) int_0^inf (1 - Re cf(t)) t^(-1-gamma) dt.

    With ``symmetrized`` the integrand uses 1 - |cf|^2, which gives the
    moment of X - X' for an independent copy X'. ``log`` means cf returns
    the log characteristic function (better conditioned near t = 0).
    ``vectorized`` evaluates cf once on a fixed log-t rule over
    ``log_t_range`` (default [e^-30, e^14], where the cut tails are below
    1e-9 for any law with a finite second moment). Below the rule the
    integrand is taken as a power of t, above it the cf as negligible, so a
    shorter range suits laws with a smooth, fast-decaying cf.
    """
    if not 0 < gamma < 2:
        raise ValueError("gamma must lie in (0, 2)")

    def core(z):
        if symmetrized:
            if log:
                return -np.expm1(2.0 * np.real(z))
            return 1.0 - np.abs(z) ** 2
        return _one_minus_re(z, log)

    if vectorized:
        s0, s1 = (float(v) for v in log_t_range)
        nodes, weights = panel_rule(np.linspace(s0, s1, int(math.ceil(s1 - s0)) + 1), 8)
        t = np.exp(np.concatenate([nodes, [s0 - 1.0, s0, s1]]))
        cores = core(np.asarray(cf(t)))
        vals = cores[:-3] * t[:-3] ** (-gamma)
        # power behaviour t^q below the rule (q from the last unit step in
        # log t, at most 2), t^(-1-gamma) decay above it
        c_lo, c0 = cores[-3], cores[-2]
        q = math.log(c0 / c_lo) if c_lo > 0 and c0 > 0 else 2.0
        q = min(max(q, gamma + 1e-3), 2.0)
        head = c0 * t[-2] ** (-gamma) / (q - gamma)
        tail = cores[-1] * t[-1] ** (-gamma) / gamma
        val = a_gamma(gamma) * float(weights @ vals + head + tail)
    else:
        g = lambda t: float(core(complex(cf(t)))) * t ** (-1.0 - gamma)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            head = integrate.quad(g, 0.0, 1.0, epsabs=1e-13, epsrel=1e-10, limit=400)[0]
            tail = integrate.quad(g, 1.0, np.inf, epsabs=1e-13, epsrel=1e-10, limit=400)[0]
        val = a_gamma(gamma) * (head + tail)
    if not np.isfinite(val):
        raise ArithmeticError("fractional-moment integral is not finite")
    return val


def gaussian_even_moment(variance, n):
    """E X^(2n) for X ~ N(0, variance)."""
    if variance < 0 or n < 1:
        raise ValueError("need variance >= 0 and n >= 1")
    return math.factorial(2 * n - 1) / (math.factorial(n - 1) * 2 ** (n - 1)) * variance**n


def moments_from_cumulants(c, k):
    """E X^k from cumulants c_1..c_k by the complete Bell recursion."""
    cs = np.asarray(c.c if isinstance(c, CumulantVector) else c, dtype=float)
    if k > len(cs):
        raise ValueError("not enough cumulants")
    m = [1.0]
    for n in range(1, k + 1):
        m.append(sum(math.comb(n - 1, j - 1) * cs[j - 1] * m[n - j] for j in range(1, n + 1)))
    return m[k]


# --------------------------------------------------------------------------
# limit fields
# --------------------------------------------------------------------------


@dataclass
class LimitSpec:
    kind: str
    alpha: float = 2.0
    sigma: float = 0.0
    b: float = 0.0
    a: float = 0.0
    eps_r: float = 0.0
    compensator: float = 0.0
    small_jump_variance: float = 0.0
    error_bound: float = 0.0
    certified: bool = True
    quad_error: float = 0.0
    details: dict = field(default_factory=dict)


def stable_limit_spec(model: BallModel, density: Density):
    """Scale and skewness of Z_alpha(mu).

    The control measure is sigma^alpha beta C_beta r^(-1-beta) dr dx: the
    radius law F has density beta C_beta r^(-1-beta) in its tail.
    """
    prm = model.params
    alpha, sigma, b = prm.alpha, prm.sigma, prm.b
    if density.is_zero:
        return LimitSpec("stable", alpha, 0.0, b)

    def f(s):
        p = np.abs(s) ** alpha
        return np.column_stack([p, np.sign(s) * p])

    coef, beta, lo, hi = _levy_measure(model)
    res = power_measure_integral(density, model.shape, f, coef, beta, lo, hi, [alpha, alpha], [1.0, 1.0])
    total, signed = res.value
    sigma_z = (sigma**alpha * total) ** (1.0 / alpha)
    b_z = b * signed / total if alpha != 2.0 else 0.0
    return LimitSpec("stable", alpha, float(sigma_z), float(b_z), quad_error=sigma**alpha * res.error,
                     details={"control_integral": float(total), "signed_integral": float(signed)})


def sample_limit_stable(spec: LimitSpec, rng, size=None):
    """Draws of S_alpha(sigma_Z, b_Z, 0)."""
    if spec.sigma == 0:
        return np.zeros(size) if size is not None else 0.0
    return stable_cms(spec.alpha, spec.sigma, spec.b, 0.0, rng, size)


def poisson_limit_spec(model: BallModel, density: Density, a, eps_r, method="auto"):
    """Truncation plan and certified error of the J_a sampler.

    ``gaussian``: radii below eps_r are replaced by an independent Gaussian
    with their exact variance. For centered Gaussian weights the small-jump
    part is conditionally Gaussian with variance V = sum m^2-free smear^2, so
    the coupling error in L^2 is at most sqrt(Var V / E V) (times the weight
    variance). ``truncate``: radii below eps_r are dropped, with the L^2
    bound from the small-radius envelope.
    """
    if eps_r <= 0:
        raise ValueError("eps_r must be positive")
    G, F, h = model.weight, model.radius, model.shape
    d, beta, cb = model.d, F.beta, F.C_beta
    if a == 0 or density.is_zero:
        return LimitSpec("poisson", a=a, eps_r=eps_r, error_bound=0.0)
    gauss_ok = G.kind == "gaussian" and G.mean == 0
    if method == "auto":
        method = "gaussian" if gauss_ok else "truncate"
    m2 = G.moment(2)
    mean = a * G.moment(1) * density.mass() * h.lp_norm_p(1.0) * cb * beta * eps_r ** (d - beta) / (beta - d)
    spec = LimitSpec("poisson", a=a, eps_r=eps_r, compensator=float(mean), details={"method": method})
    if method == "gaussian":
        if not gauss_ok:
            raise ConditionError("gaussian small-jump compensation needs centered Gaussian weights")
        small = limit_poisson_cumulants(model, density, a, 2, 0.0, eps_r)
        v = small[2]
        s2 = G.variance
        var_v = a * s2**2 * beta * cb * density.lp_norm_p(4.0) * h.lp_norm(1.0) ** 4 * eps_r ** (4 * d - beta) / (4 * d - beta)
        spec.small_jump_variance = v
        spec.error_bound = math.sqrt(var_v / v) if v > 0 else 0.0
        spec.quad_error = float(small.errors[1])
        return spec
    if not np.isfinite(m2):
        spec.certified = False
        spec.error_bound = math.inf
        return spec
    bound = a * beta * cb * m2 * density.lp_norm_p(2.0) * h.lp_norm(1.0) ** 2 * eps_r ** (2 * d - beta) / (2 * d - beta)
    spec.error_bound = math.sqrt(bound)
    spec.certified = model.params.alpha == 2.0 or np.isfinite(m2)
    return spec


def _truncated_model(model: BallModel, a, eps_r):
    F = model.radius
    radius = RadiusLaw(F.beta, eps_r)
    lam = a * F.C_beta * eps_r ** (-F.beta)
    intensity = IntensityLaw(lam, F.beta)
    prm = model.params
    params = ModelParams(prm.d, prm.alpha, prm.sigma, prm.b, prm.tau, F.beta, radius.C_beta,
                         intensity, "intermediate", lam, prm.p)
    return BallModel(radius, model.weight, model.shape, intensity, params)


def sample_limit_poisson(model: BallModel, density, a, eps_r, n, seed, method="auto", jobs=None,
                         stream="poisson-limit"):
    """Draws of J_a(mu) for one or several densities, with the certified bound.

    Returns (values, spec); values has shape (n,) or (n, len(densities)).
    """
    single = isinstance(density, Density)
    densities = [density] if single else list(density)
    specs = [poisson_limit_spec(model, dn, a, eps_r, method) for dn in densities]
    if a == 0:
        out = np.zeros((n, len(densities)))
        return (out[:, 0], specs[0]) if single else (out, specs)
    trunc = _truncated_model(model, a, eps_r)
    vals = simulate_fields(trunc, 1.0, densities, n, seed, stream=stream, jobs=jobs)
    if specs[0].details.get("method") == "gaussian":
        if len(densities) > 1:
            raise NotImplementedError("gaussian compensation is implemented for one density at a time")
        z = substream(seed, stream, "small-jumps").standard_normal(n)
        vals[:, 0] += math.sqrt(specs[0].small_jump_variance) * z
    return (vals[:, 0], specs[0]) if single else (vals, specs)


# --------------------------------------------------------------------------
# Gaussian limit paths
# --------------------------------------------------------------------------


def _normalized_key(density: Density):
    """Translation- and sign-invariant key of a box density."""
    dn = density.canonical()
    if dn.is_zero:
        return None, dn
    if not dn.boxes_only:
        return ("raw", repr(dn.terms)), dn
    lo, _ = dn.support_box()
    sign = 1.0 if dn.terms[0][0] > 0 else -1.0
    terms = []
    for c, piece in dn.terms:
        plo, phi = piece.bounds()
        terms.append((round(sign * c, 12), tuple(np.round(plo - lo, 12)), tuple(np.round(phi - lo, 12))))
    key = tuple(sorted(terms))
    shifted = Density(dn.d, tuple((c, Box(l, u)) for c, l, u in key)) if dn.boxes_only else dn
    return key, shifted


def _gaussian_box_gram_terms(densities):
    """Flattened (owner, coefficient, offset) terms of int mu[tau h]^2 dx.

    For h(y) = exp(-y^2) in d = 1 and mu = sum c_i 1_[a_i, b_i],
    int mu[tau_{x,r}h]^2 dx = r sqrt(pi/2) sum_ij c_i c_j int_{A_i} int_{A_j} g(y - z)
    with g(u) = exp(-u^2 / (2 r^2)); each double integral is a signed sum of
    four values of the second primitive K of g.
    """
    owner, coef, offset = [], [], []
    for k, dn in enumerate(densities):
        for ci, pi in dn.terms:
            a1, b1 = float(pi.lower[0]), float(pi.upper[0])
            for cj, pj in dn.terms:
                a2, b2 = float(pj.lower[0]), float(pj.upper[0])
                for sgn, u in ((1, b1 - a2), (-1, a1 - a2), (-1, b1 - b2), (1, a1 - b2)):
                    owner.append(k)
                    coef.append(sgn * ci * cj)
                    offset.append(abs(u))
    return np.array(owner), np.array(coef), np.array(offset)


def _second_primitive(u, r):
    """K(u) = int_0^u (u - t) exp(-t^2/(2 r^2)) dt for u >= 0."""
    z = u / (r * math.sqrt(2.0))
    return u * r * math.sqrt(math.pi / 2) * special.erf(z) + r * r * np.expm1(-z * z)


def limit_variances(model: BallModel, densities):
    """Var Z_2(mu) = 2 sigma^2 beta C_beta int int mu[tau h]^2 for many mu at once."""
    prm = model.params
    if prm.alpha != 2.0:
        raise ConditionError("Gaussian limit paths need alpha = 2")
    densities = [dn.canonical() for dn in densities]
    out = np.zeros(len(densities))
    live = [i for i, dn in enumerate(densities) if not dn.is_zero]
    if not live:
        return out
    coef, beta, _, _ = _levy_measure(model)
    h = model.shape
    d = h.d
    fast = h.kind == "gaussian-bump" and d == 1 and all(densities[i].boxes_only for i in live)
    if fast:
        owner, cc, off = _gaussian_box_gram_terms([densities[i] for i in live])

        def gram(r):
            vals = cc * _second_primitive(off, r)
            return r * math.sqrt(math.pi / 2) * np.bincount(owner, vals, minlength=len(live))
    else:
        sq = lambda v: (v * v)[:, None]

        def gram(r):
            return np.array([x_integral(densities[i], h, r, sq)[0] for i in live])

    # envelopes fix the finite log-radius range
    l1 = max(densities[i].lp_norm(1.0) for i in live)
    l2 = max(densities[i].lp_norm(2.0) for i in live)
    k_up = l1**2 * h.lp_norm(2.0) ** 2
    k_lo = l2**2 * h.lp_norm(1.0) ** 2
    tol = 1e-13 * max(k_up, k_lo)
    r_hi = (tol * (beta - d) / k_up) ** (1.0 / (d - beta))
    r_lo = (tol * (2 * d - beta) / k_lo) ** (1.0 / (2 * d - beta))
    edges = log_radius_edges(math.log(r_lo), math.log(r_hi))
    val, _ = log_radius_quadrature(lambda r: coef * r ** (-beta - 1.0) * gram(r), edges)
    out[live] = 2.0 * prm.sigma**2 * val
    return out


def gaussian_limit_covariance(model: BallModel, densities):
    """Covariance matrix of (Z_2(mu_i))_i by polarization over memoized variances."""
    densities = list(densities)
    n = len(densities)
    keys = {}
    reps = []

    def key_of(dn):
        k, shifted = _normalized_key(dn)
        if k is None:
            return None
        if k not in keys:
            keys[k] = len(reps)
            reps.append(shifted)
        return keys[k]

    diag = [key_of(dn) for dn in densities]
    pair = {}
    for i in range(n):
        for j in range(i + 1, n):
            pair[i, j] = key_of(densities[i] - densities[j])
    var = limit_variances(model, reps)
    get = lambda k: 0.0 if k is None else var[k]
    cov = np.zeros((n, n))
    for i in range(n):
        cov[i, i] = get(diag[i])
    for (i, j), k in pair.items():
        cov[i, j] = cov[j, i] = 0.5 * (cov[i, i] + cov[j, j] - get(k))
    return cov


def sample_gaussian_paths(cov, n_paths, rng):
    """Centered Gaussian vectors with covariance ``cov`` (eigen factorization)."""
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    w = np.clip(w, 0.0, None)
    z = rng.standard_normal((n_paths, len(w)))
    return (z * np.sqrt(w)) @ v.T


def limit_gaussian_paths(model: BallModel, family, T, mesh, n_paths, seed):
    """Z_2(mu_t) on the nodes t = 0, mesh, ..., T of a p = 1 family.

    Returns (t, paths) with paths of shape (n_paths, len(t)).
    """
    if family.p != 1:
        raise ValueError("limit paths are implemented for p = 1")
    K = int(round(T / mesh))
    if not math.isclose(K * mesh, T, rel_tol=1e-9):
        raise ValueError("T must be a multiple of the mesh")
    t = mesh * np.arange(K + 1)
    cov = gaussian_limit_covariance(model, [family.density(np.array([ti])) for ti in t])
    return t, sample_gaussian_paths(cov, n_paths, substream(seed, "gaussian-limit-paths"))


# --------------------------------------------------------------------------
# continuity in r
# --------------------------------------------------------------------------


@dataclass
class ContinuityReport:
    r_grid: np.ndarray
    psi_g: np.ndarray
    psi_alpha: np.ndarray
    max_jump: dict
    max_jump_refined: dict


def continuity_smoke(model: BallModel, density: Density, r_grid):
    """Refinement study of r -> int Psi(mu[tau_{x,r}h]) dx for Psi_G and Psi_alpha."""
    r_grid = np.asarray(r_grid, dtype=float)
    if np.any(r_grid <= 0):
        raise ValueError("radii must be positive")
    prm, G, h = model.params, model.weight, model.shape

    def f(s):
        g = psi_g(G, s)
        a = psi_alpha(s, prm.alpha, prm.sigma, prm.b)
        return np.column_stack([g.real, g.imag, a.real, a.imag])

    def curve(rs):
        if density.is_zero:
            return np.zeros((len(rs), 4))
        return np.array([x_integral(density, h, r, f) for r in rs])

    fine = np.sort(np.concatenate([r_grid, np.sqrt(r_grid[1:] * r_grid[:-1])]))
    coarse_vals = curve(r_grid)
    fine_vals = curve(fine)

    def jumps(vals):
        zg = vals[:, 0] + 1j * vals[:, 1]
        za = vals[:, 2] + 1j * vals[:, 3]
        return {"psi_g": float(np.max(np.abs(np.diff(zg)), initial=0.0)),
                "psi_alpha": float(np.max(np.abs(np.diff(za)), initial=0.0))}

    return ContinuityReport(
        r_grid,
        coarse_vals[:, 0] + 1j * coarse_vals[:, 1],
        coarse_vals[:, 2] + 1j * coarse_vals[:, 3],
        jumps(coarse_vals),
        jumps(fine_vals),
    )
