"""Parameter space of the weighted random ball model.

Radius, weight and shape laws, measure densities and parametric families,
block increments, and the checks of the standing conditions on (F, G, h).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special, stats

from ._numerics import gauss_legendre, graded_edges, panel_rule, tensor_rule


class ConditionError(ValueError):
    """A standing condition on the model parameters is violated."""


# --------------------------------------------------------------------------
# radius, weight and intensity laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RadiusLaw:
    """Exact Pareto radii: survival min(1, (r/r0)^-beta).

    The tail condition then holds with equality for r >= r0 and
    C_beta = r0**beta.
    """

    beta: float
    r0: float = 1.0
    kind: str = "exact-pareto"

    def __post_init__(self):
        if self.kind != "exact-pareto":
            raise ValueError(f"unsupported radius law {self.kind!r}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")

    @property
    def C_beta(self):
        return self.r0**self.beta

    def scale(self, rho=1.0):
        """Lower endpoint of the support of F_rho."""
        return rho * self.r0

    def survival(self, r, rho=1.0):
        r = np.asarray(r, dtype=float)
        s = self.scale(rho)
        with np.errstate(divide="ignore"):
            return np.where(r <= s, 1.0, (np.maximum(r, s) / s) ** (-self.beta))

    def moment(self, k, rho=1.0):
        """E[r^k] under F_rho; finite only for k < beta."""
        if k >= self.beta:
            raise ConditionError(f"radius moment of order {k} diverges (beta={self.beta})")
        return self.beta * self.scale(rho) ** k / (self.beta - k)


@dataclass(frozen=True)
class WeightLaw:
    """Law G of the ball weights.

    Build with :meth:`gaussian`, :meth:`stable` or :meth:`two_sided_pareto`.
    Stable parameters use the convention
    log E[exp(i u m)] = i u tau - sigma^alpha |u|^alpha (1 + i b sign(u) tan(pi alpha / 2)).
    """

    kind: str
    mean: float = 0.0
    variance: float = 1.0
    alpha: float = 2.0
    sigma: float = 1.0
    b: float = 0.0
    tau: float = 0.0
    scale: float = 1.0

    @classmethod
    def gaussian(cls, mean=0.0, variance=1.0):
        if variance < 0:
            raise ValueError("variance must be non-negative")
        return cls("gaussian", mean=float(mean), variance=float(variance))

    @classmethod
    def stable(cls, alpha, sigma, b=0.0, tau=0.0):
        if not 1.0 < alpha <= 2.0:
            raise ValueError("alpha must lie in (1, 2]")
        if sigma <= 0 or abs(b) > 1:
            raise ValueError("need sigma > 0 and |b| <= 1")
        return cls("exact-stable", alpha=float(alpha), sigma=float(sigma), b=float(b), tau=float(tau))

    @classmethod
    def two_sided_pareto(cls, alpha, scale=1.0):
        """Symmetric weights with P(|m| > x) = (x/scale)^-alpha, x >= scale."""
        if not 1.0 < alpha < 2.0:
            raise ValueError("two-sided Pareto weights need alpha in (1, 2)")
        return cls("two-sided-pareto", alpha=float(alpha), scale=float(scale))

    def __post_init__(self):
        if self.kind not in ("gaussian", "exact-stable", "two-sided-pareto"):
            raise ValueError(f"unsupported weight law {self.kind!r}")

    @property
    def index(self):
        """Stability index of the attracting law."""
        return 2.0 if self.kind == "gaussian" else self.alpha

    @cached_property
    def stable_parameters(self):
        """(alpha, sigma, b, tau) of the stable law attracting G."""
        if self.kind == "gaussian":
            return 2.0, math.sqrt(self.variance / 2.0), 0.0, self.mean
        if self.kind == "exact-stable":
            return self.alpha, self.sigma, self.b, self.tau
        from .limits import calibrate_stable_parameters

        return calibrate_stable_parameters(self)

    def moment(self, order):
        """Raw moment int m^order G(dm); inf when it does not exist."""
        if order == 0:
            return 1.0
        if self.kind == "gaussian":
            return float(stats.norm(self.mean, math.sqrt(self.variance)).moment(order))
        if self.kind == "exact-stable":
            if self.alpha == 2.0:
                return float(stats.norm(self.tau, math.sqrt(2.0) * self.sigma).moment(order))
            return self.tau if order == 1 else math.inf
        # symmetric Pareto: odd moments vanish below alpha
        if order >= self.alpha:
            return math.inf
        return 0.0

    def abs_moment(self, order):
        """E|m|^order; inf when it does not exist."""
        if order == 0:
            return 1.0
        if self.kind == "gaussian" or (self.kind == "exact-stable" and self.alpha == 2.0):
            loc, var = (self.mean, self.variance) if self.kind == "gaussian" else (self.tau, 2 * self.sigma**2)
            if var == 0:
                return abs(loc) ** order
            if loc == 0:
                return var ** (order / 2) * 2 ** (order / 2) * special.gamma((order + 1) / 2) / math.sqrt(math.pi)
            sd = math.sqrt(var)
            return float(stats.norm(loc, sd).expect(lambda m: np.abs(m) ** order))
        if order >= self.alpha:
            return math.inf
        if self.kind == "two-sided-pareto":
            return self.alpha * self.scale**order / (self.alpha - order)
        # E|X| of a stable variable from its characteristic function
        if order != 1:
            raise NotImplementedError("only first absolute moments of stable weights")
        from .limits import psi_alpha

        def integrand(u):
            cf = np.exp(1j * u * self.tau + psi_alpha(u, self.alpha, self.sigma, self.b))
            return (1.0 - cf.real) / u**2

        val = integrate.quad(integrand, 0, 1, limit=200)[0] + integrate.quad(integrand, 1, np.inf, limit=200)[0]
        return 2.0 / math.pi * val


@dataclass(frozen=True)
class IntensityLaw:
    """Intensity lambda(rho) = coef * rho^-theta."""

    coef: float = 1.0
    theta: float = 0.0

    def __call__(self, rho):
        return self.coef * rho ** (-self.theta)

    def classify(self, beta):
        """Return (regime, a) from the behavior of lambda(rho) rho^beta at 0."""
        if self.coef == 0:
            return "intermediate", 0.0
        if self.theta > beta:
            return "large", None
        if math.isclose(self.theta, beta, rel_tol=0, abs_tol=1e-12):
            return "intermediate", self.coef
        return "small", 0.0


# --------------------------------------------------------------------------
# shape functions
# --------------------------------------------------------------------------

_SHAPES = ("ball-indicator", "gaussian-bump", "power-decay")


def _sphere_area(d):
    return 2 * math.pi ** (d / 2) / special.gamma(d / 2)


@dataclass(frozen=True)
class ShapeFunction:
    """Radial fading profile h with h(0) = 1, 0 <= h <= 1.

    All provided kinds are radially non-increasing, so the radial majorant
    h* coincides with h.
    """

    kind: str
    d: int = 1
    q: float | None = None

    def __post_init__(self):
        if self.kind not in _SHAPES:
            raise ValueError(f"unknown shape {self.kind!r}; expected one of {_SHAPES}")
        if self.kind == "power-decay" and self.q is None:
            object.__setattr__(self, "q", float(self.d + 1))

    def radial(self, rad):
        rad = np.abs(np.asarray(rad, dtype=float))
        if self.kind == "ball-indicator":
            return (rad <= 1.0).astype(float)
        if self.kind == "gaussian-bump":
            return np.exp(-rad * rad)
        return (1.0 + rad) ** (-self.q)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            return self.radial(y)
        return self.radial(np.linalg.norm(y, axis=-1))

    majorant = __call__

    def lp_norm(self, p):
        """(int |h|^p)^(1/p) in closed form."""
        return self.lp_norm_p(p) ** (1.0 / p)

    def lp_norm_p(self, p):
        """int |h|^p."""
        d = self.d
        if self.kind == "ball-indicator":
            return math.pi ** (d / 2) / special.gamma(d / 2 + 1)
        if self.kind == "gaussian-bump":
            return (math.pi / p) ** (d / 2)
        if p * self.q <= d:
            raise ConditionError(f"power-decay shape with q={self.q} is not in L^{p}(R^{d})")
        return _sphere_area(d) * special.beta(d, p * self.q - d)

    def lp_norm_quadrature(self, p, rtol=1e-9):
        """Radial quadrature of int |h|^p, independent of the closed forms."""
        d = self.d
        if self.kind == "power-decay" and p * self.q <= d:
            raise ConditionError(f"power-decay shape with q={self.q} is not in L^{p}(R^{d})")
        f = lambda s: self.radial(s) ** p * s ** (d - 1)
        upper = 1.0 if self.kind == "ball-indicator" else np.inf
        val = integrate.quad(f, 0, min(upper, 1.0), epsrel=rtol, limit=200)[0]
        if upper > 1.0:
            val += integrate.quad(f, 1.0, upper, epsrel=rtol, limit=200)[0]
        return (_sphere_area(d) * val) ** (1.0 / p)

    def support_radius(self, eps):
        """rho_h(eps): |h(y)| <= eps whenever |y| > rho_h(eps)."""
        if eps >= 1:
            return 0.0
        if self.kind == "ball-indicator":
            return 1.0
        if self.kind == "gaussian-bump":
            return math.sqrt(math.log(1.0 / eps))
        return eps ** (-1.0 / self.q) - 1.0

    def tail_mass(self, radius):
        """int_{|y| > radius} |h(y)| dy."""
        d = self.d
        radius = max(float(radius), 0.0)
        if self.kind == "ball-indicator":
            if radius >= 1.0:
                return 0.0
            return math.pi ** (d / 2) / special.gamma(d / 2 + 1) * (1 - radius**d)
        if self.kind == "gaussian-bump":
            return math.pi ** (d / 2) * special.gammaincc(d / 2, radius * radius)
        if self.q <= d:
            return math.inf
        z = radius / (1.0 + radius)
        return _sphere_area(d) * special.beta(d, self.q - d) * special.betaincc(d, self.q - d, z)


# --------------------------------------------------------------------------
# densities: signed sums of boxes and smooth bumps
# --------------------------------------------------------------------------


def _bump1(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    inside = np.abs(u) < 1
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui * ui))
    return out


def _bump1_prime(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    inside = np.abs(u) < 1
    ui = u[inside]
    g = 1.0 - ui * ui
    out[inside] = np.exp(-1.0 / g) * (-2.0 * ui / (g * g))
    return out


BUMP_MASS = integrate.quad(lambda u: math.exp(-1.0 / (1.0 - u * u)), -1, 1, epsabs=0, epsrel=1e-13)[0]


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    @property
    def d(self):
        return len(self.lower)

    def bounds(self):
        return np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)

    def volume(self):
        lo, hi = self.bounds()
        return float(np.prod(hi - lo))

    def __call__(self, y):
        lo, hi = self.bounds()
        y = np.asarray(y, dtype=float)
        return np.all((y >= lo) & (y <= hi), axis=-1).astype(float)


@dataclass(frozen=True)
class Bump:
    """Product bump prod_i b((y_i - c_i)/w) with b(u) = exp(-1/(1-u^2))."""

    center: tuple
    width: float = 1.0

    @property
    def d(self):
        return len(self.center)

    def bounds(self):
        c = np.asarray(self.center, dtype=float)
        return c - self.width, c + self.width

    def volume(self):
        return (self.width * BUMP_MASS) ** self.d

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        c = np.asarray(self.center, dtype=float)
        return np.prod(_bump1((y - c) / self.width), axis=-1)

    def mixed_derivative(self, y):
        """d^d/(dy_1...dy_d) of the bump."""
        y = np.asarray(y, dtype=float)
        c = np.asarray(self.center, dtype=float)
        return np.prod(_bump1_prime((y - c) / self.width) / self.width, axis=-1)


@dataclass(frozen=True)
class Density:
    """Finite signed combination sum_j c_j * piece_j of boxes and bumps."""

    d: int
    terms: tuple = ()

    @classmethod
    def box(cls, lower, upper, coef=1.0):
        lower = tuple(float(v) for v in np.atleast_1d(lower))
        upper = tuple(float(v) for v in np.atleast_1d(upper))
        if len(lower) != len(upper) or any(a > b for a, b in zip(lower, upper)):
            raise ValueError("box needs lower <= upper componentwise")
        return cls(len(lower), ((float(coef), Box(lower, upper)),))

    @classmethod
    def bump(cls, center, width=1.0, coef=1.0):
        center = tuple(float(v) for v in np.atleast_1d(center))
        return cls(len(center), ((float(coef), Bump(center, float(width))),))

    @property
    def is_zero(self):
        return all(c == 0 for c, _ in self.terms)

    @property
    def boxes_only(self):
        return all(isinstance(p, Box) for _, p in self.terms)

    def __add__(self, other):
        if self.d != other.d:
            raise ValueError("dimension mismatch")
        return Density(self.d, self.terms + other.terms)

    def __mul__(self, k):
        return Density(self.d, tuple((k * c, p) for c, p in self.terms))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] if y.ndim > 1 or self.d > 1 else y.shape)
        if self.d == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        for c, piece in self.terms:
            out = out + c * piece(y)
        return out

    def mass(self):
        """mu(R^d)."""
        return float(sum(c * p.volume() for c, p in self.terms))

    def support_box(self):
        if not self.terms:
            return np.zeros(self.d), np.zeros(self.d)
        lows, highs = zip(*(p.bounds() for _, p in self.terms))
        return np.min(lows, axis=0), np.max(highs, axis=0)

    def canonical(self):
        """Box-only densities rewritten as disjoint constant cells."""
        if not self.boxes_only or not self.terms:
            return self
        cells, values = self._cells()
        keep = np.abs(values) > 1e-14
        terms = tuple(
            (float(v), Box(tuple(map(float, lo)), tuple(map(float, hi)))) for (lo, hi), v in zip(cells[keep], values[keep])
        )
        return Density(self.d, terms)

    def _cells(self):
        breaks = []
        for axis in range(self.d):
            pts = set()
            for _, p in self.terms:
                pts.add(p.lower[axis])
                pts.add(p.upper[axis])
            breaks.append(np.array(sorted(pts)))
        lows = np.meshgrid(*[b[:-1] for b in breaks], indexing="ij")
        highs = np.meshgrid(*[b[1:] for b in breaks], indexing="ij")
        lo = np.stack([g.ravel() for g in lows], axis=-1)
        hi = np.stack([g.ravel() for g in highs], axis=-1)
        mid = 0.5 * (lo + hi)
        values = np.zeros(len(mid))
        for c, p in self.terms:
            plo, phi = p.bounds()
            values += c * np.all((mid > plo) & (mid < phi), axis=-1)
        return np.stack([lo, hi], axis=1), values

    def lp_norm_p(self, p, rtol=1e-9):
        """int |phi|^p: exact for boxes, graded quadrature otherwise."""
        if not self.terms:
            return 0.0
        if self.boxes_only:
            cells, values = self._cells()
            vol = np.prod(cells[:, 1] - cells[:, 0], axis=-1)
            return float(np.sum(np.abs(values) ** p * vol))
        return self._lp_quadrature(p, rtol)

    def lp_norm(self, p, rtol=1e-9):
        return self.lp_norm_p(p, rtol) ** (1.0 / p)

    def _lp_quadrature(self, p, rtol):
        lo, hi = self.support_box()
        edges = []
        for axis in range(self.d):
            pts = {lo[axis], hi[axis]}
            for _, piece in self.terms:
                a, b = piece.bounds()
                pts.update((a[axis], b[axis]))
                if isinstance(piece, Bump):
                    pts.add(piece.center[axis])
            edges.append(np.array(sorted(pts)))
        prev = None
        for order in (8, 16, 32, 64):
            nodes, weights = tensor_rule([panel_rule(e, order) for e in edges])
            val = float(np.sum(weights * np.abs(self(nodes)) ** p))
            if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1e-300):
                return val
            prev = val
        return val


# --------------------------------------------------------------------------
# parametric families and blocks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    """Block [s, t] in R^p with s <= t componentwise."""

    s: tuple
    t: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in np.atleast_1d(self.s))
        t = tuple(float(v) for v in np.atleast_1d(self.t))
        if len(s) != len(t) or any(a > b for a, b in zip(s, t)):
            raise ValueError("block needs s <= t componentwise")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)

    @property
    def p(self):
        return len(self.s)

    @property
    def active_dims(self):
        return tuple(i for i, (a, b) in enumerate(zip(self.s, self.t)) if a < b)

    @property
    def dimension(self):
        return len(self.active_dims)

    @property
    def volume(self):
        return float(np.prod([self.t[i] - self.s[i] for i in self.active_dims]))

    def corners(self):
        """(sign, corner) pairs of the alternating corner expansion.

        Degenerate coordinates keep epsilon_i = 0; the sign is
        (-1)^(k - sum(eps)) with k the block dimension, so a fully degenerate
        block reduces to the single corner s with sign +1.
        """
        active = self.active_dims
        k = len(active)
        out = []
        for eps in itertools.product((0, 1), repeat=k):
            corner = list(self.s)
            for e, i in zip(eps, active):
                if e:
                    corner[i] = self.t[i]
            out.append(((-1) ** (k - sum(eps)), tuple(corner)))
        return out


@dataclass(frozen=True)
class MeasureFamily:
    """Parametric family t -> phi_t of densities on R^d, t in R^p.

    ``signed-uniform``: phi_t = sign(t_1)...sign(t_p) 1_[0,t] (p = d).
    ``smooth``: phi_t(y) = g(y - embed @ t) for a product bump g.
    """

    kind: str
    d: int = 1
    p: int = 1
    width: float = 1.0
    center: tuple = ()
    embed: tuple = ()

    def __post_init__(self):
        if self.kind not in ("signed-uniform", "smooth"):
            raise ValueError(f"unknown family {self.kind!r}")
        if self.kind == "signed-uniform" and self.p != self.d:
            raise ValueError("signed-uniform family needs p == d")
        if self.kind == "smooth":
            if not self.center:
                object.__setattr__(self, "center", (0.0,) * self.d)
            if not self.embed:
                eye = np.eye(self.d, self.p)
                object.__setattr__(self, "embed", tuple(map(tuple, eye)))

    def density(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if t.shape != (self.p,):
            raise ValueError(f"parameter must have {self.p} components")
        if self.kind == "signed-uniform":
            sign = float(np.prod(np.sign(t)))
            if sign == 0:
                return Density(self.d)
            return Density.box(np.minimum(t, 0), np.maximum(t, 0), coef=sign)
        shift = np.asarray(self.embed) @ t
        return Density.bump(np.asarray(self.center) + shift, self.width)

    def support_box(self, T):
        """Box containing supp phi_t for all t in [-T, T]^p."""
        if self.kind == "signed-uniform":
            return np.full(self.d, -float(T)), np.full(self.d, float(T))
        reach = np.abs(np.asarray(self.embed)).sum(axis=1) * T
        c = np.asarray(self.center)
        return c - reach - self.width, c + reach + self.width


def block_increment_density(family: MeasureFamily, block: Block) -> Density:
    """Density of the generalized increment of the family over ``block``."""
    if block.p != family.p:
        raise ValueError("block dimension does not match the family")
    out = Density(family.d)
    for sign, corner in block.corners():
        out = out + sign * family.density(corner)
    return out.canonical()


@dataclass
class PEstimate:
    C_T: float
    ratios: np.ndarray
    degenerate: np.ndarray
    passed: bool


def estimate_property_P(family, gamma, T, n_blocks, rng, allow_degenerate=False):
    """Empirical constant of the block-increment L^gamma control.

    Draws random blocks in [-T, T]^p and returns the largest ratio
    ||phi_[s,t]||_gamma^gamma / prod_active (t_i - s_i).
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    p = family.p
    ratios = np.empty(n_blocks)
    degen = np.zeros(n_blocks, dtype=bool)
    for j in range(n_blocks):
        a = rng.uniform(-T, T, size=(2, p))
        s, t = a.min(axis=0), a.max(axis=0)
        if allow_degenerate:
            flat = rng.random(p) < 0.5
            if flat.all():
                flat[rng.integers(p)] = False
            t = np.where(flat, s, t)
            degen[j] = flat.any()
        block = Block(tuple(s), tuple(t))
        phi = block_increment_density(family, block)
        ratios[j] = phi.lp_norm_p(gamma) / block.volume
    cmax = float(np.max(ratios)) if n_blocks else 0.0
    return PEstimate(cmax, ratios, degen, bool(np.isfinite(cmax)))


# --------------------------------------------------------------------------
# model parameters and condition checks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    d: int
    alpha: float
    sigma: float
    b: float
    tau: float
    beta: float
    C_beta: float
    intensity: IntensityLaw
    regime: str
    a: float | None = None
    p: int = 1

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        if not 1.0 < self.alpha <= 2.0:
            raise ConditionError("(A1) alpha must lie in (1, 2]")
        if self.sigma <= 0 or abs(self.b) > 1:
            raise ConditionError("(A1) need sigma > 0 and |b| <= 1")
        if self.regime not in ("large", "intermediate"):
            raise ConditionError(f"unsupported regime {self.regime!r}")

    def violations(self):
        out = []
        if not self.d < self.beta < self.alpha * self.d:
            out.append(f"(A2) range violated: need d < beta < alpha*d, got d={self.d}, beta={self.beta}, alpha={self.alpha}")
        regime, a = self.intensity.classify(self.beta)
        if regime != self.regime:
            out.append(f"regime/normalization mismatch: intensity gives {regime!r}, declared {self.regime!r}")
        elif regime == "intermediate" and not math.isclose(a, self.a or 0.0):
            out.append(f"intermediate limit a={a} does not match declared a={self.a}")
        return out

    def normalization(self, rho):
        """n(rho)."""
        if self.regime == "intermediate":
            return 1.0
        return (self.intensity(rho) * rho**self.beta) ** (1.0 / self.alpha)

    def lam(self, rho):
        return self.intensity(rho)


@dataclass(frozen=True)
class BallModel:
    """The laws (F, G, h) together with the derived parameter set."""

    radius: RadiusLaw
    weight: WeightLaw
    shape: ShapeFunction
    intensity: IntensityLaw
    params: ModelParams

    @classmethod
    def build(cls, radius, weight, shape, intensity, regime=None, p=1, strict=True):
        alpha, sigma, b, tau = weight.stable_parameters
        found, a = intensity.classify(radius.beta)
        if regime is None:
            regime = found if found != "small" else "large"
        params = ModelParams(
            d=shape.d, alpha=alpha, sigma=sigma, b=b, tau=tau, beta=radius.beta,
            C_beta=radius.C_beta, intensity=intensity, regime=regime,
            a=a if regime == "intermediate" else None, p=p,
        )
        model = cls(radius, weight, shape, intensity, params)
        if strict:
            check_conditions(model).raise_for_failure()
        return model

    @property
    def d(self):
        return self.shape.d


@dataclass
class ConditionReport:
    checks: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks.values())

    def failures(self):
        return [c["message"] for c in self.checks.values() if not c["passed"]]

    def raise_for_failure(self):
        if not self.passed:
            raise ConditionError("; ".join(self.failures()))

    def to_dict(self):
        return {"passed": self.passed, "checks": self.checks}


def check_conditions(model: BallModel) -> ConditionReport:
    """Check (A1)-(A3), the Fubini integrability and the regime of lambda."""
    prm, F, G, h = model.params, model.radius, model.weight, model.shape
    rep = ConditionReport()
    alpha, d, beta = prm.alpha, prm.d, prm.beta

    rep.checks["A1"] = {
        "passed": True,
        "message": "G in the normal domain of attraction",
        "alpha": alpha, "sigma": prm.sigma, "b": prm.b, "tau": prm.tau,
        "abs_first_moment": G.abs_moment(1),
    }

    ok = d < beta < alpha * d
    a2 = {"passed": ok, "beta": beta, "d": d, "alpha_d": alpha * d, "C_beta": F.C_beta}
    a2["message"] = "tail index in range" if ok else f"(A2) range violated: need {d} < beta < {alpha * d}, got beta={beta}"
    if beta > d:
        a2["radius_moment_d"] = F.moment(d)
    rep.checks["A2"] = a2

    a3 = {"passed": True, "message": "h* in L^1 and L^alpha"}
    try:
        a3["h_L1"] = h.lp_norm(1.0)
        a3["h_Lalpha"] = h.lp_norm(alpha)
    except ConditionError as exc:
        a3.update(passed=False, message=f"(A3) violated: {exc}")
    if h.d != d:
        a3.update(passed=False, message="(A3) shape dimension differs from d")
    rep.checks["A3"] = a3

    finite = [
        ("h_L1", a3.get("h_L1", math.inf)),
        ("radius_moment_d", a2.get("radius_moment_d", math.inf)),
        ("weight_abs_moment_1", G.abs_moment(1)),
    ]
    fub_ok = all(math.isfinite(v) for _, v in finite)
    rep.checks["fubini"] = {
        "passed": fub_ok,
        "message": "integrals finite" if fub_ok else "integrability of the mean field fails",
        **dict(finite),
    }

    regime, a = prm.intensity.classify(beta)
    reg_ok = regime == prm.regime and (regime != "intermediate" or math.isclose(a, prm.a or 0.0))
    rep.checks["regime"] = {
        "passed": reg_ok,
        "declared": prm.regime,
        "from_intensity": regime,
        "a": a,
        "message": "regime consistent" if reg_ok else f"regime/normalization mismatch: intensity gives {regime!r}",
    }
    return rep


def lp_norm(f, p):
    """L^p norm of a shape function or a density."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return f.lp_norm(p)
