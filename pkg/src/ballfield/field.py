"""Smeared shapes, field values and rescaled fields on sampled configurations."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._numerics import SQRT_PI, erf_diff, gauss_legendre, tensor_rule
from .model import BallModel, Block, Box, Bump, ConditionError, Density, MeasureFamily, ShapeFunction
from .sampler import BallConfiguration, build_window, sample_batch, substream

# 1-D Gauss-Legendre panels for smooth separable pieces
_PANELS = 8
_ORDER = 24
# gaussian kernel is below 1e-31 beyond this many radii
_GAUSS_REACH = 8.5


# --------------------------------------------------------------------------
# smeared shape mu[tau_{x,r} h]
# --------------------------------------------------------------------------


def _power_primitive_diff(a, b, q, delta=None, mid=None):
    """int_a^b (1+|z|)^-q dz, cancellation-free on each side of 0.

    Short intervals away from 0 use the midpoint expansion with the exact
    ``delta``/``mid`` when supplied.
    """
    fa = (1.0 + np.abs(a)) ** (1.0 - q)
    fb = (1.0 + np.abs(b)) ** (1.0 - q)
    pos = a >= 0
    neg = b <= 0
    out = (2.0 - fa - fb) / (q - 1.0)
    out = np.where(pos, (fa - fb) / (q - 1.0), out)
    out = np.where(neg, (fb - fa) / (q - 1.0), out)
    delta = b - a if delta is None else delta
    mid = 0.5 * (a + b) if mid is None else mid
    u = 1.0 + np.abs(mid)
    small = (np.abs(delta) < 1e-3 * u) & (pos | neg)
    series = delta * u ** (-q) * (1.0 + q * (q + 1.0) * (delta / u) ** 2 / 24.0)
    return np.where(small, series, out)


def _composite_1d(f, lo, hi):
    """Vectorized composite GL of f(y) over per-row intervals [lo, hi]."""
    x, w = gauss_legendre(_ORDER)
    width = (hi - lo) / _PANELS
    starts = lo[:, None] + width[:, None] * np.arange(_PANELS)[None, :]
    nodes = starts[:, :, None] + 0.5 * width[:, None, None] * (1.0 + x)[None, None, :]
    vals = f(nodes.reshape(len(lo), -1)).reshape(nodes.shape)
    return np.sum(vals * w[None, None, :], axis=(1, 2)) * 0.5 * width


def _bump_axis(piece: Bump, axis, h: ShapeFunction, xi, r):
    """int b((y - c)/w) k((y - xi)/r) dy for one axis of a separable kernel."""
    c, w = piece.center[axis], piece.width

    def bump_vals(y):
        u = (y - c) / w
        out = np.zeros(u.shape)
        ok = np.abs(u) < 1
        out[ok] = np.exp(-1.0 / (1.0 - u[ok] ** 2))
        return out

    reach = {"gaussian-bump": _GAUSS_REACH, "ball-indicator": 1.0}.get(h.kind, np.inf)
    lo = np.maximum(c - w, xi - reach * r)
    hi = np.minimum(c + w, xi + reach * r)
    out = np.zeros(xi.shape)
    ok = hi > lo
    if not np.any(ok):
        return out
    xo, ro, lo, hi = xi[ok], r[ok], lo[ok], hi[ok]

    if h.kind == "power-decay":
        # y = x +- r (e^u - 1) flattens the kernel peak of width r
        def side(sign, near, far):
            def f(u):
                y = xo[:, None] + sign * ro[:, None] * np.expm1(u)
                return bump_vals(y) * np.exp((1.0 - h.q) * u) * ro[:, None]

            near, far = np.maximum(near, 0.0), np.maximum(far, 0.0)
            return _composite_1d(f, np.log1p(near / ro), np.log1p(np.maximum(far, near) / ro))

        out[ok] = side(1.0, lo - xo, hi - xo) + side(-1.0, xo - hi, xo - lo)
        return out

    def integrand(y):
        z = np.abs(y - xo[:, None]) / ro[:, None]
        k = np.exp(-z * z) if h.kind == "gaussian-bump" else 1.0
        return bump_vals(y) * k

    out[ok] = _composite_1d(integrand, lo, hi)
    return out


def _box_smear(piece: Box, h: ShapeFunction, x, r):
    lo, hi = piece.bounds()
    # exact width and midpoint: for r >> hi - lo the two ends round together
    width = [(hi[i] - lo[i]) / r for i in range(len(lo))]
    mid = [(0.5 * (lo[i] + hi[i]) - x[:, i]) / r for i in range(len(lo))]
    if h.kind == "gaussian-bump":
        out = np.ones(len(r))
        for i in range(len(lo)):
            out *= 0.5 * SQRT_PI * r * erf_diff((lo[i] - x[:, i]) / r, (hi[i] - x[:, i]) / r, width[i], mid[i])
        return out
    if h.d == 1 and h.kind == "ball-indicator":
        return np.clip(np.minimum(hi[0], x[:, 0] + r) - np.maximum(lo[0], x[:, 0] - r), 0.0, None)
    if h.d == 1 and h.kind == "power-decay":
        return r * _power_primitive_diff((lo[0] - x[:, 0]) / r, (hi[0] - x[:, 0]) / r, h.q, width[0], mid[0])
    return _generic_smear(Density(h.d, ((1.0, piece),)), h, x, r)


def _bump_smear(piece: Bump, h: ShapeFunction, x, r):
    if h.kind == "gaussian-bump" or h.d == 1:
        out = np.ones(len(r))
        for i in range(h.d):
            out *= _bump_axis(piece, i, h, x[:, i], r)
        return out
    return _generic_smear(Density(h.d, ((1.0, piece),)), h, x, r)


def _generic_smear(density, h, x, r, rtol=1e-9):
    """Tensor GL over the support of phi, order doubled until rtol."""
    lo, hi = density.support_box()
    out = np.empty(len(r))
    for j in range(len(r)):
        prev = None
        for order in (32, 64, 128):
            rules = []
            for i in range(h.d):
                edges = np.unique(np.clip([lo[i], x[j, i] - r[j], x[j, i], x[j, i] + r[j], hi[i]], lo[i], hi[i]))
                gx, gw = gauss_legendre(order)
                a, b = edges[:-1], edges[1:]
                half = 0.5 * (b - a)
                nodes_i = ((a + b) / 2)[:, None] + half[:, None] * gx
                rules.append((nodes_i.ravel(), (half[:, None] * gw).ravel()))
            nodes, weights = tensor_rule(rules)
            val = float(np.sum(weights * h((nodes - x[j]) / r[j]) * density(nodes)))
            if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1e-300):
                break
            prev = val
        out[j] = val
    return out


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x.reshape(-1, 1) if d == 1 else x.reshape(1, d)
    return x


def smeared_shape(density: Density, h: ShapeFunction, x, r):
    """mu[tau_{x,r} h] = int h((y - x)/r) phi(y) dy, vectorized over (x, r)."""
    scalar = np.ndim(r) == 0
    xs = _as_points(x, h.d)
    r = np.broadcast_to(np.asarray(r, dtype=float), (len(xs),)).copy() if scalar else np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("radius must be positive")
    out = np.zeros(len(r))
    for c, piece in density.terms:
        if c == 0:
            continue
        if isinstance(piece, Box):
            out += c * _box_smear(piece, h, xs, r)
        else:
            out += c * _bump_smear(piece, h, xs, r)
    return float(out[0]) if scalar and len(out) == 1 else out


# --------------------------------------------------------------------------
# field values
# --------------------------------------------------------------------------


def field_value(config: BallConfiguration, density: Density, h: ShapeFunction):
    """M_rho(mu) on one configuration."""
    if len(config) == 0:
        return 0.0
    return float(np.dot(config.m, smeared_shape(density, h, config.x, config.r)))


def expected_field(model: BallModel, rho, density: Density):
    """E M_rho(mu) = lambda mu(R^d) int h E_{F_rho}[r^d] int m G(dm)."""
    mean_m = model.weight.moment(1)
    lam = model.params.lam(rho)
    if mean_m == 0 or lam == 0 or density.is_zero:
        return 0.0
    return lam * density.mass() * model.shape.lp_norm_p(1.0) * model.radius.moment(model.d, rho) * mean_m


@dataclass(frozen=True)
class FieldSample:
    value: float
    rho: float
    measure_id: str
    regime: str
    normalization: float
    centered: bool
    raw: float
    expected: float
    bias_bound: float


def rescaled_field(config: BallConfiguration, model: BallModel, density: Density, measure_id="phi"):
    """(M_rho(mu) - E M_rho(mu)) / n(rho) with the window bias attached."""
    prm = model.params
    regime, _ = prm.intensity.classify(prm.beta)
    if regime != prm.regime:
        raise ConditionError(f"regime/normalization mismatch: intensity gives {regime!r}")
    rho = config.rho
    norm = prm.normalization(rho)
    raw = field_value(config, density, model.shape)
    mean = expected_field(model, rho, density)
    return FieldSample(
        (raw - mean) / norm, rho, measure_id, prm.regime, norm, True, raw, mean, config.window.bias_bound / norm
    )


# --------------------------------------------------------------------------
# grid paths and block increments
# --------------------------------------------------------------------------


@dataclass
class GridPath:
    axes: list
    values: np.ndarray
    mesh: float
    T: float
    rho: float

    @property
    def p(self):
        return len(self.axes)

    def index_of(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = t / self.mesh
        idx = np.rint(k)
        if np.any(np.abs(k - idx) > 1e-7) or np.any(np.abs(idx) > (len(self.axes[0]) - 1) // 2):
            raise ValueError(f"corner {tuple(t)} is not a grid node")
        return tuple(int(i) + (len(ax) - 1) // 2 for i, ax in zip(idx, self.axes))

    def __call__(self, t):
        return float(self.values[self.index_of(t)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow([f"t_{i + 1}" for i in range(self.p)] + ["value"])
            for idx in np.ndindex(self.values.shape):
                ts = [self.axes[i][j] for i, j in enumerate(idx)]
                out.writerow([f"{v:.17g}" for v in (*ts, self.values[idx])])


def grid_axis(T, mesh):
    K = int(round(T / mesh))
    if not math.isclose(K * mesh, T, rel_tol=1e-9):
        raise ValueError("T must be a multiple of the mesh")
    return mesh * np.arange(-K, K + 1)


def _axis_primitive(h, xi, r, t):
    """int_0^t k((y - xi)/r) dy for each point (rows) and node (columns)."""
    z0 = (-xi / r)[:, None]
    zt = (t[None, :] - xi[:, None]) / r[:, None]
    width = t[None, :] / r[:, None]
    mid = (0.5 * t[None, :] - xi[:, None]) / r[:, None]
    if h.kind == "gaussian-bump":
        return 0.5 * SQRT_PI * r[:, None] * erf_diff(z0, zt, width, mid)
    if h.kind == "ball-indicator":
        return np.clip(zt, -1, 1) * r[:, None] - np.clip(z0, -1, 1) * r[:, None]
    # power-decay, d = 1
    lo, hi = np.minimum(z0, zt), np.maximum(z0, zt)
    return np.sign(width) * r[:, None] * _power_primitive_diff(lo, hi, h.q, np.abs(width), mid)


def grid_path(config: BallConfiguration, model: BallModel, family: MeasureFamily, T, mesh):
    """M_rho-tilde(mu_t) at every node of the lattice mesh*Z^p within [-T, T]^p."""
    lo, hi = family.support_box(T)
    if not config.window.covers(lo, hi):
        raise ValueError("window too small for the grid range")
    prm, h = model.params, model.shape
    axis = grid_axis(T, mesh)
    axes = [axis] * family.p
    norm = prm.normalization(config.rho)
    separable = family.kind == "signed-uniform" and (h.kind == "gaussian-bump" or h.d == 1)
    if separable:
        vals = np.zeros((len(axis),) * family.p)
        if len(config):
            factors = [_axis_primitive(h, config.x[:, i], config.r, axis) for i in range(family.p)]
            letters = "abcdefgh"[: family.p]
            spec = ",".join(f"n{c}" for c in letters)
            vals = np.einsum(f"n,{spec}->{letters}", config.m, *factors)
    else:
        vals = np.empty((len(axis),) * family.p)
        for idx in np.ndindex(vals.shape):
            t = np.array([axis[j] for j in idx])
            vals[idx] = field_value(config, family.density(t), h)
    # centering is linear in mu: E M(mu_t) = c * mu_t(R^d)
    mean_unit = expected_field(model, config.rho, Density.box(np.zeros(family.d), np.ones(family.d)))
    if mean_unit:
        mass = np.ones_like(vals)
        for idx in np.ndindex(vals.shape):
            mass[idx] = family.density(np.array([axis[j] for j in idx])).mass()
        vals = vals - mean_unit * mass
    return GridPath(axes, vals / norm, float(mesh), float(T), config.rho)


def block_increment_field(path: GridPath, block: Block):
    """Alternating corner sum of the path over ``block``."""
    return float(sum(sign * path(corner) for sign, corner in block.corners()))


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported test function on R^d with its mixed derivative."""

    value: callable
    mixed_derivative: callable
    lower: tuple
    upper: tuple

    @classmethod
    def bump(cls, center, width):
        piece = Bump(tuple(float(c) for c in np.atleast_1d(center)), float(width))
        lo, hi = piece.bounds()
        return cls(piece, piece.mixed_derivative, tuple(lo), tuple(hi))

    @classmethod
    def zero(cls, d=1):
        z = lambda y: np.zeros(np.shape(y)[:-1])
        return cls(z, z, (0.0,) * d, (0.0,) * d)

    def density(self):
        if isinstance(self.value, Bump):
            return Density(self.value.d, ((1.0, self.value),))
        return Density(len(self.lower))


@dataclass(frozen=True)
class Pairing:
    value: float
    error_estimate: float
    bound: float


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def distributional_pairing(path: GridPath, test_fn: TestFunction):
    """(-1)^d int M_hat(y) D phi(y) dy by the trapezoid rule on the grid."""
    d = path.p
    if np.any(np.asarray(test_fn.lower) < -path.T - 1e-12) or np.any(np.asarray(test_fn.upper) > path.T + 1e-12):
        raise ValueError("test function support escapes the grid")
    mesh_nodes = np.meshgrid(*path.axes, indexing="ij")
    y = np.stack([g.ravel() for g in mesh_nodes], axis=-1)
    deriv = np.asarray(test_fn.mixed_derivative(y)).reshape(path.values.shape)
    integrand = path.values * deriv

    def trap(stride):
        arr = integrand[(slice(None, None, stride),) * d]
        w = _trapezoid_weights(arr.shape[0], path.mesh * stride)
        out = arr
        for _ in range(d):
            out = np.tensordot(out, w, axes=([0], [0]))
        return float(out)

    fine = trap(1)
    coarse = trap(2) if (len(path.axes[0]) - 1) % 2 == 0 else fine
    bound = (2 * path.T) ** d * float(np.max(np.abs(path.values))) * float(np.max(np.abs(deriv)))
    return Pairing((-1) ** d * fine, abs(fine - coarse), bound)


# --------------------------------------------------------------------------
# batch Monte Carlo
# --------------------------------------------------------------------------

POINTS_PER_CHUNK = 1 << 21


def chunk_size(window, n_replicates):
    per = max(window.dominating_intensity, 1.0)
    return int(max(1, min(n_replicates, POINTS_PER_CHUNK // per)))


def _batch_chunk(args):
    model, rho, densities, window, seed, stream, chunk, n = args
    rng = substream(seed, stream, chunk)
    counts, x, r, m = sample_batch(model, window, rng, n)
    owner = np.repeat(np.arange(n), counts)
    plan = _endpoint_plan(densities, model.shape)
    if plan is not None:
        # mu[tau h] of a box is a difference of axis primitives at its ends
        ends, coef = plan
        q = np.empty((n, len(ends)))
        xs = x[:, 0]
        # balls much larger than the endpoint span: primitives from the first
        # end, which avoids cancelling two nearly equal erf values
        big = r > 16.0 * (ends[-1] - ends[0] + 1.0)
        sm = ~big
        ob, xb, rb, mb = owner[big], xs[big] - ends[0], r[big], m[big]
        pb = _axis_primitive(model.shape, xb, rb, ends - ends[0]) if big.any() else None
        for e, t in enumerate(ends):
            prim = _endpoint_primitive(model.shape, xs[sm], r[sm], t)
            q[:, e] = np.bincount(owner[sm], weights=m[sm] * prim, minlength=n)
            if pb is not None:
                q[:, e] += np.bincount(ob, weights=mb * pb[:, e], minlength=n)
        return q @ coef
    out = np.empty((n, len(densities)))
    for j, dn in enumerate(densities):
        contrib = m * smeared_shape(dn, model.shape, x, r) if len(r) else np.zeros(0)
        out[:, j] = np.bincount(owner, weights=contrib, minlength=n)
    return out


def _endpoint_primitive(h, x, r, t):
    """An antiderivative in t of k((t - x)/r); constants cancel across box ends."""
    if h.kind == "gaussian-bump":
        return (0.5 * SQRT_PI) * r * special.erf((t - x) / r)
    if h.kind == "ball-indicator":
        return r * np.clip((t - x) / r, -1.0, 1.0)
    return _axis_primitive(h, x, r, np.array([t]))[:, 0]


def _endpoint_plan(densities, h):
    """Shared box endpoints and the (endpoint x density) coefficient matrix.

    Only for d = 1 box densities, and only when endpoints are shared.
    """
    if h.d != 1 or not all(dn.boxes_only for dn in densities):
        return None
    rows = []
    for dn in densities:
        for c, piece in dn.terms:
            rows.append((float(piece.lower[0]), float(piece.upper[0]), c))
    ends = sorted({a for a, _, _ in rows} | {b for _, b, _ in rows})
    if len(ends) >= 2 * len(rows) or len(densities) < 2:
        return None
    index = {t: i for i, t in enumerate(ends)}
    coef = np.zeros((len(ends), len(densities)))
    for j, dn in enumerate(densities):
        for c, piece in dn.terms:
            coef[index[float(piece.upper[0])], j] += c
            coef[index[float(piece.lower[0])], j] -= c
    return np.array(ends), coef


def default_jobs():
    try:
        return max(1, int(os.environ.get("BALLFIELD_JOBS", "1")))
    except ValueError:
        return 1


def simulate_fields(model: BallModel, rho, densities, n_replicates, seed, stream="field", window=None, jobs=None):
    """Rescaled fields of ``n_replicates`` independent configurations.

    Every density is evaluated on the same configurations; returns an
    array of shape (n_replicates, len(densities)). Output depends only on
    (seed, stream) and not on the number of worker processes.
    """
    single = isinstance(densities, Density)
    densities = [densities] if single else list(densities)
    window = build_window(densities, model, rho) if window is None else window
    size = chunk_size(window, n_replicates)
    tasks = []
    for chunk, start in enumerate(range(0, n_replicates, size)):
        n = min(size, n_replicates - start)
        tasks.append((model, rho, densities, window, seed, stream, chunk, n))
    jobs = default_jobs() if jobs is None else jobs
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_batch_chunk, tasks))
    else:
        parts = [_batch_chunk(t) for t in tasks]
    raw = np.concatenate(parts, axis=0) if parts else np.empty((0, len(densities)))
    means = np.array([expected_field(model, rho, dn) for dn in densities])
    out = (raw - means) / model.params.normalization(rho)
    return out[:, 0] if single else out
