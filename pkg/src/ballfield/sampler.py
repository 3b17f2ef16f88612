"""Sampling of the Poisson ball configuration and of stable variates.

Centers are drawn on a radius-dependent enlargement of the hull of supp phi,
so that every ball whose shape can reach the support above level eps_h is
kept. Radii are never capped.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass

import numpy as np

from .model import BallModel, ConditionError, Density, RadiusLaw, WeightLaw

MAX_INTENSITY = 1e9

DEFAULT_EPS = {
    "gaussian-bump": math.exp(-12.5),
    "ball-indicator": 0.5,
    "power-decay": 1e-6,
}


def stream_key(*labels):
    """Map string/int labels to a SeedSequence spawn key."""
    key = []
    for lab in labels:
        if isinstance(lab, str):
            key.append(zlib.crc32(lab.encode()))
        else:
            key.append(int(lab))
    return tuple(key)


def substream(seed, *labels):
    """Counter-based generator for the substream (seed, labels...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=stream_key(*labels))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------
# marginal laws
# --------------------------------------------------------------------------


def radius_from_uniform(F: RadiusLaw, rho, u, index=None):
    """Inverse-CDF map U -> rho*r0*U^(-1/beta); ``index`` overrides beta."""
    index = F.beta if index is None else index
    return F.scale(rho) * np.asarray(u, dtype=float) ** (-1.0 / index)


def sample_radius(F: RadiusLaw, rho, rng, size=None):
    # 1 - U lies in (0, 1] so the radius stays finite
    return radius_from_uniform(F, rho, 1.0 - rng.random(size))


def stable_cms(alpha, sigma, b, tau, rng, size=None):
    """Chambers-Mallows-Stuck draws of S_alpha(sigma, b, tau).

    Parametrized by log E exp(iuX) = iu tau - sigma^alpha |u|^alpha
    (1 + i b sign(u) tan(pi alpha/2)), i.e. the usual skewness is -b.
    """
    if alpha == 2.0:
        return tau + sigma * math.sqrt(2.0) * rng.standard_normal(size)
    skew = -b
    t = skew * math.tan(math.pi * alpha / 2)
    shift = math.atan(t) / alpha
    scale = (1.0 + t * t) ** (1.0 / (2.0 * alpha))
    v = rng.uniform(-math.pi / 2, math.pi / 2, size)
    w = rng.standard_exponential(size)
    arg = alpha * (v + shift)
    x = scale * np.sin(arg) / np.cos(v) ** (1.0 / alpha) * (np.cos(v - arg) / w) ** ((1.0 - alpha) / alpha)
    return tau + sigma * x


def sample_weight(G: WeightLaw, rng, size=None):
    if G.kind == "gaussian":
        return G.mean + math.sqrt(G.variance) * rng.standard_normal(size)
    if G.kind == "exact-stable":
        return stable_cms(G.alpha, G.sigma, G.b, G.tau, rng, size)
    mag = G.scale * (1.0 - rng.random(size)) ** (-1.0 / G.alpha)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * mag


# --------------------------------------------------------------------------
# window
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationWindow:
    lower: np.ndarray
    upper: np.ndarray
    eps_shape: float
    reach: float
    rho: float
    lam: float
    # polynomial prod_i (L_i + 2 reach r) = sum_k coeffs[k] r^k
    coeffs: np.ndarray
    radius_moments: np.ndarray
    dominating_intensity: float
    bias_bound: float

    @property
    def d(self):
        return len(self.lower)

    def mixture_weights(self):
        w = self.coeffs * self.radius_moments
        return w / w.sum()

    def admits(self, x, r):
        """dist_inf(x, box) <= r * reach, pointwise."""
        x = np.atleast_2d(x)
        gap = np.maximum(self.lower - x, x - self.upper).clip(min=0).max(axis=-1)
        return gap <= np.asarray(r) * self.reach * (1 + 1e-12)

    def covers(self, lower, upper):
        return bool(np.all(self.lower <= lower) and np.all(self.upper >= upper))


def _hull(densities):
    lows, highs = zip(*(dn.support_box() for dn in densities))
    return np.min(lows, axis=0), np.max(highs, axis=0)


def build_window(densities, model: BallModel, rho, eps_h=None, box=None):
    """Window for one density or a list of densities sharing a configuration.

    ``box`` overrides the support hull (it must contain it).
    """
    if isinstance(densities, Density):
        densities = [densities]
    h, F, G = model.shape, model.radius, model.weight
    eps_h = DEFAULT_EPS[h.kind] if eps_h is None else float(eps_h)
    lo, hi = _hull(densities) if densities else (np.zeros(model.d), np.zeros(model.d))
    if box is not None:
        blo, bhi = (np.asarray(v, dtype=float) for v in box)
        if np.any(blo > lo) or np.any(bhi < hi):
            raise ValueError("window box does not contain the support of phi")
        lo, hi = blo, bhi
    reach = h.support_radius(eps_h)
    lam = model.params.lam(rho)
    coeffs = np.array([1.0])
    for L in hi - lo:
        coeffs = np.convolve(coeffs, [L, 2.0 * reach])
    d = len(lo)
    moments = np.array([F.moment(k, rho) for k in range(d + 1)])
    big = float(lam * np.dot(coeffs, moments))
    l1 = max((dn.lp_norm(1.0) for dn in densities), default=0.0)
    if lam == 0 or l1 == 0:
        bias = 0.0
    else:
        bias = lam * G.abs_moment(1) * l1 * h.tail_mass(reach) * moments[d]
    return SimulationWindow(lo, hi, eps_h, reach, float(rho), float(lam), coeffs, moments, big, float(bias))


# --------------------------------------------------------------------------
# configurations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BallConfiguration:
    x: np.ndarray
    r: np.ndarray
    m: np.ndarray
    rho: float
    window: SimulationWindow
    seed_path: tuple = ()

    def __len__(self):
        return len(self.r)

    def to_csv(self, path):
        d = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow([f"x_{i + 1}" for i in range(d)] + ["r", "m"])
            for xi, ri, mi in zip(self.x, self.r, self.m):
                out.writerow([f"{v:.15g}" for v in (*xi, ri, mi)])

    @classmethod
    def from_csv(cls, path, rho, window, seed_path=()):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-2], data[:, -2], data[:, -1], rho, window, seed_path)


def _check_size(total):
    if total > MAX_INTENSITY:
        raise ConditionError(
            f"dominating intensity {total:.3g} exceeds {MAX_INTENSITY:.0e}; "
            "reduce lambda(rho) or the support of phi"
        )


def draw_points(model: BallModel, window: SimulationWindow, rng, count):
    """``count`` i.i.d. points (x, r, m) from the normalized window intensity."""
    d = window.d
    cum = np.cumsum(window.mixture_weights())[:-1]
    k = np.searchsorted(cum, rng.random(count), side="right")
    index = model.radius.beta - k
    r = radius_from_uniform(model.radius, window.rho, 1.0 - rng.random(count), index)
    span = (window.upper - window.lower)[None, :] + 2.0 * window.reach * r[:, None]
    x = window.lower[None, :] - window.reach * r[:, None] + rng.random((count, d)) * span
    m = sample_weight(model.weight, rng, count)
    return x, r, m


def sample_configuration(model: BallModel, rho, window: SimulationWindow, rng, seed_path=()):
    """One Poisson realization restricted to the window."""
    if not math.isclose(window.rho, rho):
        raise ValueError("window was built for another rho")
    _check_size(window.dominating_intensity)
    count = int(rng.poisson(window.dominating_intensity))
    x, r, m = draw_points(model, window, rng, count)
    return BallConfiguration(x, r, m, float(rho), window, tuple(seed_path))


def configuration(model, rho, window, seed, replicate):
    """Configuration keyed by (seed, replicate): bit-identical on repeat."""
    rng = substream(seed, "configuration", replicate)
    return sample_configuration(model, rho, window, rng, (seed, replicate))


def sample_batch(model, window, rng, n_replicates):
    """Points of ``n_replicates`` independent configurations, concatenated.

    Returns (counts, x, r, m); replicate j owns the slice
    counts[:j].sum() : counts[:j+1].sum().
    """
    _check_size(window.dominating_intensity)
    counts = rng.poisson(window.dominating_intensity, size=n_replicates)
    x, r, m = draw_points(model, window, rng, int(counts.sum()))
    return counts, x, r, m
