"""Small numerical kernels shared by the field and limit modules."""

from functools import lru_cache

import numpy as np
from scipy.special import erfc

SQRT_PI = np.sqrt(np.pi)


@lru_cache(maxsize=None)
def gauss_legendre(order):
    """Nodes and weights on [-1, 1]; cached per order."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def erf_diff(a, b, delta=None, mid=None):
    """erf(b) - erf(a) without catastrophic cancellation.

    Works with complementary functions of |a|, |b|; nearly equal arguments
    use the expansion around the midpoint. ``delta = b - a`` and
    ``mid = (a + b) / 2`` may be supplied exactly when a and b are
    themselves rounded (large arguments with a tiny separation).
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    delta = b - a if delta is None else np.broadcast_to(np.asarray(delta, dtype=float), a.shape)
    mid = 0.5 * (a + b) if mid is None else np.broadcast_to(np.asarray(mid, dtype=float), a.shape)
    # reversed intervals: erf(b) - erf(a) = -(erf(a) - erf(b))
    flip = a > b
    a, b = np.where(flip, b, a), np.where(flip, a, b)
    ea = erfc(np.abs(a))
    eb = erfc(np.abs(b))
    out = np.where(a >= 0, ea - eb, np.where(b <= 0, eb - ea, 2.0 - ea - eb))
    out = np.where(flip, -out, out)
    small = np.abs(delta) * (1.0 + np.abs(mid)) < 1e-3
    if np.any(small):
        d, m = delta[small], mid[small]
        out = np.array(out, copy=True)
        out[small] = (2.0 / SQRT_PI) * np.exp(-m * m) * d * (1.0 + (2.0 * m * m - 1.0) * d * d / 12.0)
    return out


def graded_edges(anchors, scale, lo, hi, reach):
    """Panel edges clustered geometrically around ``anchors``.

    Edges are placed at ``anchor +- scale * 2**k`` for k from -6 up to
    ``log2(reach)``, clipped to [lo, hi]. Used for integrands that vary on
    the length scale ``scale`` near each anchor and decay away from it.
    """
    steps = [0.0]
    k = -6
    while 2.0 ** k < reach:
        steps.append(2.0 ** k)
        k += 1
    steps.append(reach)
    steps = np.asarray(steps)
    pts = [lo, hi]
    for a in np.atleast_1d(anchors):
        pts.append(a + scale * steps)
        pts.append(a - scale * steps)
    edges = np.unique(np.clip(np.concatenate([np.atleast_1d(p) for p in pts]), lo, hi))
    return edges


def panel_rule(edges, order):
    """Composite Gauss-Legendre nodes/weights on consecutive panels."""
    x, w = gauss_legendre(order)
    left, right = edges[:-1], edges[1:]
    half = 0.5 * (right - left)
    keep = half > 0
    left, half = left[keep], half[keep]
    nodes = (left + half)[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def tensor_rule(rules):
    """Tensor product of 1-D (nodes, weights) rules -> (n, d) nodes, (n,) weights."""
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights
