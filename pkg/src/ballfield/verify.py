"""Monte Carlo experiments that compare the rescaled field with its limits."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .field import simulate_fields
from .limits import (
    fractional_moment_from_cf,
    limit_poisson_cf,
    limit_poisson_cumulants,
    poisson_limit_spec,
    psi_alpha,
    sample_limit_poisson,
    sample_limit_stable,
    stable_limit_spec,
)
from .model import BallModel, Block, ConditionError, Density, MeasureFamily, block_increment_density
from .sampler import substream

DEFAULT_TOLERANCES = {"ks": 0.02, "se": 3.0, "ci_level": 0.99}


@dataclass
class ExperimentPlan:
    scenario: str
    model: BallModel
    density: Density
    rho_schedule: tuple
    replicates: int
    theta_grid: tuple = (0.25, 0.5, 1.0, 2.0)
    gammas: tuple = (1.2, 1.5, 2.0)
    seed: int = 0
    eps_r: float = 0.02
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    jobs: int | None = None
    family: MeasureFamily | None = None
    T: float = 1.0
    mesh: float = 1.0 / 256

    def __post_init__(self):
        rho = tuple(float(r) for r in self.rho_schedule)
        if not rho or any(b >= a for a, b in zip(rho, rho[1:])):
            raise ValueError("rho_schedule must be strictly decreasing")
        if self.replicates < 1000:
            raise ValueError("replicates must be at least 1000")
        self.rho_schedule = rho
        self.tolerances = {**DEFAULT_TOLERANCES, **self.tolerances}
        if self.family is None:
            self.family = MeasureFamily("signed-uniform", d=self.model.d, p=self.model.d)

    @property
    def regime(self):
        return self.model.params.regime


# --------------------------------------------------------------------------
# empirical characteristic function
# --------------------------------------------------------------------------


@dataclass
class CFPoint:
    theta: float
    value: complex
    modulus_ci: tuple
    phase_ci: tuple


def _batch_cf(samples, thetas, n_batches):
    """Per-batch means of exp(i theta X), shape (n_batches, len(thetas))."""
    x = np.asarray(samples, dtype=float)
    idx = np.array_split(np.arange(len(x)), n_batches)
    out = np.empty((len(idx), len(thetas)), complex)
    for b, sl in enumerate(idx):
        out[b] = np.exp(1j * np.outer(x[sl], thetas)).mean(axis=0)
    sizes = np.array([len(sl) for sl in idx], dtype=float)
    return out, sizes


def empirical_cf(samples, theta_grid, n_boot=500, level=0.99, seed=0, reference=None):
    """Mean of exp(i theta X) with bootstrap CIs on modulus and phase.

    Resampling is done over up to 1000 contiguous batches of the sample,
    which keeps the bootstrap cheap for 10^6 draws. When ``reference``
    (the exact CF on the grid) is given, also returns the bootstrap
    quantile of the sup-distance sup_theta |cf* - cf|.
    """
    thetas = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    x = np.asarray(samples, dtype=float)
    n_batches = int(min(1000, len(x)))
    batch, sizes = _batch_cf(x, thetas, n_batches)
    w = sizes / sizes.sum()
    est = w @ batch
    rng = substream(seed, "bootstrap-cf")
    picks = rng.integers(0, n_batches, size=(n_boot, n_batches))
    ws = sizes[picks]
    boots = np.einsum("bk,bkt->bt", ws, batch[picks]) / ws.sum(axis=1)[:, None]
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    mod = np.abs(boots)
    # phases relative to the point estimate avoid the branch cut
    ph = np.angle(boots * np.conj(est)[None, :]) + np.angle(est)[None, :]
    points = [
        CFPoint(float(t), complex(e), tuple(np.quantile(mod[:, j], [lo_q, hi_q])), tuple(np.quantile(ph[:, j], [lo_q, hi_q])))
        for j, (t, e) in enumerate(zip(thetas, est))
    ]
    sup_q = float(np.quantile(np.max(np.abs(boots - est[None, :]), axis=1), level))
    if reference is None:
        return points
    dist = float(np.max(np.abs(est - np.asarray(reference))))
    return points, dist, sup_q


# --------------------------------------------------------------------------
# sample statistics
# --------------------------------------------------------------------------

_N_BATCHES = 50


def cumulant_estimates(x, orders=(2, 3, 4)):
    """k-statistics and batch-means standard errors."""
    x = np.asarray(x, dtype=float)
    est = np.array([stats.kstat(x, k) for k in orders])
    parts = np.array_split(x, _N_BATCHES)
    per = np.array([[stats.kstat(p, k) for k in orders] for p in parts])
    se = per.std(axis=0, ddof=1) / math.sqrt(len(parts))
    return est, se


def abs_moment_estimate(x, gamma):
    v = np.abs(np.asarray(x, dtype=float)) ** gamma
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


# --------------------------------------------------------------------------
# convergence runs
# --------------------------------------------------------------------------


def _limit_draws(plan: ExperimentPlan, level, n):
    model, dn = plan.model, plan.density
    if plan.regime == "large":
        spec = stable_limit_spec(model, dn)
        return sample_limit_stable(spec, substream(plan.seed, "limit", level), n), spec
    a = model.params.a
    vals, spec = sample_limit_poisson(model, dn, a, plan.eps_r, n, plan.seed, jobs=plan.jobs,
                                      stream=f"limit-{level}")
    return vals, spec


def simulate_levels(plan: ExperimentPlan):
    """Field samples and equal-size limit draws for every rho in the plan."""
    levels = []
    for i, rho in enumerate(plan.rho_schedule):
        t0 = time.perf_counter()
        sim = simulate_fields(plan.model, rho, plan.density, plan.replicates, plan.seed,
                              stream=f"level-{i}", jobs=plan.jobs)
        lim, spec = _limit_draws(plan, i, plan.replicates)
        levels.append({"rho": rho, "sim": sim, "limit": lim, "spec": spec, "seconds": time.perf_counter() - t0})
    return levels


def _limit_cf(plan, spec, thetas):
    if plan.regime == "large":
        return np.exp(psi_alpha(thetas, spec.alpha, spec.sigma, spec.b))
    return limit_poisson_cf(plan.model, plan.density, plan.model.params.a, thetas).value


@dataclass
class ConvergenceReport:
    scenario: str
    regime: str
    replicates: int
    rho: list
    ks: list
    ks_pvalue: list
    cf_sup: list
    cf_sup_ci: list
    cumulants: list
    moments: list
    limit: dict
    tolerances: dict
    verdicts: dict
    runtime: float
    provenance: dict = field(default_factory=lambda: {
        "ks": "simulated", "cf_sup": "simulated", "cumulants": "simulated",
        "moments": "simulated", "limit": "quadrature",
    })

    def to_dict(self):
        return asdict(self)


def _moment_rows(sim, lim, gammas, alpha):
    rows = {}
    for g in gammas:
        if g >= alpha and alpha < 2:
            continue
        m, se = abs_moment_estimate(sim, g)
        ml, sel = abs_moment_estimate(lim, g)
        rows[f"{g:g}"] = {"sim": m, "sim_se": se, "limit": ml, "limit_se": sel,
                          "delta": m - ml, "se": math.hypot(se, sel)}
    return rows


def run_convergence(plan: ExperimentPlan, levels=None):
    """Per-rho KS distance, CF distance, cumulant and moment deltas against the limit."""
    t0 = time.perf_counter()
    levels = simulate_levels(plan) if levels is None else levels
    thetas = np.asarray(plan.theta_grid, dtype=float)
    alpha = plan.model.params.alpha
    out = {"ks": [], "p": [], "cf": [], "cfq": [], "cum": [], "mom": []}
    spec = levels[0]["spec"] if levels else None
    limit_cf = _limit_cf(plan, spec, thetas) if spec is not None else None
    for lev in levels:
        sim, lim = lev["sim"], lev["limit"]
        ks = stats.ks_2samp(sim, lim)
        out["ks"].append(float(ks.statistic))
        out["p"].append(float(ks.pvalue))
        _, dist, q = empirical_cf(sim, thetas, level=plan.tolerances["ci_level"], seed=plan.seed,
                                  reference=limit_cf)
        out["cf"].append(dist)
        out["cfq"].append(q)
        if alpha == 2.0:
            cs, ses = cumulant_estimates(sim)
            cl, sel = cumulant_estimates(lim)
            out["cum"].append({str(k): {"sim": float(a), "sim_se": float(b), "limit": float(c), "limit_se": float(d),
                                        "delta": float(a - c), "se": float(math.hypot(b, d))}
                               for k, a, b, c, d in zip((2, 3, 4), cs, ses, cl, sel)})
        else:
            out["cum"].append({})
        out["mom"].append(_moment_rows(sim, lim, plan.gammas, alpha))
    limit = {}
    if spec is not None:
        limit = {k: (float(v) if isinstance(v, (int, float)) else v) for k, v in asdict(spec).items()}
    report = ConvergenceReport(
        plan.scenario, plan.regime, plan.replicates, list(plan.rho_schedule),
        out["ks"], out["p"], out["cf"], out["cfq"], out["cum"], out["mom"], limit,
        dict(plan.tolerances), {}, 0.0,
    )
    report.verdicts = convergence_verdicts(report.to_dict(), plan.tolerances)
    report.runtime = time.perf_counter() - t0 + sum(lev["seconds"] for lev in levels)
    return report


def convergence_verdicts(report: dict, tolerances: dict):
    """Verdicts computed only from recorded numbers and tolerances."""
    ks = report["ks"]
    k = tolerances["se"]
    v = {
        "ks_decreasing": all(b < a for a, b in zip(ks, ks[1:])),
        "ks_final": bool(ks) and ks[-1] < tolerances["ks"],
    }
    final_cum = report["cumulants"][-1] if report["cumulants"] else {}
    v["cumulants_final"] = all(abs(r["delta"]) <= k * r["se"] for r in final_cum.values())
    final_mom = report["moments"][-1] if report["moments"] else {}
    v["moments_final"] = all(abs(r["delta"]) <= k * r["se"] for r in final_mom.values())
    v["passed"] = all(v.values())
    return v


# --------------------------------------------------------------------------
# moments
# --------------------------------------------------------------------------


def _check_gamma(model: BallModel, gamma):
    alpha = model.params.alpha
    if gamma <= 0:
        raise ConditionError("gamma must be positive")
    if gamma >= alpha:
        if alpha < 2:
            raise ConditionError(f"moments of order {gamma} >= alpha = {alpha} are infinite in the limit")
        if not np.isfinite(model.weight.abs_moment(gamma)):
            raise ConditionError(f"weight law has no moment of order {gamma}")


def moment_convergence(plan: ExperimentPlan, gammas=None, levels=None):
    """Per-rho E|M~_rho|^gamma against the limit value.

    The limit value comes from the limit sampler; for gamma in (1, 2) it is
    cross-checked through the fractional-moment integral of the limit CF,
    and for gamma = 2 (alpha = 2) it is the exact limit variance.
    """
    gammas = tuple(plan.gammas if gammas is None else gammas)
    for g in gammas:
        _check_gamma(plan.model, g)
    levels = simulate_levels(plan) if levels is None else levels
    spec = levels[0]["spec"]
    model, dn = plan.model, plan.density
    rows = []
    cross = {}
    cache = {}

    def poisson_log_cf(t):
        key = np.asarray(t).tobytes()
        if key not in cache:
            cache[key] = limit_poisson_cf(model, dn, model.params.a, t).log_value
        return cache[key]

    for g in gammas:
        if 1 < g < 2:
            if plan.regime == "large":
                cf = lambda t: psi_alpha(t, spec.alpha, spec.sigma, spec.b)
                cross[f"{g:g}"] = fractional_moment_from_cf(cf, g, log=True, vectorized=True)
            else:
                # the limit cf is smooth with a Gaussian-type decay: a short log-t rule suffices
                cross[f"{g:g}"] = fractional_moment_from_cf(poisson_log_cf, g, log=True, vectorized=True,
                                                            log_t_range=(-6, 4))
        elif g == 2 and model.params.alpha == 2:
            if plan.regime == "large":
                cross[f"{g:g}"] = 2 * spec.sigma**2
            else:
                cross[f"{g:g}"] = limit_poisson_cumulants(model, dn, model.params.a, 2)[2]
    for lev in levels:
        row = {}
        for g in gammas:
            m, se = abs_moment_estimate(lev["sim"], g)
            ml, sel = abs_moment_estimate(lev["limit"], g)
            key = f"{g:g}"
            ref = cross.get(key)
            row[key] = {
                "sim": m, "sim_se": se, "limit_mc": ml, "limit_mc_se": sel,
                "limit_quadrature": ref,
                "delta": m - ml, "se": math.hypot(se, sel),
                "within": abs(m - ml) <= plan.tolerances["se"] * math.hypot(se, sel),
            }
        rows.append({"rho": lev["rho"], "moments": row})
    agreement = {}
    last = rows[-1]["moments"] if rows else {}
    for key, ref in cross.items():
        r = last[key]
        agreement[key] = abs(r["limit_mc"] - ref) <= plan.tolerances["se"] * r["limit_mc_se"]
    return {
        "scenario": plan.scenario,
        "gammas": list(gammas),
        "levels": rows,
        "limit_routes_agree": agreement,
        "final_within": all(r["within"] for r in last.values()),
        "provenance": {"sim": "simulated", "limit_mc": "simulated", "limit_quadrature": "quadrature"},
    }


# --------------------------------------------------------------------------
# tightness scaling
# --------------------------------------------------------------------------


def envelope_exponent(model: BallModel, gamma):
    """(gamma / alpha)(1 + alpha - beta/d)."""
    prm = model.params
    return gamma / prm.alpha * (1.0 + prm.alpha - prm.beta / prm.d)


@dataclass
class TightnessReport:
    gamma: float
    rho: float
    sides: list
    moments: list
    moment_se: list
    slope: list
    ci: list
    envelope: float
    lower: float
    passed: bool
    provenance: str = "simulated"

    def to_dict(self):
        return asdict(self)


def _placements(plan, sides, n_place, lattice):
    """Random block corners on the lattice, one set per block shape."""
    rng = substream(plan.seed, "block-placement")
    p = plan.family.p
    blocks = []
    for side in sides:
        side = np.broadcast_to(np.asarray(side, dtype=float), (p,))
        room = plan.T - side
        if np.any(room < 0):
            raise ValueError("block side exceeds the placement range T")
        cells = np.floor(room / lattice + 1e-9).astype(int)
        for _ in range(n_place):
            s = lattice * np.array([rng.integers(0, c + 1) for c in cells])
            blocks.append(Block(tuple(s), tuple(s + side)))
    return blocks


def tightness_scaling(plan: ExperimentPlan, gamma, sides, n_place=8, lattice=None, n_boot=400):
    """Regression of log E|X_rho(block)|^gamma on log block volume (p = 1) or log sides.

    ``sides`` is a list of scalars (cubic blocks) or of p-tuples. Blocks are
    placed at random lattice positions inside [0, T]^p and evaluated on the
    same configurations; the slope CI is a bootstrap over replicates.
    """
    if len(sides) < 3:
        raise ValueError("need at least three block sizes")
    _check_gamma(plan.model, gamma)
    if gamma >= plan.model.params.alpha:
        raise ConditionError("tightness scaling needs gamma < alpha")
    p = plan.family.p
    cubic = np.ndim(sides[0]) == 0
    lattice = float(np.min(sides)) if lattice is None else lattice
    blocks = _placements(plan, sides, n_place, lattice)
    dens = [block_increment_density(plan.family, b) for b in blocks]
    rho = plan.rho_schedule[-1]
    vals = simulate_fields(plan.model, rho, dens, plan.replicates, plan.seed, stream="tightness", jobs=plan.jobs)
    per = np.abs(vals) ** gamma
    per = per.reshape(plan.replicates, len(sides), n_place).mean(axis=2)
    if cubic:
        design = np.column_stack([np.ones(len(sides)), p * np.log(np.asarray(sides, dtype=float))])
    else:
        design = np.column_stack([np.ones(len(sides)), np.log(np.asarray(sides, dtype=float))])

    def fit(mat):
        return np.linalg.lstsq(design, np.log(mat.mean(axis=0)), rcond=None)[0][1:]

    slope = fit(per)
    rng = substream(plan.seed, "tightness-bootstrap")
    boot = np.array([fit(per[rng.integers(0, len(per), len(per))]) for _ in range(n_boot)])
    level = plan.tolerances["ci_level"]
    lo, hi = np.quantile(boot, [(1 - level) / 2, 1 - (1 - level) / 2], axis=0)
    env = envelope_exponent(plan.model, gamma)
    if cubic:
        passed = bool(lo[0] <= env and hi[0] >= 1.0)
    else:
        passed = bool(np.all(lo <= env) and np.all(slope > 0))
    return TightnessReport(
        float(gamma), float(rho), [np.asarray(s).tolist() for s in sides],
        per.mean(axis=0).tolist(), (per.std(axis=0, ddof=1) / math.sqrt(len(per))).tolist(),
        slope.tolist(), [lo.tolist(), hi.tolist()], env, 1.0, passed,
    )


# --------------------------------------------------------------------------
# Hoelder exponent
# --------------------------------------------------------------------------


@dataclass
class HolderEstimate:
    estimate: float
    se: float
    lags: list
    variogram: list
    degenerate: bool

    def to_dict(self):
        return asdict(self)


def holder_estimate(paths, mesh=1.0, n_boot=200, seed=0):
    """Half the slope of log E[(X_{t+delta} - X_t)^2] over dyadic lags.

    ``paths`` is an (n_paths, n_nodes) array on a uniform grid, or a list
    of GridPath objects (p = 1). n_nodes - 1 must be a power of two.
    """
    if not isinstance(paths, np.ndarray) and hasattr(paths[0], "values"):
        mesh = paths[0].mesh
        paths = np.array([gp.values for gp in paths])
    x = np.atleast_2d(np.asarray(paths, dtype=float))
    n = x.shape[1] - 1
    if n < 4 or n & (n - 1):
        raise ValueError("grid must have 2^k + 1 nodes")
    K = int(math.log2(n))
    lags = [2**k for k in range(K - 1)]
    incs = [x[:, L:] - x[:, :-L] for L in lags]
    per_path = np.array([np.mean(d * d, axis=1) for d in incs]).T
    vario = per_path.mean(axis=0)
    logl = np.log(np.asarray(lags) * mesh)
    degenerate = bool(all(np.ptp(d, axis=1).max() <= 1e-12 * max(np.abs(d).max(), 1e-300) for d in incs))
    if np.any(vario <= 0):
        return HolderEstimate(math.nan, math.nan, list(map(float, np.asarray(lags) * mesh)), vario.tolist(), True)

    def est(v):
        return 0.5 * np.polyfit(logl, np.log(v), 1)[0]

    h = float(est(vario))
    rng = substream(seed, "holder-bootstrap")
    if len(per_path) > 1:
        boot = [est(per_path[rng.integers(0, len(per_path), len(per_path))].mean(axis=0)) for _ in range(n_boot)]
        se = float(np.std(boot, ddof=1))
    else:
        se = math.nan
    return HolderEstimate(h, se, (np.asarray(lags) * mesh).tolist(), vario.tolist(), degenerate)
