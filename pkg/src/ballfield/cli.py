"""Command-line entry point: ``ballfield COMMAND --config PATH``.

Exit codes: 0 success, 1 verdict failure, 2 configuration error,
3 numerical failure. Every failure writes ``error.json`` in the output
directory. Reports carry a ``meta`` block (timestamp, runtime) that is
excluded from reproducibility comparisons.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
import time
from dataclasses import asdict, is_dataclass

import numpy as np

from . import limits as L
from .config import ConfigError, RunConfig
from .field import (
    TestFunction,
    distributional_pairing,
    grid_path,
    rescaled_field,
    simulate_fields,
)
from .model import ConditionError, Density, check_conditions, estimate_property_P
from .sampler import build_window, configuration, substream
from .verify import (
    ExperimentPlan,
    convergence_verdicts,
    holder_estimate,
    moment_convergence,
    run_convergence,
    tightness_scaling,
)

COMMANDS = ("check", "simulate", "limits", "convergence", "moments", "tightness", "holder", "pairing", "report")


class VerdictFailure(Exception):
    """Raised after writing outputs when a verdict fails."""


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _plain(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class Output:
    def __init__(self, directory, fmt):
        self.dir = directory
        self.fmt = fmt
        os.makedirs(directory, exist_ok=True)

    def json(self, name, body, meta):
        if self.fmt in ("json", "both"):
            with open(os.path.join(self.dir, f"{name}.json"), "w") as fh:
                json.dump({**_plain(body), "meta": _plain(meta)}, fh, indent=2, sort_keys=True)
                fh.write("\n")

    def csv(self, name, header, rows):
        if self.fmt in ("csv", "both"):
            with open(os.path.join(self.dir, f"{name}.csv"), "w", newline="") as fh:
                out = csv.writer(fh)
                out.writerow(header)
                for row in rows:
                    out.writerow([_fmt(v) for v in row])


def strip_meta(report):
    """Report body without the run-specific meta block."""
    return {k: v for k, v in report.items() if k != "meta"}


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _plan(cfg, model, **over):
    tol = {"ks": cfg["plan.tolerances.ks"], "se": cfg["plan.tolerances.se"],
           "ci_level": cfg["plan.tolerances.ci_level"]}
    kw = dict(
        scenario=cfg["scenario"], model=model, density=cfg.density(),
        rho_schedule=tuple(cfg["plan.rho_schedule"]), replicates=cfg["plan.replicates"],
        theta_grid=tuple(cfg["plan.theta_grid"]), gammas=tuple(cfg["plan.gammas"]),
        seed=cfg["seed"], eps_r=cfg["plan.eps_r"], tolerances=tol, jobs=cfg["jobs"],
        family=cfg.family(),
    )
    kw.update(over)
    return ExperimentPlan(**kw)


def cmd_check(cfg, out):
    model = cfg.model(strict=False)
    rep = check_conditions(model)
    if not rep.passed:
        raise ConditionError("; ".join(rep.failures()))
    gamma = cfg["check.gamma"] or model.params.alpha
    est = estimate_property_P(cfg.family(), gamma, cfg["check.T"], cfg["check.n_blocks"],
                              substream(cfg["seed"], "check-blocks"))
    body = {
        "command": "check",
        "scenario": cfg["scenario"],
        "conditions": rep.to_dict(),
        "regime": model.params.regime,
        "property_P": {"gamma": gamma, "C_T": est.C_T, "max_ratio": float(np.max(est.ratios)),
                       "min_ratio": float(np.min(est.ratios)), "passed": est.passed},
        "provenance": {"conditions": "closed-form", "property_P": "quadrature"},
    }
    rows = [(name, key, val) for name, chk in rep.checks.items() for key, val in chk.items()
            if isinstance(val, (int, float)) and not isinstance(val, bool)]
    out.csv("check", ["condition", "witness", "value"], rows)
    return body, True


def cmd_simulate(cfg, out):
    model = cfg.model()
    rho, n = cfg["simulate.rho"], cfg["simulate.replicates"]
    dn = cfg.density()
    window = build_window(dn, model, rho)
    vals = simulate_fields(model, rho, dn, n, cfg["seed"], window=window, jobs=cfg["jobs"])
    out.csv("samples", ["replicate", "value"], enumerate(vals))
    for j in range(cfg["simulate.dump_configurations"]):
        conf = configuration(model, rho, window, cfg["seed"], j)
        if out.fmt in ("csv", "both"):
            conf.to_csv(os.path.join(out.dir, f"configuration_{j}.csv"))
    body = {
        "command": "simulate", "scenario": cfg["scenario"], "rho": rho, "replicates": n,
        "mean": float(np.mean(vals)), "variance": float(np.var(vals, ddof=1)),
        "window": {"lower": window.lower, "upper": window.upper, "reach": window.reach,
                   "dominating_intensity": window.dominating_intensity, "bias_bound": window.bias_bound},
        "provenance": {"mean": "simulated", "variance": "simulated", "window": "closed-form"},
    }
    return body, True


def cmd_limits(cfg, out):
    model = cfg.model()
    prm = model.params
    rho = cfg["limits.rho"]
    dn = cfg.density()
    thetas = np.asarray(cfg["limits.theta_grid"], dtype=float)
    cf = L.theoretical_cf(model, rho, dn, thetas)
    body = {"command": "limits", "scenario": cfg["scenario"], "rho": rho,
            "cf": {"theta": thetas, "value": cf.value, "error_bound": cf.error_bound}}
    out.csv("cf", ["theta", "re", "im"], [(t, v.real, v.imag) for t, v in zip(thetas, cf.value)])
    prov = {"cf": "quadrature"}
    try:
        cum = L.theoretical_cumulants(model, rho, dn, cfg["limits.k_max"])
        body["cumulants"] = {"c": cum.c, "errors": cum.errors}
        out.csv("cumulants", ["k", "value", "error"], [(k + 1, c, e) for k, (c, e) in enumerate(zip(cum.c, cum.errors))])
        prov["cumulants"] = "quadrature"
    except ConditionError as exc:
        body["cumulants"] = {"unavailable": str(exc)}
    bounds = {}
    alpha = prm.alpha
    integral = L.smeared_power_integral(model, dn, alpha, rho)
    bounds["smeared_integral"] = {"gamma": alpha, "quadrature": float(integral.value[0]),
                                  "bound": L.smeared_integral_bound(dn, model.shape, model.radius, alpha, rho)}
    bounds["moment"] = {f"{g:g}": L.moment_bound(model, rho, dn, g) for g in cfg["limits.gammas"] if g < alpha}
    if alpha == 2.0:
        bounds["cumulant"] = {}
        for k in range(2, cfg["limits.k_max"] + 1):
            try:
                bounds["cumulant"][str(k)] = L.cumulant_bound(model, rho, dn, k)
            except ConditionError as exc:
                bounds["cumulant"][str(k)] = str(exc)
    body["bounds"] = bounds
    prov["bounds"] = "closed-form"
    if prm.regime == "large":
        body["limit"] = asdict(L.stable_limit_spec(model, dn))
    else:
        body["limit"] = asdict(L.poisson_limit_spec(model, dn, prm.a, cfg["plan.eps_r"]))
    prov["limit"] = "quadrature"
    body["provenance"] = prov
    return body, True


def cmd_convergence(cfg, out):
    plan = _plan(cfg, cfg.model())
    rep = run_convergence(plan)
    body = rep.to_dict()
    runtime = body.pop("runtime")
    body["command"] = "convergence"
    rows = [(r, k, c, q) for r, k, c, q in zip(rep.rho, rep.ks, rep.cf_sup, rep.cf_sup_ci)]
    out.csv("convergence", ["rho", "ks", "cf_sup", "cf_sup_ci"], rows)
    return body, rep.verdicts["passed"], runtime


def cmd_moments(cfg, out):
    plan = _plan(cfg, cfg.model())
    rep = moment_convergence(plan)
    rep["command"] = "moments"
    rows = [(lev["rho"], g, r["sim"], r["sim_se"], r["limit_mc"], r["limit_mc_se"], r["limit_quadrature"])
            for lev in rep["levels"] for g, r in lev["moments"].items()]
    out.csv("moments", ["rho", "gamma", "sim", "sim_se", "limit_mc", "limit_mc_se", "limit_quadrature"], rows)
    return rep, rep["final_within"] and all(rep["limit_routes_agree"].values())


def cmd_tightness(cfg, out):
    plan = _plan(cfg, cfg.model(), rho_schedule=(cfg["tightness.rho"],),
                 replicates=cfg["tightness.replicates"], T=cfg["tightness.T"])
    rep = tightness_scaling(plan, cfg["tightness.gamma"], cfg["tightness.sides"], n_place=cfg["tightness.n_place"])
    body = {"command": "tightness", "scenario": cfg["scenario"], **rep.to_dict()}
    out.csv("tightness", ["side", "moment", "se"],
            [(str(s), m, e) for s, m, e in zip(rep.sides, rep.moments, rep.moment_se)])
    return body, rep.passed


def cmd_holder(cfg, out):
    model = cfg.model()
    prm = model.params
    t, paths = L.limit_gaussian_paths(model, cfg.family(), cfg["holder.T"], cfg["holder.mesh"],
                                      cfg["holder.n_paths"], cfg["seed"])
    est = holder_estimate(paths, cfg["holder.mesh"], seed=cfg["seed"])
    target = (3 * prm.d - prm.beta) / (2 * prm.d)
    ok = abs(est.estimate - target) <= cfg["holder.tolerance"] and not est.degenerate
    body = {"command": "holder", "scenario": cfg["scenario"], "target": target, **est.to_dict(),
            "passed": ok, "provenance": {"paths": "quadrature", "estimate": "simulated"}}
    out.csv("holder", ["lag", "variogram"], zip(est.lags, est.variogram))
    return body, ok


def cmd_pairing(cfg, out):
    model = cfg.model()
    fam = cfg.family()
    rho, T, mesh = cfg["pairing.rho"], cfg["pairing.T"], cfg["pairing.mesh"]
    lo, hi = fam.support_box(T)
    window = build_window([Density.box(lo, hi)], model, rho)
    tf = TestFunction.bump(cfg["pairing.center"], cfg["pairing.width"])
    rows = []
    for j in range(cfg["pairing.n_configs"]):
        conf = configuration(model, rho, window, cfg["seed"], j)
        path = grid_path(conf, model, fam, T, mesh)
        pair = distributional_pairing(path, tf)
        direct = rescaled_field(conf, model, tf.density()).value
        rel = abs(pair.value - direct) / max(abs(direct), 1e-300)
        rows.append((j, direct, pair.value, rel, pair.error_estimate, pair.bound, abs(pair.value) <= pair.bound))
    tol = cfg["pairing.tolerance"]
    ok = all(r[3] <= tol and r[6] for r in rows)
    out.csv("pairing", ["configuration", "direct", "pairing", "relative_error", "error_estimate", "bound", "bound_holds"], rows)
    body = {"command": "pairing", "scenario": cfg["scenario"], "n_configs": len(rows),
            "max_relative_error": max(r[3] for r in rows) if rows else 0.0,
            "bound_holds": all(r[6] for r in rows), "tolerance": tol, "passed": ok,
            "provenance": {"direct": "simulated", "pairing": "simulated"}}
    return body, ok


def cmd_report(cfg, out):
    path = cfg["report.input"]
    if not path:
        raise ConfigError("report.input is required for the report command")
    try:
        with open(path) as fh:
            saved = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read saved report: {exc}") from exc
    if "ks" not in saved or "tolerances" not in saved:
        raise ConfigError("saved file is not a convergence report")
    verdicts = convergence_verdicts(saved, saved["tolerances"])
    body = {"command": "report", "input": path, "verdicts": verdicts,
            "matches_saved": verdicts == saved.get("verdicts"), "provenance": {"verdicts": "closed-form"}}
    out.csv("report", ["verdict", "value"], verdicts.items())
    return body, verdicts["passed"]


HANDLERS = {
    "check": cmd_check, "simulate": cmd_simulate, "limits": cmd_limits, "convergence": cmd_convergence,
    "moments": cmd_moments, "tightness": cmd_tightness, "holder": cmd_holder, "pairing": cmd_pairing,
    "report": cmd_report,
}


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def _exit_code(exc):
    if isinstance(exc, VerdictFailure):
        return 1
    if isinstance(exc, (ConfigError, ConditionError, ValueError, KeyError, TypeError, OSError)):
        return 2
    return 3


def run(command, config_path=None, seed=None, out_dir=None, jobs=None, fmt=None, config_text=None):
    """Run one command; returns the exit code."""
    t0 = time.perf_counter()
    directory = out_dir or "ballfield-out"
    try:
        if command not in HANDLERS:
            raise ConfigError(f"unknown command {command!r}")
        cfg = RunConfig.from_text(config_text) if config_text is not None else (
            RunConfig.from_file(config_path) if config_path else RunConfig.from_text(""))
        if seed is not None:
            cfg.values["seed"] = int(seed)
        if jobs is not None:
            cfg.values["jobs"] = int(jobs)
        if fmt is not None:
            cfg.values["output.format"] = fmt
        directory = out_dir or cfg["output.dir"]
        out = Output(directory, cfg["output.format"])
        result = HANDLERS[command](cfg, out)
        body, ok = result[0], result[1]
        runtime = result[2] if len(result) > 2 else None
        meta = {
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "runtime_seconds": time.perf_counter() - t0 if runtime is None else runtime,
            "seed": cfg["seed"],
        }
        body = {"seed": cfg["seed"], **body}
        out.json(command, body, meta)
        if not ok:
            raise VerdictFailure(f"{command}: verdict failed")
        return 0
    except Exception as exc:  # noqa: BLE001 - mapped onto exit codes
        code = _exit_code(exc) if not isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)) else 3
        record = {"command": command, "exit_code": code, "error": type(exc).__name__, "message": str(exc)}
        try:
            os.makedirs(directory, exist_ok=True)
            with open(os.path.join(directory, "error.json"), "w") as fh:
                json.dump(record, fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError:
            pass
        print(json.dumps(record), file=sys.stderr)
        return code


def main(argv=None):
    parser = argparse.ArgumentParser(prog="ballfield", description="Weighted random ball model toolkit")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="run configuration (key = value lines)")
    parser.add_argument("--seed", type=int, help="overrides the configured seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--jobs", type=int, help="worker processes (fallback: BALLFIELD_JOBS)")
    parser.add_argument("--format", choices=("csv", "json", "both"))
    args = parser.parse_args(argv)
    return run(args.command, args.config, args.seed, args.out, args.jobs, args.format)


if __name__ == "__main__":
    sys.exit(main())
