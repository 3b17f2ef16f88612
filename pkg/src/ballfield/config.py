"""Flat ``key = value`` run configuration with dotted sections.

Each non-blank line outside comments has the form ``section.key = value``;
values are Python literals (numbers, quoted strings, lists, booleans).
Bare words are read as strings. Unknown keys are rejected.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass

from .model import (
    BallModel,
    Density,
    IntensityLaw,
    MeasureFamily,
    RadiusLaw,
    ShapeFunction,
    WeightLaw,
)


class ConfigError(ValueError):
    """Malformed or unknown configuration entries."""


_NUM = (int, float)


def _num(v):
    return isinstance(v, _NUM) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _nums(v):
    return isinstance(v, (list, tuple)) and all(_num(x) for x in v)


def _str(v):
    return isinstance(v, str)


def _opt(check):
    return lambda v: v is None or check(v)


def _sides(v):
    return isinstance(v, (list, tuple)) and all(_num(x) or _nums(x) for x in v)


# key -> (default, validator)
SCHEMA = {
    "scenario": ("run", _str),
    "seed": (0, _int),
    "jobs": (None, _opt(_int)),
    "output.dir": ("ballfield-out", _str),
    "output.format": ("both", lambda v: v in ("csv", "json", "both")),
    "radius.kind": ("exact-pareto", lambda v: v == "exact-pareto"),
    "radius.beta": (1.5, _num),
    "radius.r0": (1.0, _num),
    "weight.kind": ("gaussian", lambda v: v in ("gaussian", "exact-stable", "two-sided-pareto")),
    "weight.mean": (0.0, _num),
    "weight.variance": (1.0, _num),
    "weight.alpha": (2.0, _num),
    "weight.sigma": (1.0, _num),
    "weight.b": (0.0, _num),
    "weight.tau": (0.0, _num),
    "weight.scale": (1.0, _num),
    "shape.kind": ("gaussian-bump", lambda v: v in ("gaussian-bump", "ball-indicator", "power-decay")),
    "shape.d": (1, _int),
    "shape.q": (None, _opt(_num)),
    "intensity.coef": (1.0, _num),
    "intensity.theta": (1.5, _num),
    "model.regime": (None, _opt(lambda v: v in ("large", "intermediate"))),
    "model.p": (1, _int),
    "measure.kind": ("box", lambda v: v in ("box", "bump")),
    "measure.lower": ([0.0], _nums),
    "measure.upper": ([1.0], _nums),
    "measure.coef": (1.0, _num),
    "measure.center": ([0.0], _nums),
    "measure.width": (1.0, _num),
    "family.kind": ("signed-uniform", lambda v: v in ("signed-uniform", "smooth")),
    "family.width": (1.0, _num),
    "family.center": (None, _opt(_nums)),
    "plan.rho_schedule": ([0.2, 0.1, 0.05], _nums),
    "plan.replicates": (100000, _int),
    "plan.theta_grid": ([0.25, 0.5, 1.0, 2.0], _nums),
    "plan.gammas": ([1.2, 1.5, 2.0], _nums),
    "plan.eps_r": (0.02, _num),
    "plan.tolerances.ks": (0.02, _num),
    "plan.tolerances.se": (3.0, _num),
    "plan.tolerances.ci_level": (0.99, _num),
    "check.gamma": (None, _opt(_num)),
    "check.T": (2.0, _num),
    "check.n_blocks": (1000, _int),
    "simulate.rho": (1.0, _num),
    "simulate.replicates": (1000, _int),
    "simulate.dump_configurations": (0, _int),
    "limits.rho": (1.0, _num),
    "limits.k_max": (4, _int),
    "limits.gammas": ([1.5], _nums),
    "limits.theta_grid": ([0.25, 0.5, 1.0, 2.0], _nums),
    "tightness.gamma": (1.5, _num),
    "tightness.sides": ([1.0, 2.0, 4.0, 8.0], _sides),
    "tightness.n_place": (8, _int),
    "tightness.rho": (0.005, _num),
    "tightness.T": (16.0, _num),
    "tightness.replicates": (2000, _int),
    "holder.T": (1.0, _num),
    "holder.mesh": (1.0 / 256, _num),
    "holder.n_paths": (2000, _int),
    "holder.tolerance": (0.05, _num),
    "pairing.n_configs": (100, _int),
    "pairing.rho": (1.0, _num),
    "pairing.T": (2.0, _num),
    "pairing.mesh": (1e-3, _num),
    "pairing.center": ([0.3], _nums),
    "pairing.width": (1.0, _num),
    "pairing.tolerance": (1e-6, _num),
    "report.input": (None, _opt(_str)),
}


def parse_text(text):
    """Parse config text into a dict of dotted keys (defaults not applied)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            val = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            val = value
        if _int(val) and SCHEMA[key][0] is not None and isinstance(SCHEMA[key][0], float):
            val = float(val)
        if not SCHEMA[key][1](val):
            raise ConfigError(f"line {lineno}: invalid value for {key!r}: {value}")
        out[key] = val
    return out


@dataclass
class RunConfig:
    values: dict

    @classmethod
    def from_text(cls, text):
        merged = {k: v for k, (v, _) in SCHEMA.items()}
        merged.update(parse_text(text))
        return cls(merged)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        return cls.from_text(text)

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name):
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}

    # -- object construction ------------------------------------------------

    def radius(self):
        return RadiusLaw(float(self["radius.beta"]), float(self["radius.r0"]))

    def weight(self):
        kind = self["weight.kind"]
        if kind == "gaussian":
            return WeightLaw.gaussian(self["weight.mean"], self["weight.variance"])
        if kind == "exact-stable":
            return WeightLaw.stable(self["weight.alpha"], self["weight.sigma"], self["weight.b"], self["weight.tau"])
        return WeightLaw.two_sided_pareto(self["weight.alpha"], self["weight.scale"])

    def shape(self):
        return ShapeFunction(self["shape.kind"], self["shape.d"], self["shape.q"])

    def intensity(self):
        return IntensityLaw(float(self["intensity.coef"]), float(self["intensity.theta"]))

    def model(self, strict=True):
        return BallModel.build(self.radius(), self.weight(), self.shape(), self.intensity(),
                               regime=self["model.regime"], p=self["model.p"], strict=strict)

    def density(self):
        d = self["shape.d"]
        if self["measure.kind"] == "box":
            lo, hi = self["measure.lower"], self["measure.upper"]
            if len(lo) != d or len(hi) != d:
                raise ConfigError("measure bounds must have d components")
            return Density.box(lo, hi, self["measure.coef"])
        c = self["measure.center"]
        if len(c) != d:
            raise ConfigError("measure center must have d components")
        return Density.bump(c, self["measure.width"], self["measure.coef"])

    def family(self):
        d, p = self["shape.d"], self["model.p"]
        if self["family.kind"] == "signed-uniform":
            return MeasureFamily("signed-uniform", d, p)
        center = tuple(self["family.center"] or (0.0,) * d)
        return MeasureFamily("smooth", d, p, self["family.width"], center)
