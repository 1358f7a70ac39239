"""JSON experiment configs: schema, validation and object construction."""

import json
from dataclasses import dataclass, field
from typing import Tuple

import jsonschema
import numpy as np

from .dynamics import (build_savd, build_sfogda_alt, build_shbf, build_shbfop_alt)
from .errors import ConfigError, DynlabError
from .problems import make_bilinear_saddle, make_quadratic, make_rotation
from .schedules import DiffusionSchedule, ScalarSchedule

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MATRIX = {"type": "array", "items": _VEC, "minItems": 1}

SCHEDULE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "coef"],
    "properties": {
        "family": {"enum": ["constant", "power", "power_log", "exponential"]},
        "coef": _POS,
        "power": _NUM,
        "rate": _NUM,
        "t_ref": _NUM,
    },
}

FIT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["metric", "target", "tolerance"],
    "properties": {
        "metric": {"enum": ["suboptimality", "residual", "residual_sq", "gap", "velocity",
                            "velocity_sq", "distance"]},
        "window": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
        "target": _NUM,
        "tolerance": {"type": "number", "minimum": 0},
        "statistic": {"enum": ["mean", "path"]},
    },
}


def _variant_rule(variant, required):
    return {"if": {"properties": {"variant": {"const": variant}}, "required": ["variant"]},
            "then": {"required": required}}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "dynlab experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "system", "integrator"],
    "properties": {
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["quadratic", "rotation", "bilinear_saddle"]},
                "spectrum": {"type": "array", "items": _POS, "minItems": 1},
                "minimizer": _VEC,
                "coupling": _MATRIX,
            },
            "allOf": [
                {"if": {"properties": {"name": {"const": "quadratic"}}},
                 "then": {"required": ["spectrum"]}},
                {"if": {"properties": {"name": {"const": "bilinear_saddle"}}},
                 "then": {"required": ["coupling"]}},
            ],
        },
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["variant", "t_start", "horizon"],
            "properties": {
                "variant": {"enum": ["SHBF", "SAVD", "SHBFOP_ALT", "SFOGDA_ALT"]},
                "lambda": _POS,
                "alpha": _POS,
                "beta": _POS,
                "b": SCHEDULE,
                "mu": SCHEDULE,
                "gamma": SCHEDULE,
                "t_start": {"type": "number", "minimum": 0},
                "horizon": _POS,
                "initial": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["position", "velocity"],
                    "properties": {"position": _VEC, "velocity": _VEC},
                },
            },
            "allOf": [
                _variant_rule("SHBF", ["lambda", "b"]),
                _variant_rule("SAVD", ["alpha"]),
                _variant_rule("SHBFOP_ALT", ["lambda", "mu", "gamma"]),
                _variant_rule("SFOGDA_ALT", ["alpha", "beta"]),
            ],
        },
        "diffusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "multiplier": {"oneOf": [{"type": "null"}, SCHEDULE]},
                "operator": {"oneOf": [{"type": "null"}, _MATRIX]},
                "cutoff": {"oneOf": [{"type": "null"}, _NUM]},
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["step"],
            "properties": {
                "scheme": {"enum": ["em", "rk4"]},
                "step": _POS,
                "record_every": {"type": "integer", "minimum": 1},
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "base": {"type": "integer", "minimum": 0},
                "n_paths": {"type": "integer", "minimum": 1},
            },
        },
        "fit": {"type": "array", "items": FIT},
        "equivalence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t0": _NUM,
                "levels": {"type": "integer", "minimum": 2},
                "tolerance": _POS,
                "min_slope": _NUM,
            },
        },
        "validate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "radius": _POS,
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}


def _json_path(parts):
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out or "."


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    warnings: Tuple[str, ...] = field(default=())

    # section accessors with defaults ---------------------------------------
    @property
    def system(self):
        return self.raw["system"]

    @property
    def integrator(self):
        return {"scheme": "em", "record_every": 1, **self.raw["integrator"]}

    @property
    def seeds(self):
        return {"base": 0, "n_paths": 1, **self.raw.get("seeds", {})}

    @property
    def fits(self):
        return [{"statistic": "mean", **f} for f in self.raw.get("fit", [])]

    @property
    def equivalence(self):
        return {"t0": 0.0, "levels": 5, "tolerance": 1e-6, "min_slope": 0.4,
                **self.raw.get("equivalence", {})}

    @property
    def validate(self):
        return {"samples": 1000, "radius": 1.0, "seed": 0, **self.raw.get("validate", {})}

    # object construction ---------------------------------------------------
    def build_problem(self):
        p = self.raw["problem"]
        if p["name"] == "quadratic":
            return make_quadratic(p["spectrum"], p.get("minimizer"))
        if p["name"] == "rotation":
            return make_rotation()
        return make_bilinear_saddle(p["coupling"])

    def build_spec(self, problem=None):
        problem = self.build_problem() if problem is None else problem
        s = self.system
        t0 = float(s["t_start"])
        diff = _diffusion(self.raw.get("diffusion", {}), t0)
        init = s.get("initial")
        initial = None if init is None else (init["position"], init["velocity"])
        v = s["variant"]
        if v == "SHBF":
            return build_shbf(s["lambda"], _schedule(s["b"], t0), diff, problem, initial, t0,
                              s["horizon"])
        if v == "SAVD":
            return build_savd(s["alpha"], diff, problem, initial, t0, s["horizon"])
        if v == "SHBFOP_ALT":
            return build_shbfop_alt(s["lambda"], _schedule(s["mu"], t0),
                                    _schedule(s["gamma"], t0), diff, problem, initial, t0,
                                    s["horizon"])
        return build_sfogda_alt(s["alpha"], s["beta"], diff, problem, initial, t0,
                                s["horizon"])


def _schedule(d, t0):
    fam = d["family"]
    if fam == "constant":
        return ScalarSchedule.constant(d["coef"], t0)
    if fam == "power":
        return ScalarSchedule.power_law(d["coef"], d.get("power", 0.0), t0)
    if fam == "power_log":
        return ScalarSchedule.power_log(d["coef"], d.get("power", 0.0), t0)
    return ScalarSchedule.exponential(d["coef"], d.get("rate", 0.0), t0, d.get("t_ref", 0.0))


def _diffusion(d, t0):
    mult = d.get("multiplier")
    if mult is None:
        return DiffusionSchedule.zero()
    op = d.get("operator")
    return DiffusionSchedule(_schedule(mult, t0), None if op is None else np.array(op, float),
                             d.get("cutoff"))


def _semantic_errors(raw):
    """Cross-field checks the schema cannot express."""
    errs = []
    p = raw["problem"]
    if p["name"] == "quadratic":
        dim = len(p["spectrum"])
        if "minimizer" in p and len(p["minimizer"]) != dim:
            errs.append((".problem.minimizer", f"length must equal the spectrum length {dim}"))
    elif p["name"] == "rotation":
        dim = 2
    else:
        rows = p["coupling"]
        if len({len(r) for r in rows}) != 1:
            errs.append((".problem.coupling", "rows must have equal length"))
            return errs
        dim = len(rows) + len(rows[0])
    s = raw["system"]
    kind = "objective" if p["name"] == "quadratic" else "operator"
    if s["variant"] in ("SHBF", "SAVD") and kind != "objective":
        errs.append((".system.variant", f"{s['variant']} needs an objective problem"))
    if s["variant"] in ("SHBFOP_ALT", "SFOGDA_ALT") and kind != "operator":
        errs.append((".system.variant", f"{s['variant']} needs an operator problem"))
    if s["variant"] in ("SAVD", "SFOGDA_ALT") and not s["t_start"] > 0:
        errs.append((".system.t_start", "must be > 0 for vanishing-damping systems"))
    for key in ("position", "velocity"):
        vec = s.get("initial", {}).get(key)
        if vec is not None and len(vec) != dim:
            errs.append((f".system.initial.{key}", f"length must equal the dimension {dim}"))
    op = raw.get("diffusion", {}).get("operator")
    if op is not None and (len(op) != dim or any(len(r) != dim for r in op)):
        errs.append((".diffusion.operator", f"must be a {dim}x{dim} matrix"))
    for i, f in enumerate(raw.get("fit", [])):
        w = f.get("window")
        if w is not None and not w[0] < w[1]:
            errs.append((f".fit[{i}].window", "lower end must be below the upper end"))
        if f["metric"] == "suboptimality" and kind != "objective":
            errs.append((f".fit[{i}].metric", "suboptimality needs an objective problem"))
    return errs


def parse_config(text):
    """Validate a JSON document and return an ExperimentConfig.

    Raises ConfigError listing (json_path, message) pairs.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(".", f"malformed JSON: {exc}")]) from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)),
                                                               e.message))
    if errors:
        raise ConfigError([(_json_path(e.absolute_path), e.message) for e in errors])
    sem = _semantic_errors(raw)
    if sem:
        raise ConfigError(sem)
    warns = []
    s = raw["system"]
    if s["variant"] == "SAVD" and s["alpha"] <= 3:
        warns.append(f"alpha={s['alpha']} <= 3: the rate guarantees for SAVD do not apply")
    if s["variant"] == "SFOGDA_ALT" and s["alpha"] <= 2:
        warns.append(f"alpha={s['alpha']} <= 2: the rate guarantees for SFOGDA do not apply")
    cfg = ExperimentConfig(raw, tuple(warns))
    try:
        cfg.build_spec()
    except DynlabError as exc:
        raise ConfigError([(".system", str(exc))]) from None
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
