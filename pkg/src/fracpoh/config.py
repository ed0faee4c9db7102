"""Experiment configuration: JSON schema, defaults and semantic validation."""

import copy
import json
import os

import numpy as np
from jsonschema import Draft202012Validator

from .errors import FracpohError, ValidationError
from .geometry import domain_from_spec
from .kernel import Kernel, critical_exponent
from .nonlocal_op import QuadratureParams

CHECKS = ("poh1", "poh2", "f_form", "trace", "regularity", "lds", "scaling_identity", "toy_identity",
          "nonexistence", "unique_continuation")
SWEEP_PARAMETERS = ("N", "s", "p", "scale")

# which module owns each block; validation errors name it
BLOCK_MODULE = {"kernel": "kernel", "domain": "geometry", "problem": "solve", "quadrature": "nonlocal_op",
                "trace": "trace", "sweep": "cli_io",
                "output": "cli_io", "seed": "cli_io", "name": "cli_io"}
CHECK_MODULE = {"poh1": "pohozaev", "poh2": "pohozaev", "f_form": "pohozaev", "nonexistence": "pohozaev",
                "unique_continuation": "pohozaev", "trace": "trace", "regularity": "trace",
                "lds": "nonlocal_op", "scaling_identity": "nonlocal_op", "toy_identity": "nonlocal_op"}

DEFAULT_TOL = {"poh1": 0.02, "poh2": 0.03, "f_form": 0.05, "trace": 0.02, "lds": 0.1,
               "scaling_identity": 1e-3, "toy_identity": 1e-3}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1, "maxItems": 2}

_KERNEL = {
    "type": "object",
    "required": ["n", "s"],
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "enum": [1, 2]},
        "s": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "angular": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["constant", "sampled"]},
                "value": _pos,
                "table": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
            },
        },
        "ellipticity": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
    },
}

_DOMAIN = {
    "type": "object",
    "required": ["shape"],
    "additionalProperties": False,
    "properties": {
        "shape": {"enum": ["interval", "ball", "ellipse", "annulus"]},
        "params": {"type": "object"},
        "distance_cap": {"oneOf": [_pos, {"type": "null"}]},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"N": {"type": "integer", "minimum": 8}, "grading": {"type": "number", "minimum": 1}},
        },
        "boundary_nodes": {"type": "integer", "minimum": 2},
    },
}

_SOURCE = {"oneOf": [
    _num,
    {"type": "object", "additionalProperties": False,
     "properties": {"constant": _num, "gradient": _vec}},
]}

_PROBLEM = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["linear", "power", "eigen"]},
        "g": _SOURCE,
        "p": {"type": "number", "exclusiveMinimum": 1},
        "index": {"type": "integer", "minimum": 1},
        "tol": _pos,
        "max_iter": {"type": "integer", "minimum": 1},
    },
}

_TRACE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "points": {"oneOf": [{"const": "all"}, {"type": "array", "items": {"type": "integer", "minimum": 0}}]},
        "ladder": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"t0": _pos, "levels": {"type": "integer", "minimum": 3},
                           "order": {"oneOf": [{"const": "auto"}, _pos]}},
        },
        "radii": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"values": {"type": "array", "items": _pos, "minItems": 3},
                           "levels": {"type": "integer", "minimum": 3}},
        },
    },
}

_CHECK_OBJ = {
    "type": "object",
    "required": ["name"],
    "additionalProperties": False,
    "properties": {
        "name": {"enum": list(CHECKS)},
        "tol": _pos,
        "origin": _vec,
        "direction": _vec,
        "point": {"type": "integer", "minimum": 0},
        "expected": _num,
        "min_gamma": _num,
        "min_trace": _num,
        "distances": {"type": "array", "items": _pos, "minItems": 1},
        "probes": {"type": "integer", "minimum": 1},
    },
}

SCHEMA = {
    "type": "object",
    "required": ["kernel", "domain", "checks"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "kernel": _KERNEL,
        "domain": _DOMAIN,
        "problem": _PROBLEM,
        "quadrature": {"type": "object"},
        "trace": _TRACE,
        "checks": {"type": "array", "minItems": 1,
                   "items": {"oneOf": [{"enum": list(CHECKS)}, _CHECK_OBJ]}},
        "sweep": {
            "type": "object",
            "required": ["parameter", "values"],
            "additionalProperties": False,
            "properties": {
                "parameter": {"enum": list(SWEEP_PARAMETERS)},
                "values": {"type": "array", "items": _num, "minItems": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "prefix": {"type": "string"},
                "save_solution": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

PROBLEM_DEFAULTS = {"kind": "linear", "g": 1.0, "index": 1, "tol": 1e-8, "max_iter": 500}
GRID_DEFAULTS = {1: {"N": 1024, "grading": 2.0}, 2: {"N": 48, "grading": 2.0}}
OUTPUT_DEFAULTS = {"dir": "out", "prefix": None, "save_solution": True}


def _module_for(path, cfg):
    if not path:
        return "cli_io"
    head = path[0]
    if head == "checks" and len(path) > 1:
        item = cfg.get("checks", [])[path[1]] if isinstance(cfg.get("checks"), list) else None
        name = item if isinstance(item, str) else (item or {}).get("name") if isinstance(item, dict) else None
        return CHECK_MODULE.get(name, "cli_io")
    return BLOCK_MODULE.get(head, "cli_io")


def _dotted(path):
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _fail(field, module, message):
    raise ValidationError(f"{field}: {message} (module {module})", field=field, module=module)


def _deepest(err):
    """Follow oneOf branches to the most specific message."""
    best = err
    for sub in err.context or ():
        cand = _deepest(sub)
        if len(cand.absolute_path) > len(best.absolute_path):
            best = cand
    return best


def validate(cfg):
    """Schema and semantic checks; returns a normalized deep copy with defaults filled in."""
    if not isinstance(cfg, dict):
        raise ValidationError("config must be a JSON object", field="", module="cli_io")
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(cfg), key=lambda e: [str(x) for x in e.absolute_path])
    if errors:
        err = _deepest(errors[0])
        path = list(err.absolute_path)
        field = _dotted(path) or "<root>"
        _fail(field, _module_for(path, cfg), err.message)
    cfg = copy.deepcopy(cfg)
    cfg["problem"] = {**PROBLEM_DEFAULTS, **cfg.get("problem", {})}
    cfg["domain"]["grid"] = {**GRID_DEFAULTS[cfg["kernel"]["n"]], **cfg["domain"].get("grid", {})}
    cfg.setdefault("quadrature", {})
    cfg.setdefault("trace", {})
    cfg["trace"].setdefault("points", "all")
    cfg["output"] = {**OUTPUT_DEFAULTS, **cfg.get("output", {})}
    cfg.setdefault("seed", 0)
    cfg.setdefault("name", cfg["output"]["prefix"] or "experiment")
    if cfg["output"]["prefix"] is None:
        cfg["output"]["prefix"] = cfg["name"]
    cfg["checks"] = [{"name": c} if isinstance(c, str) else dict(c) for c in cfg["checks"]]
    _semantic(cfg)
    return cfg


def _semantic(cfg):
    k, d, pb = cfg["kernel"], cfg["domain"], cfg["problem"]
    n = k["n"]
    try:
        Kernel.from_spec(k)
    except FracpohError as exc:
        _fail("kernel", "kernel", str(exc))
    try:
        dom = domain_from_spec({k: d[k] for k in ("shape", "params", "distance_cap") if k in d})
    except FracpohError as exc:
        _fail("domain.params", "geometry", str(exc))
    if dom.n != n:
        _fail("domain.shape", "geometry", f"{d['shape']} is {dom.n}-dimensional but kernel.n = {n}")
    try:
        QuadratureParams.from_spec(cfg["quadrature"])
    except (FracpohError, TypeError) as exc:
        _fail("quadrature", "nonlocal_op", str(exc))
    g = pb["g"]
    if isinstance(g, dict) and "gradient" in g and len(g["gradient"]) != n:
        _fail("problem.g.gradient", "solve", f"needs {n} components")
    names = [c["name"] for c in cfg["checks"]]
    sweep = cfg.get("sweep")
    p_values = [pb.get("p")] if sweep is None or sweep["parameter"] != "p" else sweep["values"]
    if pb["kind"] == "power" or "nonexistence" in names:
        if any(p is None for p in p_values):
            _fail("problem.p", "solve", "an exponent p is required for power problems and nonexistence checks")
        if any(not p > 1 for p in p_values):
            _fail("sweep.values" if sweep and sweep["parameter"] == "p" else "problem.p", "solve",
                  "p must exceed 1")
    if pb["kind"] == "power":
        s_values = [k["s"]] if sweep is None or sweep["parameter"] != "s" else sweep["values"]
        for s in s_values:
            for p in p_values:
                if not p < critical_exponent(n, s):
                    _fail("problem.p", "solve", f"p = {p} is not subcritical (critical exponent "
                          f"{critical_exponent(n, s):.6g} at s = {s})")
    for i, c in enumerate(cfg["checks"]):
        mod = CHECK_MODULE[c["name"]]
        for key in ("origin", "direction"):
            if key in c and len(c[key]) != n:
                _fail(f"checks[{i}].{key}", mod, f"needs {n} components")
        if "direction" in c and abs(np.linalg.norm(c["direction"]) - 1) > 1e-10:
            _fail(f"checks[{i}].direction", mod, "must be a unit vector")
        if c["name"] == "f_form" and pb["kind"] == "linear" and isinstance(g, dict) and any(g.get("gradient", [])):
            _fail(f"checks[{i}].name", mod, "the f-form identity needs an autonomous source (no x-dependence)")
    if sweep is not None:
        vals = sweep["values"]
        if sweep["parameter"] == "N" and any(int(v) != v or v < 8 for v in vals):
            _fail("sweep.values", "cli_io", "N values must be integers >= 8")
        if sweep["parameter"] == "s" and any(not 0 < v < 1 for v in vals):
            _fail("sweep.values", "cli_io", "s values must lie in (0, 1)")
        if sweep["parameter"] == "scale" and any(not v > 0 for v in vals):
            _fail("sweep.values", "cli_io", "scale values must be positive")


def load_config(path):
    """Read and validate a config file; a bare name refers to a bundled config."""
    path = os.fspath(path)
    if not os.path.exists(path):
        bundled = bundled_config_path(path)
        if bundled is None:
            raise ValidationError(f"config file {path!r} not found", field="<file>", module="cli_io")
        path = bundled
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}", field="<file>", module="cli_io") from exc
    return validate(cfg)


def bundled_config_path(name):
    base = os.path.join(os.path.dirname(__file__), "configs")
    stem = os.path.basename(name)
    stem = stem[:-5] if stem.endswith(".json") else stem
    cand = os.path.join(base, stem + ".json")
    return cand if os.path.exists(cand) else None
