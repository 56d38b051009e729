"""Scenario configs: JSON schema with defaults, validation and datum builders.

Every default lives in :data:`SCHEMA`; :func:`load_config` fills them in so a
written report records the full effective configuration.
"""

from __future__ import annotations

import copy
import inspect
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .grid import MIN_NODES, GridFunction, PeriodicGrid, phi_eps_example, phi_example, u1_example
from .model import CATALOG, ContactHamiltonian, get_hamiltonian

KINDS = ("solve", "weakkam", "action", "reach", "verify", "example")
DATUM_TYPES = ("constant", "u1_example", "phi_example", "phi_eps_example", "cosine", "u_plus_shift", "csv")

_POS = {"type": "number", "exclusiveMinimum": 0}
_NULL_POS = {"type": ["number", "null"], "exclusiveMinimum": 0}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "id": {"type": "string", "pattern": "^[A-Za-z0-9._-]+$", "default": "scenario"},
        "kind": {"enum": list(KINDS)},
        "hamiltonian": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "id": {"enum": sorted(CATALOG), "default": "example_quadratic"},
                "params": {"type": "object", "default": {}},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {"N": {"type": "integer", "minimum": MIN_NODES, "multipleOf": 2, "default": 1000}},
        },
        "semigroup": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "dt": _NULL_POS | {"default": None},
                "v_max": _POS | {"default": 2.0},
                "n_v": {"type": "integer", "minimum": 3, "default": 129},
                "fp_tol": _POS | {"default": 1e-12},
                "fp_max_iter": {"type": "integer", "minimum": 1, "default": 60},
                "refine": {"type": "boolean", "default": True},
                "golden_iter": {"type": "integer", "minimum": 0, "default": 16},
                "backend": {"enum": ["auto", "numpy"], "default": "auto"},
            },
        },
        "fd": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "N": {"type": ["integer", "null"], "minimum": MIN_NODES, "multipleOf": 2, "default": None},
                "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.9, "default": 0.9},
                "alpha": _NULL_POS | {"default": None},
                "pad": {"type": "number", "minimum": 1, "default": 1.25},
                "adaptive": {"type": "boolean", "default": True},
            },
        },
        "ode": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {"n_starts": {"type": "integer", "minimum": 2, "default": 40}},
        },
        "datum": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "type": {"enum": list(DATUM_TYPES), "default": "phi_eps_example"},
                "value": {"type": "number", "default": 0.0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.25, "default": 0.1},
                "amplitude": {"type": "number", "default": 0.1},
                "mode": {"type": "integer", "minimum": 1, "default": 1},
                "path": {"type": ["string", "null"], "default": None},
            },
        },
        "solver": {"enum": ["semigroup", "fd"], "default": "semigroup"},
        "direction": {"enum": ["backward", "forward"], "default": "backward"},
        "horizon": _POS | {"default": 3.0},
        "stride": {"type": "integer", "minimum": 1, "default": 40},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.25, "default": 0.1},
        "tolerance": _POS | {"default": 0.01},
        "target": {"enum": ["u1_example", "u_plus"], "default": "u1_example"},
        "weakkam": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "route": {"enum": ["fixed_point", "duality"], "default": "fixed_point"},
                "tol": _POS | {"default": 1e-8},
                "max_steps": {"type": "integer", "minimum": 1, "default": 1000000},
            },
        },
        "action": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "kind": {"enum": ["forward", "backward"], "default": "forward"},
                "x0": {"type": "number", "default": 0.0},
                "u0": {"type": "number", "default": 0.0},
                "t_max": _POS | {"default": 1.0},
                "record_times": {"type": "array", "items": _POS, "default": [0.25, 0.5, 1.0]},
                "n_v": {"type": "integer", "minimum": 3, "default": 33},
                "backtrack_x": {"type": ["number", "null"], "default": None},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {
                "quick": {"type": "boolean", "default": False},
                "criteria": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 12},
                             "default": list(range(1, 13))},
                "convergence": {"type": "boolean", "default": True},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "default": {},
            "properties": {"root": {"type": "string", "default": "contact_hj_out"}},
        },
    },
}


class ConfigError(ValueError):
    """Config does not parse or validate."""


def _fill_defaults(schema: dict, obj):
    if schema.get("type") != "object" or not isinstance(obj, dict):
        return obj
    for key, sub in schema.get("properties", {}).items():
        if key not in obj and "default" in sub:
            obj[key] = copy.deepcopy(sub["default"])
        if key in obj:
            obj[key] = _fill_defaults(sub, obj[key])
    return obj


def _check_numbers(obj, where="config"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ConfigError(f"{where}: non-finite number")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_numbers(v, f"{where}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_numbers(v, f"{where}[{i}]")


def validate(cfg: dict) -> dict:
    """Validate against :data:`SCHEMA`, fill defaults and run cross-field checks."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {e.message}")
    _check_numbers(cfg)
    cfg = _fill_defaults(SCHEMA, copy.deepcopy(cfg))
    hid, hp = cfg["hamiltonian"]["id"], cfg["hamiltonian"]["params"]
    allowed = set(inspect.signature(CATALOG[hid]).parameters)
    unknown = set(hp) - allowed
    if unknown:
        raise ConfigError(f"hamiltonian.params: unknown parameters {sorted(unknown)} for {hid!r}")
    try:
        hamiltonian(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"hamiltonian.params: {exc}") from None
    if cfg["semigroup"]["n_v"] % 2 == 0 or cfg["action"]["n_v"] % 2 == 0:
        raise ConfigError("n_v must be odd so that v = 0 is sampled")
    if cfg["datum"]["type"] == "csv" and not cfg["datum"]["path"]:
        raise ConfigError("datum.path is required for csv data")
    act = cfg["action"]
    if any(t > act["t_max"] for t in act["record_times"]):
        raise ConfigError("action.record_times must not exceed action.t_max")
    return cfg


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    cfg = validate(cfg)
    cfg["_base_dir"] = str(Path(path).resolve().parent)
    return cfg


def hamiltonian(cfg: dict) -> ContactHamiltonian:
    return get_hamiltonian(cfg["hamiltonian"]["id"], **cfg["hamiltonian"]["params"])


def grid_of(cfg: dict) -> PeriodicGrid:
    return PeriodicGrid(cfg["grid"]["N"])


def build_datum(cfg: dict, grid: PeriodicGrid, H: ContactHamiltonian | None = None) -> GridFunction:
    d = cfg["datum"]
    kind = d["type"]
    if kind == "constant":
        return GridFunction.constant(grid, d["value"])
    if kind == "u1_example":
        return u1_example(grid)
    if kind == "phi_example":
        return phi_example(grid)
    if kind == "phi_eps_example":
        return phi_eps_example(d["epsilon"], grid)
    if kind == "cosine":
        return GridFunction(grid, d["value"] + d["amplitude"] * np.cos(2 * np.pi * d["mode"] * grid.nodes))
    if kind == "u_plus_shift":
        from .weakkam import compute_u_plus

        return compute_u_plus(H or hamiltonian(cfg), grid) + d["value"]
    path = Path(d["path"])
    if not path.is_absolute():
        path = Path(cfg.get("_base_dir", ".")) / path
    gf = GridFunction.from_csv(path)
    return gf if gf.grid.N == grid.N else gf.resample(grid)
