"""Hierarchical JSON run configuration.

A config file is one JSON object with the sections below; anything left out
takes the default. Command-line flags override file values. A run manifest
written by the CLI stores the fully resolved document under ``"config"``
and is itself accepted as a config file, which is how runs are repeated.

Sections
--------
seed
    Integer seed for noise, sampling plans and field training.
phantom
    ``nx``, ``ny``, ``n_t``, ``n_coils``, ``noise_sigma`` and ``options``
    (keyword overrides for :class:`cpcrecon.phantom.PhantomConfig`).
sampling
    ``mode`` (cartesian|radial), ``accel`` and ``samples_per_spoke``.
recon
    ``method``, ``lambda_llr``, ``lambda_hyb``, ``cg_max_iter``, ``cg_tol``,
    ``llr_iters``, ``schedule`` (list of ``[epochs, batch]``), ``lr``,
    ``checkpoint`` and ``train_field``.
sweep
    ``methods``, ``accels``, ``lambda_llr`` and ``lambda_hyb`` (lists).
output
    ``precision`` (single|double) and ``figures`` (bool).
inputs
    Paths of input containers, filled in by the CLI.
"""
import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "phantom": {
        "nx": 64,
        "ny": 64,
        "n_t": 32,
        "n_coils": 4,
        "noise_sigma": 0.03,
        "options": {},
    },
    "sampling": {"mode": "cartesian", "accel": 1, "samples_per_spoke": None},
    "recon": {
        "method": "sws",
        "lambda_llr": 1e-2,
        "lambda_hyb": 5e-2,
        "cg_max_iter": 30,
        "cg_tol": 1e-10,
        "llr_iters": 30,
        "schedule": None,
        "lr": 1e-3,
        "checkpoint": None,
        "train_field": False,
    },
    "sweep": {
        "methods": ["sws", "llr", "field", "hybrid"],
        "accels": [4, 8, 16, 32],
        "lambda_llr": [1e-3, 1e-2, 1e-1],
        "lambda_hyb": [1e-3, 1e-2, 5e-2, 1e-1],
    },
    "output": {"precision": "single", "figures": True},
    "inputs": {},
}

_pos_int = {"type": "integer", "minimum": 1}
_nonneg = {"type": "number", "minimum": 0}
_method = {"enum": ["sws", "llr", "field", "hybrid"]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "phantom": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nx": _pos_int, "ny": _pos_int,
                "n_t": {"type": "integer", "minimum": 2},
                "n_coils": _pos_int,
                "noise_sigma": _nonneg,
                "options": {"type": "object"},
            },
        },
        "sampling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["cartesian", "radial"]},
                "accel": {"type": "number", "exclusiveMinimum": 0},
                "samples_per_spoke": {"type": ["integer", "null"], "minimum": 2},
            },
        },
        "recon": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": _method,
                "lambda_llr": _nonneg,
                "lambda_hyb": _nonneg,
                "cg_max_iter": _pos_int,
                "cg_tol": _nonneg,
                "llr_iters": _pos_int,
                "schedule": {
                    "type": ["array", "null"],
                    "items": {"type": "array", "items": {"type": "integer", "minimum": 0},
                              "minItems": 2, "maxItems": 2},
                },
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "checkpoint": {"type": ["string", "null"]},
                "train_field": {"type": "boolean"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "methods": {"type": "array", "items": _method, "minItems": 1},
                "accels": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                           "minItems": 1},
                "lambda_llr": {"type": "array", "items": _nonneg, "minItems": 1},
                "lambda_hyb": {"type": "array", "items": _nonneg, "minItems": 1},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "precision": {"enum": ["single", "double"]},
                "figures": {"type": "boolean"},
            },
        },
        "inputs": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}


def merge(base, override):
    """Recursive dict merge; ``override`` wins, nested dicts merge."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "options":
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    return doc


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides``; validated.

    ``path`` may also point at a run manifest (``manifest.json`` or its
    directory), in which case its stored ``config`` is used.
    """
    doc = {}
    if path is not None:
        p = Path(path)
        if p.is_dir():
            p = p / "manifest.json"
        try:
            doc = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {p} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        if "config" in doc and "format" in doc:
            doc = doc["config"]
        validate(doc)
    cfg = merge(DEFAULTS, doc)
    if overrides:
        cfg = merge(cfg, overrides)
    return validate(cfg)


def set_path(overrides, dotted, value):
    """``set_path(d, "recon.method", "llr")``; ``None`` values are skipped."""
    if value is None:
        return overrides
    keys = dotted.split(".")
    node = overrides
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return overrides
