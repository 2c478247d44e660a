"""Run configuration: JSON file, defaults, strict key checking, stable hash."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

SCHEMA_VERSION = 1

DEFAULTS: dict = {
    "schema": SCHEMA_VERSION,
    "function": {"family": "tangent", "lambda": [0.0, -math.pi / 2]},
    "charts": {"eps0": None, "R": None, "c": "auto"},
    "alpha0": 3.0,
    "N0": None,
    "verify": {"which": ["bounds", "angle", "strip", "expansion", "pullback", "monotone"], "k": [0],
               "samples": 400},
    "mc": {"levels": 4, "samples": 100000, "seed": 0, "root_k": 0, "square": 2, "plane": 0,
           "avoid": None, "pair_k": 1, "pair_samples": 200},
    "orbit": {"z": [0.3, 0.2], "n_max": 200},
    "omega": {"seeds": 1000, "half_width": 2.0, "n_max": 1000, "tol": 0.05, "min_approaches": 3,
              "early_steps": 200, "seed": 0, "control_lambda": [1.0, 0.0]},
    "render": {"window": [-3.0, 3.0, -3.0, 3.0], "resolution": [200, 200], "n_max": 100},
    "output": "nevlab-out",
}

# blocks whose keys are checked downstream (the function block depends on the family)
_OPEN_BLOCKS = {"function"}


class ConfigError(ValueError):
    """Malformed or unknown configuration entries."""


def _merge(base: dict, over: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key not in _OPEN_BLOCKS:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then command-line overrides (dotted keys)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        if raw.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema {raw.get('schema')!r}")
        cfg = _merge(cfg, raw, "")
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        *head, last = dotted.split(".")
        node = cfg
        for part in head:
            node = node[part]
        node[last] = val
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    from .function_core import from_spec
    try:
        from_spec(cfg["function"])
    except (ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"function: {e}") from e
    a0 = cfg["alpha0"]
    if not isinstance(a0, (int, float)) or not math.isfinite(a0):
        raise ConfigError("alpha0 must be a finite number")
    mc = cfg["mc"]
    for key in ("levels", "samples", "seed", "root_k", "square", "plane", "pair_k", "pair_samples"):
        if not isinstance(mc[key], int) or isinstance(mc[key], bool):
            raise ConfigError(f"mc.{key} must be an integer")
    if mc["samples"] <= 0 or mc["levels"] < 2:
        raise ConfigError("mc.samples must be positive and mc.levels >= 2")
    ks = cfg["verify"]["k"]
    if not isinstance(ks, list) or not all(isinstance(k, int) and k >= 0 for k in ks):
        raise ConfigError("verify.k must be a list of non-negative integers")
    known = {"bounds", "angle", "strip", "expansion", "pullback", "monotone"}
    bad = set(cfg["verify"]["which"]) - known
    if bad:
        raise ConfigError(f"verify.which: unknown checks {sorted(bad)}")
    w = cfg["render"]["window"]
    if len(w) != 4 or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in w):
        raise ConfigError("render.window must be four finite numbers")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]
