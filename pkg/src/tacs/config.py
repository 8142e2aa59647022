"""Experiment configuration: one YAML tree per experiment, validated up front."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

from .errors import ConfigError

_NUM = (int, float)

SCHEMA = {
    "task": {"name": str, "n_train": int, "n_holdout": int},
    "schedule": {"type": str, "T": int, "beta_min": _NUM, "beta_max": _NUM},
    "score": {"hidden": list, "activation": str, "conditional": bool, "epochs": int, "batch_size": int,
              "lr": _NUM, "lr_final": _NUM + (type(None),), "p_drop": _NUM},
    "timepred": {"hidden": list, "activation": str, "conditional": bool, "epochs": int, "batch_size": int,
                 "lr": _NUM, "lr_final": _NUM + (type(None),), "feature_mode": str, "repeats": int,
                 "holdout_frac": _NUM, "n_bands": int, "delta": int},
    "sampler": {"method": str, "z": _NUM, "delta": int, "t_tcs": int, "t_og": int, "t_og_end": int,
                "w": _NUM, "prediction_mode": str, "tp_uses_condition": bool, "record_stride": int,
                "shift": str, "guidance": {"z": _NUM, "m": int, "sigma": _NUM, "kappa": _NUM + (str,), "mode": str,
                             "k": int, "h": _NUM}},
    "eval": {"n": int, "target": _NUM + (str,)},
    "seeds": {"data": int, "train": int, "sample": int},
    "output": str,
}

DEFAULTS = {
    "task": {"name": "sphere", "n_train": 5000, "n_holdout": 1000},
    "schedule": {"type": "linear", "T": 100, "beta_min": 1e-3, "beta_max": 0.2},
    "score": {"hidden": [256, 256, 256], "activation": "elu", "conditional": False, "epochs": 300,
              "batch_size": 128, "lr": 2e-3, "lr_final": 1e-5, "p_drop": 0.1},
    "timepred": {"hidden": [128, 128], "activation": "tanh", "conditional": False, "epochs": 40,
                 "batch_size": 256, "lr": 2e-3, "lr_final": 1e-4, "feature_mode": "invariant-3d",
                 "repeats": 4, "holdout_frac": 0.1, "n_bands": 10, "delta": 5},
    "sampler": {"method": "tacs", "z": 1.0, "delta": 1, "t_tcs": 60, "t_og": 60, "t_og_end": 2, "w": 0.0,
                "prediction_mode": "argmax", "tp_uses_condition": False, "record_stride": 0,
                "shift": "state", "guidance": {"z": 1.0, "m": 1, "sigma": 5e-3, "kappa": 1.0, "mode": "first-order",
                             "k": 6, "h": 1e-3}},
    "eval": {"n": 500, "target": 2.0},
    "seeds": {"data": 0, "train": 1, "sample": 2},
    "output": "out",
}

ENV_OVERRIDES = {"TACS_SEED_DATA": ("seeds", "data"), "TACS_SEED_TRAIN": ("seeds", "train"),
                 "TACS_SEED_SAMPLE": ("seeds", "sample"), "TACS_OUT": ("output",)}


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers in the YAML source."""
    lines = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                where = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[where] = k.start_mark.line + 1
                walk(v, where)

    try:
        walk(yaml.compose(text), "")
    except yaml.YAMLError:
        pass
    return lines


def _validate(node, schema, path):
    if not isinstance(node, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(node).__name__}")
    for key, value in node.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in schema:
            raise ConfigError(f"{where}: unknown key")
        rule = schema[key]
        if isinstance(rule, dict):
            _validate(value, rule, where)
        else:
            allowed = rule if isinstance(rule, tuple) else (rule,)
            # bool is an int subclass; only accept it where bool is declared
            if not isinstance(value, allowed) or (isinstance(value, bool) and bool not in allowed):
                names = "/".join(a.__name__ for a in allowed)
                raise ConfigError(f"{where}: expected {names}, got {type(value).__name__} ({value!r})")


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults <- YAML file <- environment (seeds, output) <- explicit overrides."""
    user = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            user = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"{p}: {err}") from err
    try:
        _validate(user, SCHEMA, "")
    except ConfigError as err:
        field = str(err).split(":", 1)[0]
        line = _key_lines(p.read_text()).get(field)
        raise ConfigError(f"{p}:{line}: {err}" if line else f"{p}: {err}") from None
    cfg = _merge(DEFAULTS, user)
    for var, keys in ENV_OVERRIDES.items():
        if var in os.environ:
            raw = os.environ[var]
            value = raw if keys == ("output",) else _int_env(var, raw)
            _set(cfg, keys, value)
    for keys, value in (overrides or {}).items():
        if value is not None:
            _set(cfg, keys, value)
    _validate(cfg, SCHEMA, "")
    return cfg


def _int_env(var, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"environment {var}={raw!r} is not an integer") from None


def _set(cfg, keys, value):
    node = cfg
    for k in keys[:-1]:
        node = node[k]
    node[keys[-1]] = value


def config_hash(cfg: dict, sections=None) -> str:
    part = cfg if sections is None else {k: cfg[k] for k in sections}
    return hashlib.sha256(json.dumps(part, sort_keys=True, default=str).encode()).hexdigest()[:16]
