"""Experiment configuration: one JSON file with fixed top-level sections."""
from __future__ import annotations

import copy
import json
from pathlib import Path

SECTIONS = ("world", "graph", "forge", "iql", "diffusion", "thresholds", "runner")

DEFAULTS: dict = {
    "world": {"preset": "default", "n_train": 500, "seed": 0},
    "graph": {"f_min": 5, "d_min": 0.12, "radius": 0.05, "theta_turn": 30.0,
              "window": 5, "bandwidth": 0.1},
    "forge": {"d": 0.04, "omega": 0.6, "omega_star": 0.6, "sigma": 0.03, "d_small": None},
    "iql": {"gamma_d": 0.99, "alpha_reg": 0.5, "lr": 1e-2, "epochs": 400,
            "batch_size": 128, "representation": "tabular"},
    "diffusion": {"profile": "synthetic"},
    "thresholds": {"gamma_q": None, "beta_e": None},
    "runner": {"repeats": 5, "n_normal": 400, "n_anomalous": 100, "pool_normal": 800,
               "pool_anomalous": 200, "val_normal": 200, "val_anomalous": 50,
               "anomaly_types": ["big_detour", "small_detour", "route_switch"],
               "seed": 0},
}


class ConfigError(ValueError):
    pass


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for s in cfg:
        if not isinstance(cfg[s], dict):
            raise ConfigError(f"section {s!r} must be an object")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        cfg = merge(cfg, validate(user))
    if overrides:
        cfg = merge(cfg, validate(overrides))
    return cfg


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
