"""Experiment configuration read from TOML files.

Recognized tables and keys (all optional, defaults shown in ``DEFAULTS``):

``[model]``  G, m, targets, weights, gamma, variant, idio_law, C_f, mu0
``[seeds]``  master
``[policy]`` kind (coordinated | random | rally | file), slots, seed, actions, path
``[value]``, ``[kernel_check]``, ``[perturb_stats]``, ``[solve]``, ``[poc]``
"""
from __future__ import annotations

import copy
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .model import DriftParams, MftgSpec, build_drift_model

__all__ = ["DEFAULTS", "ConfigError", "load_config", "merge_config", "drift_params", "build_model", "initial_state"]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


DEFAULTS: dict = {
    "model": {
        "G": 3,
        "m": 2,
        "targets": [0, 2],
        "weights": [[0, -1], [1, 0]],
        "gamma": 0.9,
        "variant": "plain",
        "idio_law": [0.25, 0.5, 0.25],
        "mu0": "uniform",
    },
    "seeds": {"master": 20240601},
    "backend": "quadrature",
    "policy": {"kind": "random", "slots": 2, "seed": 7, "actions": [0, 0]},
    "value": {"reps": 2000, "tol": 1e-4, "eps": 1e-8, "mc_samples": 100_000},
    "kernel_check": {"mc_samples": 100_000, "flag_tol": 1e-6, "random_pairs": 3},
    "perturb_stats": {"samples": 1_000_000, "show": 20, "bases": ["spiked", "uniform", [1 / 3, 2 / 3]]},
    "solve": {
        "mode": "best_response",
        "update": "round_robin",
        "max_iter": 50,
        "eps": 1e-8,
        "grid": "vertex",
        "init": "random",
        "init_seed": 1,
        "eta": "mu0",
    },
    "poc": {"Ns": [1, 10, 100, 1000], "reps": 500, "tol": 1e-4},
}


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None) -> dict:
    """Defaults overlaid with the TOML file at ``path`` (if given)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = merge_config(DEFAULTS, data)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["backend"] not in ("closed_form", "quadrature", "mc"):
        raise ConfigError(f"unknown backend {cfg['backend']!r}")
    for section in ("value", "poc"):
        if cfg[section]["reps"] < 1:
            raise ConfigError(f"[{section}] reps must be >= 1")
        if cfg[section]["tol"] <= 0:
            raise ConfigError(f"[{section}] tol must be positive")
    for section, key in (("value", "eps"), ("solve", "eps"), ("kernel_check", "flag_tol")):
        if cfg[section][key] <= 0:
            raise ConfigError(f"[{section}] {key} must be positive")


def drift_params(cfg: dict) -> DriftParams:
    m = cfg["model"]
    try:
        return DriftParams(
            G=int(m["G"]),
            m=int(m["m"]),
            targets=tuple(m["targets"]),
            weights=tuple(tuple(r) for r in m["weights"]),
            variant=m.get("variant", "plain"),
            idio_law=tuple(m.get("idio_law", (0.25, 0.5, 0.25))),
            gamma=float(m.get("gamma", 0.9)),
            C_f=m.get("C_f"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[model]: {exc}") from exc


def build_model(cfg: dict) -> MftgSpec:
    return build_drift_model(drift_params(cfg))


def initial_state(cfg: dict, spec: MftgSpec) -> np.ndarray:
    mu0 = cfg["model"].get("mu0", "uniform")
    S = spec.n_joint_states
    if mu0 == "uniform":
        return np.full(S, 1.0 / S)
    arr = np.array(mu0, dtype=float)
    if arr.shape != (S,) or np.any(arr < 0) or abs(arr.sum() - 1) > 1e-12:
        raise ConfigError(f"[model] mu0 must be 'uniform' or a pmf over {S} joint states")
    return arr
