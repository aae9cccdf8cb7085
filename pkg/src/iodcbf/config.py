"""Versioned JSON configuration for the command-line pipeline."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .filter import FilterConfig
from .geometry import box_polytope
from .sim import (
    BENCHMARK_GAIN,
    Constant,
    NominalSchedule,
    PiecewiseRandom,
    StateSpacePlant,
    StaticFeedback,
)

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "plant": {
        "a": [[1.0, 0.1], [0.0, 1.0]],
        "b": [[0.0], [0.1]],
        "c": [[1.0, 0.0]],
        "input_delay": 2,
    },
    "t_ini": 5,
    "dataset_length": 17,
    "excitation": {"seed": 0, "scale": 1.0},
    "constraints": {"u_lower": [-1.0], "u_upper": [1.0], "y_lower": [-1.0], "y_upper": [1.0]},
    "filter": {"lambda_min": 1.0, "beta": 1e6},
    "invariant_set": {"max_iter": 200, "tol": 1e-7},
    "scenario": {
        "sample_time": 0.1,
        "schedule": [
            {"start": 0, "end": 2000, "kind": "random", "hold_steps": 20,
             "amplitude": 1.5, "seed": 0},
            {"start": 2000, "end": 4000, "kind": "feedback", "gain": list(BENCHMARK_GAIN)},
        ],
    },
    "output_dir": "out",
}

# sections whose contents are free-form lists/values rather than fixed keys
_OPAQUE = {("scenario", "schedule"), ("plant", "a"), ("plant", "b"), ("plant", "c")}
_SEGMENT_KEYS = {
    "random": {"start", "end", "kind", "hold_steps", "amplitude", "seed"},
    "feedback": {"start", "end", "kind", "gain"},
    "constant": {"start", "end", "kind", "value"},
}


def schema_hash() -> str:
    """Hash of the configuration key layout; changes whenever the schema does."""

    def shape(node):
        if isinstance(node, dict):
            return {k: shape(v) for k, v in sorted(node.items())}
        return type(node).__name__

    blob = json.dumps([CONFIG_VERSION, shape(DEFAULT_CONFIG)], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _merge(template: dict, given: dict, path=()):
    out = copy.deepcopy(template)
    for key, value in given.items():
        if key not in template:
            raise ValidationError(f"unknown config key {'.'.join(path + (key,))!r}")
        if isinstance(template[key], dict) and (path + (key,)) not in _OPAQUE:
            if not isinstance(value, dict):
                raise ValidationError(f"config key {'.'.join(path + (key,))!r} must be an object")
            out[key] = _merge(template[key], value, path + (key,))
        else:
            out[key] = value
    return out


def validate_schedule(segments) -> None:
    if not isinstance(segments, list):
        raise ValidationError("scenario.schedule must be a list of segments")
    prev = None
    for seg in segments:
        kind = seg.get("kind")
        if kind not in _SEGMENT_KEYS:
            raise ValidationError(f"unknown schedule segment kind {kind!r}")
        extra = set(seg) - _SEGMENT_KEYS[kind]
        if extra:
            raise ValidationError(f"unknown keys in {kind} segment: {sorted(extra)}")
        if prev is not None and seg["start"] != prev:
            raise ValidationError("schedule segments must be contiguous")
        if seg["end"] < seg["start"]:
            raise ValidationError("schedule segment ends before it starts")
        prev = seg["end"]


def validate(cfg: dict) -> dict:
    if cfg.get("version") != CONFIG_VERSION:
        raise ValidationError(f"unsupported config version {cfg.get('version')!r}")
    if int(cfg["t_ini"]) < 1:
        raise ValidationError("t_ini must be positive")
    if int(cfg["dataset_length"]) < 1:
        raise ValidationError("dataset_length must be positive")
    c = cfg["constraints"]
    for lo, hi in (("u_lower", "u_upper"), ("y_lower", "y_upper")):
        if len(c[lo]) != len(c[hi]) or np.any(np.asarray(c[lo]) > np.asarray(c[hi])):
            raise ValidationError(f"constraints {lo}/{hi} are inconsistent")
    lam = float(cfg["filter"]["lambda_min"])
    if not 0.0 < lam <= 1.0:
        raise ValidationError("filter.lambda_min must lie in (0, 1]")
    if not float(cfg["filter"]["beta"]) > 0:
        raise ValidationError("filter.beta must be positive")
    validate_schedule(cfg["scenario"]["schedule"])
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    given = {}
    if path is not None:
        try:
            given = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(given, dict):
            raise ValidationError(f"{path}: top level must be an object")
    cfg = _merge(DEFAULT_CONFIG, given)
    if overrides:
        cfg = _merge(cfg, overrides)
    return validate(cfg)


def apply_seed(cfg: dict, seed: int) -> dict:
    """Use ``seed`` for the excitation and for every random schedule segment."""
    cfg = copy.deepcopy(cfg)
    cfg["excitation"]["seed"] = int(seed)
    for seg in cfg["scenario"]["schedule"]:
        if seg["kind"] == "random":
            seg["seed"] = int(seed)
    return cfg


def make_plant(cfg: dict) -> StateSpacePlant:
    pl = cfg["plant"]
    return StateSpacePlant(pl["a"], pl["b"], pl["c"], int(pl["input_delay"]))


def make_sets(cfg: dict):
    c = cfg["constraints"]
    return box_polytope(c["u_lower"], c["u_upper"]), box_polytope(c["y_lower"], c["y_upper"])


def make_filter_config(cfg: dict) -> FilterConfig:
    u_set, _ = make_sets(cfg)
    f = cfg["filter"]
    return FilterConfig(lambda_min=float(f["lambda_min"]), beta=float(f["beta"]), u_set=u_set)


def make_schedule(segments) -> NominalSchedule:
    validate_schedule(segments)
    built = []
    for seg in segments:
        kind = seg["kind"]
        if kind == "random":
            gen = PiecewiseRandom(int(seg["hold_steps"]), float(seg["amplitude"]), int(seg["seed"]))
        elif kind == "feedback":
            gen = StaticFeedback(tuple(np.ravel(seg["gain"]).tolist()))
        else:
            gen = Constant(tuple(np.ravel(seg["value"]).tolist()))
        built.append((int(seg["start"]), int(seg["end"]), gen))
    return NominalSchedule(built)
