"""Run configuration: defaults, schema validation, canonical hashing.

Configs are plain nested dicts. validate() fills defaults, rejects unknown
keys, and checks ranges before any work happens; model_hash() fingerprints
the architecture-relevant section so checkpoints can refuse mismatched
evals.
"""

import copy
import hashlib
import json

from .errors import ConfigError
from .teachers import KNOWN_TEACHERS

DEFAULTS = {
    "out_dir": "runs/default",
    "seed": 0,
    "data": {
        "root": "data/rds",
        "height": 48,
        "width": 96,
        "density": 0.5,
        "d_max": 8,
        "n_train": 64,
        "n_val": 16,
        "layers_min": 1,
        "layers_max": 3,
    },
    "model": {
        "feat_widths": [32, 48],
        "feat_channels": 64,
        "context_widths": [32, 32, 48, 64],
        "hidden_channels": 64,
        "motion_channels": 64,
        "head_channels": 32,
        "align_hidden": 64,
        "max_disp": 16,
        "radius": 4,
        "iters_train": 8,
        "iters_eval": 16,
        "k": 2,
        "teachers": list(KNOWN_TEACHERS),
        "teacher_channels": 16,
        "noise_amp": 0.1,
    },
    "loss": {
        "gamma_p": 0.9,
        "gamma_kd": 0.9,
    },
    "optim": {
        "peak_lr": 2e-4,
        "warm_frac": 0.01,
        "weight_decay": 1e-5,
        "align_mult": 3.0,
        "align_half_every": 0.1,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
    },
    "train": {
        "steps": 500,
        "batch": 2,
        "val_every": 50,
        "ckpt_every": 100,
        "probe": 4,
    },
}


def _merge(defaults, user, path):
    if not isinstance(user, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    out = {}
    for key, dval in defaults.items():
        if key in user:
            uval = user[key]
            if isinstance(dval, dict):
                out[key] = _merge(dval, uval, f"{path}{key}.")
            else:
                out[key] = uval
        else:
            out[key] = copy.deepcopy(dval)
    for key in user:
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}{key}")
    return out


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(user=None):
    cfg = _merge(DEFAULTS, user or {}, "")
    d, m, lo, op, tr = cfg["data"], cfg["model"], cfg["loss"], cfg["optim"], cfg["train"]
    _need(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a non-negative integer")
    _need(d["height"] % 4 == 0 and d["width"] % 4 == 0 and d["height"] > 0 and d["width"] > 0,
          "data.height and data.width must be positive multiples of 4")
    _need(0.0 < d["density"] <= 1.0, f"data.density {d['density']} outside (0, 1]")
    _need(0 <= d["d_max"] <= 64, "data.d_max must be in [0, 64]")
    _need(d["n_train"] >= 1 and d["n_val"] >= 1, "data.n_train and data.n_val must be >= 1")
    _need(1 <= d["layers_min"] <= d["layers_max"], "data layer count range invalid")
    _need(len(m["feat_widths"]) == 2, "model.feat_widths must have 2 entries")
    _need(len(m["context_widths"]) == 4, "model.context_widths must have 4 entries")
    _need(m["max_disp"] >= 1, "model.max_disp must be >= 1")
    _need(m["max_disp"] <= d["width"] // 4,
          f"model.max_disp {m['max_disp']} exceeds quarter-resolution width {d['width'] // 4}")
    _need(m["radius"] >= 1, "model.radius must be >= 1")
    _need(m["iters_train"] >= 1 and m["iters_eval"] >= 1, "iteration counts must be >= 1")
    teachers = m["teachers"]
    _need(len(teachers) >= 1, "model.teachers must not be empty")
    for t in teachers:
        _need(t in KNOWN_TEACHERS, f"unknown teacher {t!r}, expected one of {KNOWN_TEACHERS}")
    _need(len(set(teachers)) == len(teachers), "model.teachers has duplicates")
    _need(1 <= m["k"] <= len(teachers), f"model.k {m['k']} outside 1..{len(teachers)}")
    _need(m["teacher_channels"] >= 1, "model.teacher_channels must be >= 1")
    _need(m["noise_amp"] >= 0, "model.noise_amp must be >= 0")
    for name, g in (("loss.gamma_p", lo["gamma_p"]), ("loss.gamma_kd", lo["gamma_kd"])):
        _need(0.0 <= g < 1.0, f"{name} must be in [0, 1)")
    _need(op["peak_lr"] > 0, "optim.peak_lr must be positive")
    _need(0.0 < op["warm_frac"] < 1.0, "optim.warm_frac must be in (0, 1)")
    _need(op["weight_decay"] >= 0, "optim.weight_decay must be >= 0")
    _need(op["align_mult"] > 1.0, "optim.align_mult must exceed 1")
    _need(0.0 < op["align_half_every"] <= 1.0, "optim.align_half_every must be in (0, 1]")
    _need(tr["steps"] >= 0, "train.steps must be >= 0")
    _need(tr["batch"] >= 1, "train.batch must be >= 1")
    _need(tr["val_every"] >= 1 and tr["ckpt_every"] >= 1, "cadence settings must be >= 1")
    _need(1 <= tr["probe"], "train.probe must be >= 1")
    return cfg


def load(path=None, overrides=None):
    user = {}
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if overrides:
        for key, value in overrides.items():
            user[key] = value
    return validate(user)


def canonical(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def model_hash(cfg):
    return hashlib.sha256(canonical(cfg["model"]).encode("ascii")).hexdigest()[:16]
