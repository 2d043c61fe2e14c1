"""Run configuration: defaults, YAML loading, and validation."""
from __future__ import annotations

import copy

import yaml

from .errors import ConfigError
from .trajectories import DIRECTIONS, REGIMES

DEFAULTS = {
    "world": {
        "seed": 7,
        "scene_count": 3,
        "extent": 13.5,
    },
    "generate": {
        "width": 128,
        "height": 128,
        "vertical_fov": 60.0,
        "bit_depth": 16,
        "step": 0.4,
        "margin": 0.45,
        "split_ratios": [0.6, 0.2, 0.2],
        "regimes": [
            {"name": "rectangular", "direction": "forward"},
            {"name": "circular", "direction": "forward"},
            {"name": "semicircular", "direction": "forward"},
            {"name": "spiral", "turns": 2.2},
            {"name": "random", "count": 30},
        ],
    },
    "augment": {
        "brightness_factors": [0.6, 1.4],
        "mask_frac": 0.3,
        "stride_frac": 0.6,
    },
    "training": {
        "seed": 0,
        "device": "cpu",
        "beta": 1.0,
        "classifier": {
            "epochs": 8,
            "batch_size": 16,
            "lr": 1e-3,
            "width_mult": 0.25,
            "depth_mult": 0.5,
            "drop_connect": 0.1,
        },
        "gan": {
            "epochs": 6,
            "batch_size": 8,
            "lr": 2e-4,
            "l1_weight": 100.0,
            "ngf": 32,
            "ndf": 32,
        },
        "branches": {
            "epochs": 6,
            "batch_size": 16,
            "lr": 1e-3,
            "init": "classifier",
        },
        "fused": {
            "epochs": 6,
            "batch_size": 16,
            "lr": 1e-3,
            "init": "pretrained",
        },
    },
    "evaluation": {
        "batch_size": 32,
    },
    "disruption": {
        "count": 2,
        "size_range": [0.5, 1.1],
        "frames": 24,
        "seed": 13,
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None) -> dict:
    """Defaults, optionally overridden by a YAML file; validated."""
    if path is None:
        cfg = copy.deepcopy(DEFAULTS)
    else:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"config root must be a mapping, got {type(doc).__name__}")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = deep_merge(DEFAULTS, doc)
    validate_config(cfg)
    return cfg


def _need(cond, message):
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: dict) -> None:
    w = cfg["world"]
    _need(isinstance(w["scene_count"], int) and w["scene_count"] >= 2,
          "world.scene_count must be an int >= 2")
    _need(w["extent"] > 0, "world.extent must be > 0")

    g = cfg["generate"]
    _need(g["width"] >= 16 and g["height"] >= 16, "generate images must be >= 16 px")
    _need(g["bit_depth"] in (8, 16), "generate.bit_depth must be 8 or 16")
    _need(g["step"] > 0, "generate.step must be > 0")
    _need(g["margin"] >= 0, "generate.margin must be >= 0")
    ratios = g["split_ratios"]
    _need(len(ratios) == 3 and abs(sum(ratios) - 1.0) < 1e-9 and all(r >= 0 for r in ratios),
          "generate.split_ratios must be 3 nonnegative values summing to 1")
    _need(isinstance(g["regimes"], list) and g["regimes"], "generate.regimes must be a non-empty list")
    for r in g["regimes"]:
        _need(isinstance(r, dict) and "name" in r, "each regime needs a name")
        _need(r["name"] in REGIMES, f"unknown regime {r.get('name')!r}")
        _need(r.get("direction", "forward") in DIRECTIONS,
              f"unknown direction {r.get('direction')!r}")

    a = cfg["augment"]
    _need(all(f > 0 for f in a["brightness_factors"]),
          "augment.brightness_factors must be > 0")
    if a["mask_frac"]:
        _need(0 < a["mask_frac"] < 1, "augment.mask_frac must be in (0, 1)")
        _need(a["stride_frac"] > 0, "augment.stride_frac must be > 0")

    t = cfg["training"]
    _need(t["beta"] > 0, "training.beta must be > 0")
    for section in ("classifier", "gan", "branches", "fused"):
        s = t[section]
        _need(isinstance(s["epochs"], int) and s["epochs"] >= 1,
              f"training.{section}.epochs must be an int >= 1")
        _need(s["batch_size"] >= 2, f"training.{section}.batch_size must be >= 2")
        _need(s["lr"] > 0, f"training.{section}.lr must be > 0")
    _need(t["branches"]["init"] in ("classifier", "scratch"),
          "training.branches.init must be classifier or scratch")
    _need(t["fused"]["init"] in ("pretrained", "scratch"),
          "training.fused.init must be pretrained or scratch")

    d = cfg["disruption"]
    _need(d["count"] >= 1, "disruption.count must be >= 1")
    _need(len(d["size_range"]) == 2 and 0 < d["size_range"][0] <= d["size_range"][1],
          "disruption.size_range must be (lo, hi) with 0 < lo <= hi")
    _need(d["frames"] >= 1, "disruption.frames must be >= 1")
