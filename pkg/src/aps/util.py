"""Seeding, hashing, and small serialization helpers."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def rng(*keys: int) -> np.random.Generator:
    """Deterministic generator from a tuple of integer keys.

    Separate key tuples give statistically independent streams, so callers can
    draw from per-scene or per-primitive streams without order coupling.
    """
    return np.random.default_rng([int(k) & 0x7FFFFFFF for k in keys])


def derive_seed(base: int, name: str) -> int:
    """Stable 31-bit seed for a named sub-component of a run."""
    digest = hashlib.sha256(f"{base}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_of(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)
