"""Seeding and hashing helpers used for reproducible runs."""

from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np

_SEED_MASK = (1 << 63) - 1


def derive_seed(base_seed: int, *parts: object) -> int:
    """Derive a stable 63-bit sub-seed from a base seed and a cell identity.

    Independent of PYTHONHASHSEED: uses sha256 over the textual identity, so
    reruns on any platform derive the same seed.
    """
    text = str(int(base_seed)) + "".join("/" + str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _SEED_MASK


def rng_for(base_seed: int, *parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, *parts))


def canonical_json(obj: Any) -> str:
    """Deterministic JSON rendering: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def config_hash(obj: Any) -> str:
    """Hash of a JSON-serializable config object."""
    return sha256_hex(canonical_json(obj))
