"""Deterministic seed derivation.

Every random draw in the package comes from a generator keyed by a master
seed plus a purpose tag (and usually an iteration number). Replays and
resumed sessions therefore reproduce the exact same streams without having
to persist generator state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from a master seed and any number of tags."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(*parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
