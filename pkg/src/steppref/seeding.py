"""Stable seed derivation.

Every random draw in the package flows from a master seed through
derive_seed, which hashes a path of labels. The same labels give the same
seed on any platform and any process, which is what makes whole pipeline
runs replayable and resumable.
"""
from __future__ import annotations

import hashlib

import numpy as np

_SEP = b"\x1f"


def derive_seed(*parts: int | str) -> int:
    """Map a label path to a stable 64-bit seed.

    Accepts ints and strings only; anything else is a programming error
    and raises TypeError rather than hashing repr noise.
    """
    if not parts:
        raise TypeError("derive_seed needs at least one label")
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"unsupported seed label type: {type(part).__name__}")
        token = f"i:{part}" if isinstance(part, int) else f"s:{part}"
        h.update(token.encode("utf-8"))
        h.update(_SEP)
    return int.from_bytes(h.digest(), "big")


def rng_from(*parts: int | str) -> np.random.Generator:
    """Fresh PCG64 generator seeded from a label path."""
    return np.random.default_rng(derive_seed(*parts))
