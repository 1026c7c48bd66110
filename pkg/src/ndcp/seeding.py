"""Hash-based seed derivation.

Every random stream in the package is keyed by a tuple of values (master
seed, dataset name, repetition, scenario label, ...) rather than consumed
sequentially, so results never depend on execution order or list position.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(*keys: object) -> int:
    """Map an arbitrary tuple of ints/strings to an unsigned 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    for key in keys:
        if isinstance(key, (bool, np.bool_)):
            raise TypeError("boolean seed keys are ambiguous")
        if isinstance(key, (int, np.integer)):
            token = b"i" + str(int(key)).encode()
        elif isinstance(key, str):
            token = b"s" + key.encode("utf-8")
        else:
            raise TypeError(f"unsupported seed key type {type(key).__name__}")
        h.update(len(token).to_bytes(4, "little"))
        h.update(token)
    return int.from_bytes(h.digest(), "little") & _MASK64


def derive_uniform(*keys: object) -> float:
    """A uniform draw on [0, 1) determined entirely by ``keys``."""
    return (derive_seed(*keys) >> 11) * (1.0 / (1 << 53))


def rng(*keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))
