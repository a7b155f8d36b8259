"""Deterministic seed derivation.

Every random stream in the package is keyed by a tuple of labels so that
independent consumers (patch index, prompt, epoch) never share draws.
"""
import hashlib

import numpy as np


def derive_seed(*parts):
    """Hash an arbitrary tuple of str/int labels to a 63-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(*parts):
    return np.random.default_rng(derive_seed(*parts))
