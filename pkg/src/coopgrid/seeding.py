"""Deterministic seed derivation.

Every random stream in the project is a PCG64 generator seeded through
``derive_seed``, so any run is a pure function of its root seed plus a
path of string/int tags.  blake2b keeps derivation stable across
platforms and Python versions (unlike ``hash``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *tags: object) -> int:
    """Derive a 63-bit child seed from a root seed and a tag path."""
    key = str(int(root)) + "/" + "/".join(str(t) for t in tags)
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_rng(root: int, *tags: object) -> np.random.Generator:
    """PCG64 generator for the derived child seed."""
    return np.random.default_rng(derive_seed(root, *tags))
