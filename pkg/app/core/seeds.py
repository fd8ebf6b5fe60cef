"""
Seed derivation.
One master seed feeds every component through a keyed hash of
(master, component name), so adding a component never shifts another
component's random stream.
"""

import hashlib

import numpy as np

SEED_BITS = 63


def derive_seed(master: int, *components) -> int:
    """Derive a sub-seed for a named component path, e.g. derive_seed(7, "noise", "low", 3)."""
    key = str(master).encode("utf-8")
    path = "/".join(str(c) for c in components).encode("utf-8")
    digest = hashlib.blake2b(path, key=key[:64], digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << SEED_BITS) - 1)


def rng_for(master: int, *components) -> np.random.Generator:
    """Seeded numpy Generator for a component path."""
    return np.random.default_rng(derive_seed(master, *components))
