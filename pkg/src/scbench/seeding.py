"""Named, counter-based random streams.

Every stochastic step draws from its own Philox stream keyed by
``(seed, name, ...)`` so that, e.g., the validation split and the GMRF draw
never share random numbers.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *names: object) -> int:
    """Hash ``seed`` and a path of names into a 64-bit integer."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for name in names:
        h.update(b"\x1f")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *names: object) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *names)))
