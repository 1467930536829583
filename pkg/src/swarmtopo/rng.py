"""Seed derivation.

Every random decision in the simulator draws from its own sub-stream, keyed by
``(root_seed, *parts)``.  Keys are hashed rather than chained so that results do
not depend on evaluation order, which keeps concurrent runs reproducible.
"""

import hashlib
import random

MASK64 = (1 << 64) - 1


def derive_seed(root: int, *parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root) & MASK64).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "big")


def substream(root: int, *parts) -> random.Random:
    """Independent ``random.Random`` for the given key."""
    return random.Random(derive_seed(root, *parts))
