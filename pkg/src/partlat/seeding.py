"""Deterministic named random streams.

All randomness in the package flows from one 64-bit root seed through
named sub-streams, so e.g. adding a part to a sampling run does not
perturb the noise drawn for the existing parts. Stream names are hashed
with BLAKE2 (stable across platforms and processes) and folded into a
numpy SeedSequence.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_key(names: tuple) -> int:
    text = "/".join(str(n) for n in names)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(root_seed: int, *names) -> np.random.Generator:
    """Generator for the sub-stream identified by ``names`` under ``root_seed``."""
    entropy = [int(root_seed) & _MASK64]
    if names:
        entropy.append(_name_key(names))
    return np.random.default_rng(np.random.SeedSequence(entropy))
