"""Named random sub-streams derived from one master seed.

Every component draws from its own generator keyed by the CRC-32 of its
name, so adding a consumer never shifts another component's stream.
"""
from __future__ import annotations

import zlib

import numpy as np


def seed_sequence(master: int, *names) -> np.random.SeedSequence:
    key = tuple(zlib.crc32(str(n).encode("utf-8")) for n in names)
    return np.random.SeedSequence(entropy=int(master), spawn_key=key)


def generator(master: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(master, *names)))


def derive_int(master: int, *names) -> int:
    """A derived non-negative 31-bit integer seed."""
    return int(seed_sequence(master, *names).generate_state(1)[0] >> 1)
