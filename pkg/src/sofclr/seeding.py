"""Named random streams derived from a single integer seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "u_init", "batches", "augment", "fair", "synthetic", "annotate", "probe")


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; the same (seed, name) always gives
    the same sequence, and streams never share state."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key])))


def get_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
