"""Deterministic random streams.

All randomness in the package flows through counter-based Philox generators
keyed by (seed, *stream tags), so any draw is reproducible independently of
execution order, worker count, or how much randomness was consumed elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np


def philox(seed: int, *tags: int | str) -> np.random.Generator:
    """Generator keyed purely by (seed, tags); no hidden global state."""
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=True))
    for tag in tags:
        if isinstance(tag, str):
            h.update(b"s" + tag.encode())
        else:
            h.update(b"i" + int(tag).to_bytes(8, "little", signed=True))
    key = np.frombuffer(h.digest(), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def truncated_normal(rng: np.random.Generator, shape, std: float, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bound = 2.0 * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out.astype(dtype)
