"""Reproducible random streams.

A seed is an int or a tuple of ints ``(master, index, ...)``.  Streams are
Philox generators keyed by a :class:`numpy.random.SeedSequence` whose spawn
key carries the stream name and the index path, so walk randomness and
environment randomness never share draws even under one master seed.
"""
from __future__ import annotations

import numpy as np

_STREAM_KEYS = {"walk": 0, "env": 1}


def normalize_seed(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    seed = tuple(int(s) for s in seed)
    if not seed:
        raise ValueError("empty seed")
    return seed


def make_rng(seed, stream: str = "walk") -> np.random.Generator:
    master, *path = normalize_seed(seed)
    ss = np.random.SeedSequence(entropy=master, spawn_key=(_STREAM_KEYS[stream], *path))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed, index: int) -> tuple[int, ...]:
    """Seed of the ``index``-th child of ``seed`` (trajectory or environment draw)."""
    return normalize_seed(seed) + (int(index),)
