"""
Reproducible random streams.

All randomness in tapstab comes from numpy's counter-based Philox generator,
keyed through a SeedSequence whose spawn key is the path of labels that names
the consumer, e.g. ``stream(seed, "world", 17)``.  Two calls with the same
path always produce the same stream, so work can be split across processes in
any order without changing results.

Per-(node, world) rank values are not drawn from a stream at all: they are a
keyed hash, so an oracle never stores an n x ell rank matrix.
"""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np

Label = Union[int, str]

_MASK64 = (1 << 64) - 1


def _label_to_int(label: Label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"stream labels must be non-negative, got {label}")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed: int, *path: Label) -> np.random.Generator:
    """Independent Philox generator for ``seed`` and the label ``path``."""
    seq = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=tuple(_label_to_int(p) for p in path),
    )
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *path: Label) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``path`` (for third-party APIs)."""
    seq = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=tuple(_label_to_int(p) for p in path),
    )
    return int(seq.generate_state(1, dtype=np.uint64)[0]) >> 1


# splitmix64 finaliser constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def pair_ranks(nodes, worlds, rank_seed: int) -> np.ndarray:
    """
    Uniform rank in the open interval (0, 1) for every (node, world) pair.

    ``nodes`` and ``worlds`` broadcast against each other.  The value depends
    only on (node, world, rank_seed).
    """
    v = np.asarray(nodes, dtype=np.uint64)
    i = np.asarray(worlds, dtype=np.uint64)
    key = np.full(np.broadcast(v, i).shape, int(rank_seed) & _MASK64, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(_splitmix64(key + v) + i)
    # top 53 bits, centred in their bucket so 0 and 1 are never produced
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)
