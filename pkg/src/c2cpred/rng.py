"""Deterministic seed derivation.

Every random decision in the pipeline is derived from one top-level 64-bit
seed, fanned out to named substreams so that components stay reproducible
independently of execution order or thread scheduling.

Derivation scheme (stable across platforms, documented for reproducibility):

* ``splitmix64(x)`` is the standard SplitMix64 finalizer.
* A substream label is hashed with FNV-1a (64-bit).
* ``substream(seed, label) = splitmix64(seed XOR fnv1a64(label))``
* Indexed children use ``substream_n(seed, label, i) =
  splitmix64(substream(seed, label) + i + 1)``.

The same mixer backs the spatial-fold cell hash in :mod:`c2cpred.evaluation`.
"""

from __future__ import annotations

import numpy as np

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def splitmix64(x) -> np.uint64:
    """SplitMix64 finalizer. Accepts ints or uint64 arrays (vectorized)."""
    with np.errstate(over="ignore"):
        z = np.uint64(x) + _SPLITMIX_GAMMA if np.isscalar(x) else x.astype(np.uint64) + _SPLITMIX_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def fnv1a64(label: str) -> np.uint64:
    """FNV-1a hash of a UTF-8 label."""
    h = _FNV_OFFSET
    with np.errstate(over="ignore"):
        for b in label.encode("utf-8"):
            h = (h ^ np.uint64(b)) * _FNV_PRIME
    return h


def substream(seed: int, label: str) -> int:
    """Derive the named substream seed from a parent seed."""
    return int(splitmix64(np.uint64(seed) ^ fnv1a64(label)))


def substream_n(seed: int, label: str, index: int) -> int:
    """Derive the index-th child of a named substream."""
    with np.errstate(over="ignore"):
        base = np.uint64(substream(seed, label)) + np.uint64(index + 1)
    return int(splitmix64(base))


def generator(seed: int, label: str, index: int | None = None) -> np.random.Generator:
    """numpy Generator seeded from a named substream."""
    s = substream(seed, label) if index is None else substream_n(seed, label, index)
    return np.random.Generator(np.random.PCG64(s))
