"""Counter-based random streams.

Every random number is a pure function of ``(seed, stream, key, counter)``,
so results do not depend on thread count, chunking or evaluation order.
Particle ``i`` of a finite system uses key ``i``; auxiliary samples (limit
law tables) live in a disjoint key space flagged by :data:`AUX`.
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import KeyCollision

BROWNIAN = 1
INIT = 2
GRAPH = 3
POINTS = 4
SEEDS = 5

AUX = 1 << 62
_SAMPLE_BITS = 20


def aux_key(block, sample):
    """Key of auxiliary sample ``sample`` in limit block ``block``."""
    block = np.asarray(block, dtype=np.uint64)
    sample = np.asarray(sample, dtype=np.uint64)
    if np.any(sample >= (1 << _SAMPLE_BITS)):
        raise ValueError("too many samples per block for the aux key layout")
    return np.uint64(AUX) | (block << np.uint64(_SAMPLE_BITS)) | sample


def check_coupled_keys(keys):
    keys = np.asarray(keys, dtype=np.uint64)
    if np.any(keys & np.uint64(AUX)):
        raise KeyCollision("coupled particle key overlaps the auxiliary key space")
    return keys


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def uniforms(seed, stream, keys, counters):
    return _kernels.hash_uniform(check_seed(seed), stream, keys, counters)


def normals(seed, stream, keys, counters):
    return _kernels.keyed_normal(check_seed(seed), stream, keys, counters)


def derive_seeds(master, count):
    """``count`` independent replicate seeds derived from ``master``."""
    h = _kernels._hash_np(check_seed(master), SEEDS, np.zeros(count, np.uint64),
                          np.arange(count, dtype=np.uint64))
    return [int(v >> np.uint64(1)) for v in h]
