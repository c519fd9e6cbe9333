"""SplitMix64: a counter-based 64-bit generator.

Output ``k`` of a stream is ``mix(seed + k * GOLDEN)``, so a stream is fully
described by one ``uint64`` word and replicas never need to coordinate:
replica ``r`` of an experiment seeded with ``s`` uses ``replica_seed(s, r)``.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1

_G = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def replica_seed(seed: int, replica: int) -> int:
    """Seed of replica ``replica`` derived from the experiment ``seed``."""
    return mix64((seed & _MASK) ^ mix64((replica + 1) * GOLDEN))


def new_state(seed: int) -> np.ndarray:
    return np.array([seed & _MASK], dtype=np.uint64)


@njit(cache=True, nogil=True)
def next_u64(state):
    z = state[0] + _G
    state[0] = z
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def next_uniform(state):
    """Uniform double on [0, 1) with 53 random bits."""
    return float(next_u64(state) >> _S11) * _INV53


@njit(cache=True, nogil=True)
def next_exponential(state):
    return -math.log1p(-next_uniform(state))
