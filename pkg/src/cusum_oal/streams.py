"""Counter-based uniform streams for reproducible parallel Monte Carlo.

Every draw is a pure function of ``(seed, rep, step)``::

    key  = mix64(seed_key(seed) ^ mix64(rep + GAMMA))
    word = mix64(key + (step + 1) * GAMMA)
    u    = ((word >> 12) + 0.5) * 2**-52          # in (0, 1), never 0 or 1

``mix64`` is the SplitMix64 finaliser and ``GAMMA`` its golden-ratio
increment. Replication ``rep`` therefore owns an independent stream that can
be generated in any order, on any worker, in blocks of any size.
"""
from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S12 = np.uint64(12)
_SCALE = 2.0 ** -52


def mix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x ^ (x >> _S30)) * _M1
        x = (x ^ (x >> _S27)) * _M2
        return x ^ (x >> _S31)


def seed_key(seed: int) -> np.uint64:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return mix64(np.array([seed % 2 ** 64], dtype=np.uint64))[0]


def rep_keys(seed: int, reps) -> np.ndarray:
    reps = np.asarray(reps, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(seed_key(seed) ^ mix64(reps + GAMMA))


def uniforms_from_keys(keys: np.ndarray, start: int, count: int) -> np.ndarray:
    """Block of uniforms, shape ``(len(keys), count)``, for steps start..start+count-1."""
    steps = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        words = mix64(keys[:, None] + steps[None, :] * GAMMA)
    return ((words >> _S12).astype(np.float64) + 0.5) * _SCALE


def uniforms(seed: int, reps, start: int, count: int) -> np.ndarray:
    return uniforms_from_keys(rep_keys(seed, reps), start, count)


def words(seed: int, reps, start: int, count: int) -> np.ndarray:
    """Raw 64-bit words behind :func:`uniforms`; used to audit stream overlap."""
    steps = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(rep_keys(seed, reps)[:, None] + steps[None, :] * GAMMA)
