"""Counter-based uniforms keyed by (seed, trajectory index, step).

The generator is SplitMix64 used as a pure function of a counter:

    seed_state = mix64(seed * GOLDEN + 1)
    key(index) = mix64(seed_state XOR (index * STREAM))
    bits(index, step) = mix64(key(index) + (step + 1) * GOLDEN)
    uniform = (bits >> 11) * 2**-53

All arithmetic is modulo 2**64, so the output depends only on the three
integers and is identical on every platform and for every chunking of the
trajectory indices. ``key`` is a bijection of ``index`` for a fixed seed, so
distinct trajectories get distinct SplitMix64 streams.
"""
from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STREAM = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64_int(z: int) -> int:
    """Reference (pure Python) SplitMix64 finaliser."""
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def uniform_int(seed: int, index: int, step: int) -> float:
    """Reference scalar implementation of the documented algorithm."""
    state = mix64_int(seed * GOLDEN + 1)
    key = mix64_int(state ^ ((index * STREAM) & MASK))
    bits = mix64_int(key + (step + 1) * GOLDEN)
    return (bits >> 11) * 2.0**-53


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, indices: np.ndarray) -> np.ndarray:
    state = np.uint64(mix64_int(seed * GOLDEN + 1))
    idx = np.asarray(indices).astype(np.uint64)
    with np.errstate(over="ignore"):
        return _mix64(state ^ (idx * np.uint64(STREAM)))


def step_uniforms(keys: np.ndarray, step: int) -> np.ndarray:
    """Uniforms in [0, 1) for all trajectories at one step (step counts from 0)."""
    offset = np.uint64(((step + 1) * GOLDEN) & MASK)
    with np.errstate(over="ignore"):
        bits = _mix64(keys + offset)
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53
