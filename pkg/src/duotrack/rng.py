"""Portable deterministic random numbers (xoshiro256** + splitmix64).

Dataset generation must be bitwise reproducible across platforms, so this
module avoids numpy's Generator machinery entirely.  A scalar generator
covers low-volume draws (trajectory sampling); the bulk functions evaluate
one independent xoshiro256** stream per output lane, vectorized over
uint64 arrays, so whole noise maps are produced by a handful of array ops.

Scalar arithmetic uses Python ints masked to 64 bits (numpy warns on
scalar overflow); array arithmetic relies on numpy's silent modular
wraparound for unsigned dtypes.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7D15

# Purpose tags so each consumer of a (seed, frame) pair gets its own stream.
STREAM_TRAJECTORY = 1
STREAM_DEPTH_NOISE = 2
STREAM_OUTLIER_SELECT = 3
STREAM_OUTLIER_VALUE = 4
STREAM_SEG_FLIP = 5

_INV_2_53 = 2.0 ** -53


def _splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Fold integer parts (seed, frame index, stream tag) into a 64-bit key."""
    key = 0x8CB92BA72F3D8DD7
    for p in parts:
        key, out = _splitmix64((key ^ ((int(p) & _MASK64) * _GOLDEN)) & _MASK64)
        key = out
    return key


class Xoshiro256StarStar:
    """Sequential xoshiro256** generator, state expanded from a 64-bit seed."""

    def __init__(self, seed: int):
        s = int(seed) & _MASK64
        state = []
        for _ in range(4):
            s, out = _splitmix64(s)
            state.append(out)
        self._s = state

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & _MASK64

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (self._rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def normal(self) -> float:
        """Standard normal via Box-Muller (two uniforms per draw)."""
        u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53  # (0, 1]
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def unit_vector(self) -> np.ndarray:
        """Uniform direction on the unit sphere."""
        z = 2.0 * self.uniform() - 1.0
        phi = 2.0 * math.pi * self.uniform()
        r = math.sqrt(max(0.0, 1.0 - z * z))
        return np.array([r * math.cos(phi), r * math.sin(phi), z])


def _lane_states(key: int, n: int) -> list[np.ndarray]:
    """Per-lane xoshiro state words: 4 splitmix64 steps on per-lane seeds."""
    lanes = np.arange(1, n + 1, dtype=np.uint64)
    x = (np.uint64(key & _MASK64) + lanes * np.uint64(_GOLDEN)).astype(np.uint64)
    words = []
    for _ in range(4):
        x = x + np.uint64(_GOLDEN)
        z = x.copy()
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        words.append(z ^ (z >> np.uint64(31)))
    return words


def _rotl_vec(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


def _step(state: list[np.ndarray]) -> np.ndarray:
    """Advance every lane one xoshiro256** step; returns the outputs."""
    s0, s1, s2, s3 = state
    result = _rotl_vec(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 = s2 ^ s0
    s3 = s3 ^ s1
    s1 = s1 ^ s2
    s0 = s0 ^ s3
    s2 = s2 ^ t
    s3 = _rotl_vec(s3, 45)
    state[:] = [s0, s1, s2, s3]
    return result


def bulk_uniform(key: int, n: int) -> np.ndarray:
    """n floats in [0, 1), one independent lane per output."""
    if n == 0:
        return np.empty(0)
    state = _lane_states(key, n)
    out = _step(state)
    return (out >> np.uint64(11)).astype(np.float64) * _INV_2_53


def bulk_normal(key: int, n: int) -> np.ndarray:
    """n standard normals via per-lane Box-Muller."""
    if n == 0:
        return np.empty(0)
    state = _lane_states(key, n)
    a = _step(state)
    b = _step(state)
    u1 = ((a >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53  # (0, 1]
    u2 = (b >> np.uint64(11)).astype(np.float64) * _INV_2_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
