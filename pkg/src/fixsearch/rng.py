"""Counter-based random numbers.

Every draw is a pure function of ``(seed, stream, index)`` so that a value
never depends on how many draws happened before it.  Mixing uses the
SplitMix64 finalizer (Steele, Lea & Flood 2014):

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

with golden-ratio increment 0x9E3779B97F4A7C15 between chained inputs.
"""
from __future__ import annotations

import hashlib

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray | int) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def key(seed: int, stream: int, index) -> np.ndarray:
    """64-bit key for draw ``index`` of ``stream`` under ``seed``."""
    s = np.uint64(int(seed) & _MASK)
    t = np.uint64(int(stream) & _MASK)
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = mix64(s + GOLDEN)
        h = mix64(h ^ (t + GOLDEN))
        return mix64(h ^ (idx + GOLDEN))


def uniform(seed: int, stream: int, index) -> np.ndarray:
    """Uniform doubles in [0, 1) built from the top 53 bits of the key."""
    bits = key(seed, stream, index) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / (1 << 53))


def normal(seed: int, stream: int, index) -> np.ndarray:
    """Standard normals by Box-Muller on two keyed uniform streams."""
    u1 = uniform(seed, 2 * stream, index)
    u2 = uniform(seed, 2 * stream + 1, index)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    return r * np.cos(2.0 * np.pi * u2)


def derive_seed(seed: int, label: str) -> int:
    """Child seed for a named consumer (``"gmm_a"``, ``"phantom"``...)."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def hash_rows(rows: np.ndarray) -> np.ndarray:
    """Value-keyed 64-bit hash of each row of a float matrix.

    Identical rows hash identically wherever they sit in the matrix.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    # -0.0 and 0.0 must collide
    rows = rows + 0.0
    words = rows.view(np.uint64).reshape(rows.shape[0], -1)
    h = np.full(rows.shape[0], 0x243F6A8885A308D3, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for col in range(words.shape[1]):
            h = mix64(h ^ words[:, col]) + GOLDEN
    return mix64(h)
