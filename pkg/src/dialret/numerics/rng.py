"""Seeded PCG32 generator with splitmix64 seeding.

The stream depends only on the seed, never on numpy's global state or the
platform's RNG. Bulk draws use a block jump-ahead of the underlying LCG so a
vectorized draw of ``n`` words is bit-identical to ``n`` calls of
:meth:`Rng.next_u32`.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1
_PCG_MULT = 6364136223846793005
_BLOCK = 4096


def splitmix64(x: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def _jump_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    # mult[i] = M^i, geo[i] = 1 + M + ... + M^(i-1)  (mod 2^64), i = 0..n
    mult = np.empty(n + 1, dtype=np.uint64)
    geo = np.empty(n + 1, dtype=np.uint64)
    m, g = 1, 0
    for i in range(n + 1):
        mult[i] = m
        geo[i] = g
        g = (g + m) & _MASK64
        m = (m * _PCG_MULT) & _MASK64
    return mult, geo


_MULT_TABLE, _GEO_TABLE = _jump_tables(_BLOCK)


def _output(old: np.ndarray) -> np.ndarray:
    """PCG XSH-RR output permutation over an array of 64-bit states."""
    xorshifted = (((old >> np.uint64(18)) ^ old) >> np.uint64(27)) & np.uint64(0xFFFFFFFF)
    rot = old >> np.uint64(59)
    left = (np.uint64(32) - rot) & np.uint64(31)
    out = (xorshifted >> rot) | (xorshifted << left)
    return out & np.uint64(0xFFFFFFFF)


class Rng:
    """Deterministic random stream (PCG32 XSH-RR, splitmix64-seeded)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        sm, initstate = splitmix64(self.seed)
        _, initseq = splitmix64(sm)
        self._seed_pcg(initstate, initseq)

    @classmethod
    def from_pcg_seed(cls, initstate: int, initseq: int) -> "Rng":
        """Raw PCG32 seeding (``pcg32_srandom_r``), bypassing splitmix64."""
        rng = cls.__new__(cls)
        rng.seed = initstate & _MASK64
        rng._seed_pcg(initstate, initseq)
        return rng

    def _seed_pcg(self, initstate: int, initseq: int) -> None:
        self._inc = ((initseq << 1) | 1) & _MASK64
        self._state = 0
        self._step()
        self._state = (self._state + initstate) & _MASK64
        self._step()

    def _step(self) -> None:
        self._state = (self._state * _PCG_MULT + self._inc) & _MASK64

    def spawn(self, key: str) -> "Rng":
        """Child stream keyed by name; independent of how much of this stream was used."""
        mixed = (self.seed ^ ((zlib.crc32(key.encode()) + 1) * 0x9E3779B97F4A7C15)) & _MASK64
        _, child_seed = splitmix64(mixed)
        return Rng(child_seed)

    def next_u32(self) -> int:
        old = self._state
        self._step()
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def u32_array(self, n: int) -> np.ndarray:
        chunks = []
        inc = np.uint64(self._inc)
        while n > 0:
            k = min(n, _BLOCK)
            s = np.uint64(self._state)
            old = _MULT_TABLE[:k] * s + _GEO_TABLE[:k] * inc
            chunks.append(_output(old))
            self._state = (int(_MULT_TABLE[k]) * self._state + int(_GEO_TABLE[k]) * self._inc) & _MASK64
            n -= k
        if not chunks:
            return np.empty(0, dtype=np.uint64)
        return np.concatenate(chunks)

    def uniform(self, size=None) -> np.ndarray | float:
        """Doubles in [0, 1) with 53 random bits, two words per draw."""
        n = int(np.prod(size)) if size is not None else 1
        words = self.u32_array(2 * n).reshape(n, 2)
        hi = (words[:, 0] >> np.uint64(5)).astype(np.float64)
        lo = (words[:, 1] >> np.uint64(6)).astype(np.float64)
        u = (hi * 67108864.0 + lo) / 9007199254740992.0
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray | float:
        n = int(np.prod(size)) if size is not None else 1
        m = (n + 1) // 2
        u = self.uniform(2 * m).reshape(m, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.empty(2 * m)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        z = z[:n] * scale
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, high: int, size=None) -> np.ndarray | int:
        """Uniform ints in [0, high)."""
        if high < 1:
            raise ValueError(f"high must be >= 1, got {high}")
        u = self.uniform(size if size is not None else 1)
        out = np.minimum(np.floor(np.asarray(u) * high), high - 1).astype(np.int64)
        if size is None:
            return int(out[0])
        return out

    def permutation(self, n: int) -> np.ndarray:
        keys = self.uniform(n) if n > 0 else np.empty(0)
        return np.argsort(keys, kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)`` in random order."""
        if k > n:
            raise ValueError(f"cannot choose {k} of {n} without replacement")
        return self.permutation(n)[:k]
