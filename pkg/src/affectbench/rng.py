"""Deterministic random number generation.

All randomness in the package flows through :class:`Rng`, a splitmix64
stream.  The generator is fixed by definition rather than by library
version, so a given seed produces the identical sequence on every
platform and every numpy release.

Sub-streams for the three random roles (parameter init, dropout masks,
epoch shuffling) are derived by XOR-ing the user seed with a fixed role
constant, so the roles never share or disturb each other's streams.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Role constants for sub-stream derivation (seed XOR role).
ROLE_INIT = 0x243F6A8885A308D3
ROLE_DROPOUT = 0x13198A2E03707344
ROLE_SHUFFLE = 0xA4093822299F31D0

# 1/2**53, for mapping the top 53 bits of a u64 onto [0, 1).
_INV_2_53 = 2.0 ** -53


class Rng:
    """splitmix64 generator with a scalar and a vectorized path.

    The vectorized block methods produce exactly the same stream as
    repeated scalar calls; tests pin this equivalence.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    @classmethod
    def derived(cls, seed: int, role: int) -> "Rng":
        """Sub-stream for a named role: state seeded with ``seed ^ role``."""
        return cls((seed ^ role) & _MASK64)

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_u64_block(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as a uint64 array (same stream as scalar calls)."""
        if n < 0:
            raise ValueError("block size must be nonnegative")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + steps * np.uint64(_GOLDEN)
        self._state = (self._state + n * _GOLDEN) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def next_float(self) -> float:
        """Uniform on [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def next_floats(self, n: int) -> np.ndarray:
        u = self.next_u64_block(n)
        return (u >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def uniform(self, lo: float, hi: float, n: int) -> np.ndarray:
        return lo + self.next_floats(n) * (hi - lo)

    def normals(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller; consumes 2*ceil(n/2) u64s."""
        pairs = (n + 1) // 2
        u = self.next_floats(2 * pairs)
        # 1-u maps [0,1) onto (0,1] so the log argument is never zero.
        r = np.sqrt(-2.0 * np.log(1.0 - u[:pairs]))
        theta = 2.0 * math.pi * u[pairs:]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 64) // n) * n
        while True:
            u = self.next_u64()
            if u < threshold:
                return u % n

    def below_many(self, n: int, count: int) -> np.ndarray:
        """``count`` unbiased integers in [0, n)."""
        return np.array([self.below(n) for _ in range(count)],
                        dtype=np.int64)

    def shuffle(self, items) -> None:
        """In-place Fisher-Yates shuffle of a list or 1-d array."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
