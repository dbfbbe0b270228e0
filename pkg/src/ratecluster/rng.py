"""Portable deterministic random numbers.

Fixtures generated here must be reproducible bit-for-bit from any language,
so the generator is pinned down exactly instead of delegating to whatever a
platform's standard library ships:

* ``splitmix64`` -- the classic 64-bit avalanche stream.  Output ``i`` of the
  stream with key ``k`` is ``mix64((k + (i+1) * GOLDEN) mod 2^64)`` where
  ``mix64`` is the xor-shift-multiply finalizer below.  Because each output
  depends only on ``(k, i)`` the stream doubles as a counter-based generator
  and vectorizes cleanly (used for bulk draws such as weight init).

* ``Xoshiro256StarStar`` -- a sequential stream whose 256-bit state is seeded
  from four successive splitmix64 outputs, per the reference construction.
  Used wherever draws are inherently ordered (shuffles, rejection sampling).

* Derived quantities are fixed too: doubles are ``(x >> 11) * 2^-53`` in
  [0, 1); normals come from Box-Muller on consecutive uniform pairs; bounded
  integers use rejection sampling below the largest multiple of the bound;
  permutations are Fisher-Yates from the top index down.

Keys for independent streams are derived with :func:`derive_key`, which folds
context words into the seed one at a time via ``mix64``.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer: xor-shift/multiply avalanche of one 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, *words: int) -> int:
    """Fold integer context words into ``seed``, yielding a stream key.

    ``derive_key(s) == s mod 2^64``; each extra word w maps
    ``k -> mix64((k ^ w) + GOLDEN)``.
    """
    k = seed & MASK64
    for w in words:
        k = mix64((k ^ (w & MASK64)) + GOLDEN)
    return k


def splitmix64_at(key: int, index: int) -> int:
    """Output ``index`` (0-based) of the splitmix64 stream keyed by ``key``."""
    return mix64(key + (index + 1) * GOLDEN)


def bulk_uniform(key, count):
    """``count`` uniforms in [0, 1) from the counter-based splitmix64 stream.

    Vectorized; entry i equals ``splitmix64_at(key, i) >> 11`` times 2^-53.
    """
    import numpy as np

    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = (np.uint64(key & MASK64) + idx * np.uint64(GOLDEN))
    z ^= z >> np.uint64(30)
    z *= np.uint64(_M1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_M2)
    z ^= z >> np.uint64(31)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** sequential generator, splitmix64-seeded."""

    def __init__(self, key: int):
        self.s = [splitmix64_at(key, i) for i in range(4)]
        self._spare_normal = None

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        """Standard normal via Box-Muller; pairs are cached."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log1p(-u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection below 2^64 - 2^64 mod n."""
        if n <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < threshold:
                return x % n

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n), swapping from index n-1 down."""
        arr = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            arr[i], arr[j] = arr[j], arr[i]
        return arr

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n): the first k of a partial shuffle."""
        if k > n:
            raise ValueError("cannot sample more indices than available")
        arr = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            arr[i], arr[j] = arr[j], arr[i]
        return arr[:k]

    def normals(self, count: int) -> list[float]:
        return [self.normal() for _ in range(count)]
