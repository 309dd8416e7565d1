"""Deterministic random streams.

Two layers:

* structural randomness (which slices form the prior, ellipse parameters,
  tie-free index draws) runs on an explicit splitmix64-seeded xoshiro256**
  stream implemented here, so the artifact's structure is pinned to a fixed,
  documented generator;
* bulk numeric sampling (weight init, minibatch shuffles, projection noise)
  runs on ``numpy.random.Generator`` instances seeded from 64-bit values
  derived with :func:`derive_seed`.

Both algorithms are frozen: changing them changes every generated cohort and
every distilled dataset.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(root: int, *tags: int | str) -> int:
    """Fold ``tags`` into ``root`` to get an independent 64-bit child seed.

    String tags are folded byte by byte so the result does not depend on
    Python's randomized hashing.
    """
    state = root & _MASK64
    for tag in tags:
        if isinstance(tag, str):
            for b in tag.encode("utf-8"):
                state, out = splitmix64(state ^ b)
                state ^= out
        else:
            state, out = splitmix64(state ^ (int(tag) & _MASK64))
            state ^= out
    _, out = splitmix64(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** seeded through splitmix64, per the reference construction."""

    def __init__(self, seed: int):
        s = seed & _MASK64
        self._s = []
        for _ in range(4):
            s, out = splitmix64(s)
            self._s.append(out)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform f64 in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) via 128-bit multiply-shift."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        return (self.next_u64() * n) >> 64

    def choice_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order as drawn (partial Fisher-Yates)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct indices from {n}")
        pool = list(range(n))
        out = []
        for i in range(k):
            j = i + self.randint(n - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out


def np_generator(root: int, *tags: int | str) -> np.random.Generator:
    """numpy Generator (PCG64) seeded from a derived 64-bit seed."""
    return np.random.default_rng(derive_seed(root, *tags))
