"""Deterministic permutation PRNG: splitmix64-seeded xoshiro256**.

The exact bit-level contract lives in docs/mtd.md; an independent
implementation following that document reproduces these permutations.
The numba-compiled path and the pure-Python path produce identical
output (the test suite cross-checks them); numba is optional and only
buys speed on large tensors.
"""

import numpy as np

MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> "tuple[int, int]":
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64, state


def xoshiro_init(seed: int) -> "list[int]":
    state = seed & MASK64
    words = []
    for _ in range(4):
        out, state = _splitmix64(state)
        words.append(out)
    return words


class Xoshiro256:
    """Reference-speed generator; use fisher_yates_indices for bulk work."""

    def __init__(self, seed: int):
        self._s = xoshiro_init(seed)

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_below(self, bound: int) -> int:
        threshold = ((1 << 64) - ((1 << 64) % bound)) & MASK64
        while True:
            u = self.next_u64()
            if threshold == 0 or u < threshold:
                return u % bound


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def _fisher_yates_py(n: int, seed: int) -> np.ndarray:
    perm = np.arange(n, dtype=np.uint32 if n < 2**32 else np.uint64)
    gen = Xoshiro256(seed)
    for i in range(n - 1, 0, -1):
        j = gen.next_below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def _build_numba_kernel():
    try:
        from numba import njit, uint64
    except ImportError:
        return None

    @njit(cache=False)
    def kernel(n, s0, s1, s2, s3, perm):  # pragma: no cover - jitted
        for i in range(n - 1, 0, -1):
            bound = uint64(i + 1)
            # (2^64 - (2^64 mod bound)) mod 2^64; zero means accept all
            threshold = uint64(0) - (uint64(0) - bound) % bound
            while True:
                result = uint64(s1) * uint64(5)
                result = ((result << uint64(7)) | (result >> uint64(57))) * uint64(9)
                t = s1 << uint64(17)
                s2 = s2 ^ s0
                s3 = s3 ^ s1
                s1 = s1 ^ s2
                s0 = s0 ^ s3
                s2 = s2 ^ t
                s3 = (s3 << uint64(45)) | (s3 >> uint64(19))
                if threshold == uint64(0) or result < threshold:
                    j = result % bound
                    break
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp

    return kernel


_NUMBA_KERNEL = None
_NUMBA_TRIED = False


def fisher_yates_indices(n: int, seed: int) -> np.ndarray:
    """The permutation of 0..n-1 defined by the documented contract."""
    global _NUMBA_KERNEL, _NUMBA_TRIED
    if n <= 1:
        return np.arange(n, dtype=np.uint32)
    if not _NUMBA_TRIED:
        _NUMBA_TRIED = True
        _NUMBA_KERNEL = _build_numba_kernel()
    if _NUMBA_KERNEL is not None and n >= 4096 and n < 2**32:
        s0, s1, s2, s3 = (np.uint64(w) for w in xoshiro_init(seed))
        perm = np.arange(n, dtype=np.uint32)
        _NUMBA_KERNEL(np.int64(n), s0, s1, s2, s3, perm)
        return perm
    return _fisher_yates_py(n, seed)
