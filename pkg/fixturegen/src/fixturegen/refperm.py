"""Straight-line reference implementation of the weight-permutation PRNG.

Deliberately naive: plain-integer arithmetic, no vectorization, no
shared code with anything else. This is the oracle the production
permuter is checked against, so keep it boring and obviously correct
per docs/mtd.md in the main package.
"""

MASK64 = (1 << 64) - 1


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (output, new_state)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64, state


def xoshiro_state_from_seed(seed: int) -> list[int]:
    state = seed & MASK64
    words = []
    for _ in range(4):
        out, state = splitmix64_next(state)
        words.append(out)
    return words


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def xoshiro_next(s: list[int]) -> int:
    """One xoshiro256** step; mutates the 4-word state list in place."""
    result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
    t = (s[1] << 17) & MASK64
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def next_below(s: list[int], bound: int) -> int:
    """Unbiased draw in [0, bound) via rejection sampling."""
    threshold = ((1 << 64) - ((1 << 64) % bound)) & MASK64
    while True:
        u = xoshiro_next(s)
        if threshold == 0 or u < threshold:
            return u % bound


def fisher_yates(n: int, seed: int) -> list[int]:
    """The permutation of range(n) defined by the doc'd contract."""
    s = xoshiro_state_from_seed(seed)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = next_below(s, i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def permute_elements(data: bytes, element_size: int, seed: int) -> bytes:
    """Obfuscate: out[i] = in[perm[i]], lane-wise."""
    n = len(data) // element_size
    assert len(data) == n * element_size
    perm = fisher_yates(n, seed)
    out = bytearray(len(data))
    for i in range(n):
        src = perm[i] * element_size
        out[i * element_size : (i + 1) * element_size] = data[src : src + element_size]
    return bytes(out)


def unpermute_elements(data: bytes, element_size: int, seed: int) -> bytes:
    """Deobfuscate: out[perm[i]] = in[i], lane-wise."""
    n = len(data) // element_size
    assert len(data) == n * element_size
    perm = fisher_yates(n, seed)
    out = bytearray(len(data))
    for i in range(n):
        dst = perm[i] * element_size
        out[dst : dst + element_size] = data[i * element_size : (i + 1) * element_size]
    return bytes(out)
