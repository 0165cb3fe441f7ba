"""Fixed-algorithm 64-bit PRNG with labelled substreams.

Simulation randomness must reproduce bit-exactly across platforms and Python
versions, so we carry our own generator instead of ``random``: xoshiro256**
for the stream, seeded through splitmix64.  Substreams are derived from a
root seed plus a text label (e.g. ``link:0:3``), so independent components
never share a stream.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state, returning (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _label_hash(label: str) -> int:
    # FNV-1a over the UTF-8 bytes; cheap and stable.
    h = 0xCBF29CE484222325
    for b in label.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator; all draws are integer-exact."""

    __slots__ = ("_s", "_seed")

    def __init__(self, seed: int, label: str = ""):
        seed = (seed ^ _label_hash(label)) & _MASK64 if label else seed & _MASK64
        self._seed = seed
        st = seed
        s = []
        for _ in range(4):
            st, out = splitmix64(st)
            s.append(out)
        # xoshiro must not start from the all-zero state.
        if not any(s):
            s[0] = 0x9E3779B97F4A7C15
        self._s = s

    def spawn(self, label: str) -> "Rng":
        """Derive an independent substream keyed by ``label``."""
        return Rng(self._seed, label)

    def u64(self) -> int:
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

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("randrange bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.u64()
            if v < limit:
                return v % n

    def randint(self, a: int, b: int) -> int:
        """Uniform integer in [a, b] inclusive."""
        return a + self.randrange(b - a + 1)

    def random(self) -> float:
        """Float in [0, 1) with 53 random bits (exact on every platform)."""
        return (self.u64() >> 11) * (2.0 ** -53)

    def chance(self, p: float) -> bool:
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        return self.random() < p

    def choice(self, seq):
        if not seq:
            raise IndexError("choice from empty sequence")
        return seq[self.randrange(len(seq))]
