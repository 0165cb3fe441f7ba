"""Closed-loop client workload generation (uniform and zipfian key choice).

Zipfian sampling inverts a precomputed integer CDF (weights are quantized to
a 2^40 grid at table-build time), so the per-draw path is integer-only and
reproduces identically everywhere.  Key rank 0 is the hottest key.

Write values are globally unique within a run: a fresh counter scaled by a
stride that keeps fetch-add results from colliding with later write values.
Unique values keep recorded histories cheap to check.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Optional

from .rng import Rng

VALUE_BASE = 1 << 40
VALUE_STRIDE = 1 << 20
FADD_MAX_DELTA = 16


class ZipfTable:
    """Integer-CDF zipfian sampler over ranks 0..n-1 with exponent theta."""

    def __init__(self, n: int, theta: float):
        if theta <= 0:
            raise ValueError("zipfian exponent must be positive")
        scale = 1 << 40
        cum = []
        total = 0
        for i in range(1, n + 1):
            w = max(1, int(scale / (i ** theta)))
            total += w
            cum.append(total)
        self._cum = cum
        self.total = total
        self.n = n
        self.theta = theta

    def sample(self, rng: Rng) -> int:
        r = rng.randrange(self.total)
        return bisect.bisect_right(self._cum, r)

    def head_mass(self) -> float:
        """Analytic probability of rank 0 (1 / zeta_n(theta))."""
        zeta = sum(1.0 / (i ** self.theta) for i in range(1, self.n + 1))
        return 1.0 / zeta


@dataclass
class OpDraw:
    kind: str                 # read / write / cas / fadd
    key: int
    value: Optional[int] = None       # write payload
    cas_expected: Optional[int] = None
    cas_new: Optional[int] = None
    fadd_delta: Optional[int] = None


class WorkloadGen:
    def __init__(self, *, keys: int, write_ratio: float, rmw_ratio: float,
                 distribution: str, zipf_theta: float, seed_rng: Rng):
        if write_ratio + rmw_ratio > 1.0 + 1e-12:
            raise ValueError("write_ratio + rmw_ratio must not exceed 1")
        self.keys = keys
        self.write_ratio = write_ratio
        self.rmw_ratio = rmw_ratio
        self.distribution = distribution
        self.zipf: Optional[ZipfTable] = None
        if distribution == "zipfian":
            self.zipf = ZipfTable(keys, zipf_theta)
        elif distribution != "uniform":
            raise ValueError(f"unknown distribution {distribution!r}")
        self._rng = seed_rng
        self._value_counter = 0

    def client_rng(self, client_id: int) -> Rng:
        return self._rng.spawn(f"client:{client_id}")

    def _fresh_value(self) -> int:
        self._value_counter += 1
        return VALUE_BASE + self._value_counter * VALUE_STRIDE

    def draw_key(self, rng: Rng) -> int:
        if self.zipf is not None:
            return self.zipf.sample(rng)
        return rng.randrange(self.keys)

    def next_op(self, rng: Rng, last_seen: dict[int, int]) -> OpDraw:
        """Draw the next operation for one closed-loop client session."""
        key = self.draw_key(rng)
        u = rng.random()
        if u < self.write_ratio:
            return OpDraw("write", key, value=self._fresh_value())
        if u < self.write_ratio + self.rmw_ratio:
            if rng.randrange(2) == 0:
                expected = last_seen.get(key, 0)
                return OpDraw("cas", key, cas_expected=expected,
                              cas_new=self._fresh_value())
            return OpDraw("fadd", key, fadd_delta=rng.randint(1, FADD_MAX_DELTA))
        return OpDraw("read", key)
