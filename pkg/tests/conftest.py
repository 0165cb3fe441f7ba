"""Shared helpers: a hand-driven cluster of protocol nodes for unit tests."""

from __future__ import annotations

import pytest

from hermes_sim.kvstore import Store
from hermes_sim.node import Effects, HermesNode, NodeConfig, encode_value
from hermes_sim.wire import Message, MsgKind

MLT = 100
VALUE_SIZE = 8


class Cluster:
    """N nodes with an explicit in-flight message pool; tests deliver by hand."""

    def __init__(self, n: int, keys: int = 4, **cfg_kwargs):
        cfg_kwargs.setdefault("mlt_us", MLT)
        cfg_kwargs.setdefault("value_size", VALUE_SIZE)
        self.cfg = NodeConfig(**cfg_kwargs)
        live = frozenset(range(n))
        self.nodes = [
            HermesNode(i, self.cfg, Store(keys, encode_value(0, VALUE_SIZE)), 1, live)
            for i in range(n)
        ]
        for node in self.nodes:
            node.lease_until = 1 << 60
        self.pool: list[tuple[int, int, Message]] = []
        self.completions: list[tuple[int, object]] = []

    def absorb(self, src: int, eff: Effects) -> None:
        for dst, msg in eff.sends:
            self.pool.append((src, dst, msg))
        self.completions.extend(eff.completions)

    def deliver(self, src: int, dst: int, kind: MsgKind, now: int = 0) -> None:
        for i, (s, d, m) in enumerate(self.pool):
            if s == src and d == dst and m.kind is kind:
                self.pool.pop(i)
                self.absorb(dst, self.nodes[dst].on_message(m, now))
                return
        raise AssertionError(f"no {kind.name} from {src} to {dst} in flight")

    def deliver_all(self, now: int = 0, rounds: int = 50) -> None:
        for _ in range(rounds):
            if not self.pool:
                return
            src, dst, msg = self.pool.pop(0)
            if not self.nodes[dst].crashed:
                self.absorb(dst, self.nodes[dst].on_message(msg, now))
        raise AssertionError("message pool did not drain")

    def in_flight(self, kind: MsgKind | None = None):
        return [e for e in self.pool if kind is None or e[2].kind is kind]

    def value(self, v: int) -> bytes:
        return encode_value(v, VALUE_SIZE)

    def rec(self, node: int, key: int = 0):
        return self.nodes[node].store.get(key)

    def results(self) -> dict[int, object]:
        return {op: res for op, res in self.completions}


@pytest.fixture
def cluster3():
    return Cluster(3)


@pytest.fixture
def cluster5():
    return Cluster(5)
