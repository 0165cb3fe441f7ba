"""Lease- and epoch-based reliable membership, as a deterministic oracle.

The real thing would be a majority-based service (Vertical-Paxos style);
here one oracle process drives the same externally visible behaviour:

- leases are renewed every tick for unsuspected members;
- on suspicion, renewals freeze and the reconfiguration fires exactly when
  the last outstanding lease of the old epoch expires;
- membership updates carry an incremented epoch and are only produced while
  the oracle can reach a strict majority of the configured replica set
  (so a minority partition can never reconfigure);
- returning or new nodes are admitted as shadow replicas that follow all
  writes but serve no clients until their bulk sync finishes.

Membership and lease messages ride the simulated network (and appear in the
trace), but on a loss-free channel: delivery retries are the internal
business of the majority protocol the oracle stands in for.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .simnet import Deliver, Simnet
from .wire import Message, MsgKind, RM_ID, encode_mupdate


@dataclass(frozen=True)
class RmTick:
    pass


@dataclass(frozen=True)
class ReconfigDue:
    epoch: int


@dataclass
class RmConfig:
    lease_us: int = 50_000
    tick_us: int = 10_000
    miss_ticks: int = 3          # heartbeat silence before suspicion
    stagger_us: int = 0          # extra per-node delay on mupdate delivery
    auto_rejoin: bool = True


@dataclass(frozen=True)
class MembershipView:
    epoch: int
    live: frozenset[int]
    shadows: frozenset[int]


@dataclass
class JoinState:
    phase: str = "announced"     # announced -> shadow -> operational
    since_us: int = 0


class RmOracle:
    def __init__(self, cfg: RmConfig, nodes: list[int], net: Simnet):
        self.cfg = cfg
        self.net = net
        self.configured: set[int] = set(nodes)
        self.members: set[int] = set(nodes)
        self.shadows: set[int] = set()
        self.epoch = 1
        self.grants: dict[int, int] = {}
        self.suspected: set[int] = set()
        self.last_heard: dict[int, int] = {n: 0 for n in nodes}
        self.frozen_until: int | None = None
        self.join_requests: set[int] = set()
        self.joins: dict[int, JoinState] = {}
        self.mupdates_issued: list[tuple[int, int, frozenset[int]]] = []  # (time, epoch, live)

    # ---------------------------------------------------------------- helpers

    def view(self) -> MembershipView:
        return MembershipView(self.epoch, frozenset(self.members), frozenset(self.shadows))

    def _reachable(self, node: int) -> bool:
        part = self.net.active_partition
        if part is None:
            return True
        return self.net.partition_group(node) == self.net.partition_group(RM_ID)

    def _majority_reachable(self) -> bool:
        ok = {n for n in self.members | self.shadows
              if n not in self.suspected and self._reachable(n)}
        return len(ok & self.configured) > len(self.configured) // 2

    def _deliver(self, node: int, msg: Message, extra_delay: int = 0) -> None:
        # Reliable channel: fixed delay, no loss/dup; still bound by
        # partitions and crashes at delivery time.
        self.net.sent_by_kind[msg.kind.name] = self.net.sent_by_kind.get(msg.kind.name, 0) + 1
        self.net.after(self.net.link.base_delay_us + extra_delay, Deliver(RM_ID, node, msg))

    # ----------------------------------------------------------------- inputs

    def bootstrap(self) -> dict[int, int]:
        """Initial lease grants (applied directly at t=0 by the harness)."""
        for n in sorted(self.members):
            self.grants[n] = self.cfg.lease_us
        return dict(self.grants)

    def on_heartbeat(self, node: int, now: int) -> None:
        self.last_heard[node] = now
        known = self.members | self.shadows | self.join_requests
        if self.cfg.auto_rejoin and node not in known and node not in self.net.crashed:
            self.request_join(node, now)

    def request_join(self, node: int, now: int) -> None:
        self.join_requests.add(node)
        self.joins[node] = JoinState(phase="announced", since_us=now)

    def suspect(self, node: int, now: int, reporter: int | None = None) -> None:
        """Register a failure suspicion (detector or injector driven)."""
        if node not in self.members | self.shadows or node in self.suspected:
            return
        self.suspected.add(node)
        self._freeze(now)

    def on_sync_done(self, node: int, now: int) -> None:
        if node in self.shadows:
            self.shadows.discard(node)
            self.members.add(node)
            if node in self.joins:
                self.joins[node].phase = "operational"

    # ------------------------------------------------------------------ ticks

    def on_tick(self, now: int) -> None:
        # Heartbeat-based detection; injector-driven suspicion uses suspect().
        silence = self.cfg.miss_ticks * self.cfg.tick_us
        for n in sorted(self.members | self.shadows):
            if n not in self.suspected and now - self.last_heard.get(n, 0) > silence:
                self.suspect(n, now)
        if self.frozen_until is None:
            self._renew_all(now)
            if self.join_requests and self._majority_reachable():
                self._issue_mupdate(now)
        elif now >= self.frozen_until and self._majority_reachable():
            self._issue_mupdate(now)
        self.net.after(self.cfg.tick_us, RmTick())

    def on_reconfig_due(self, due: ReconfigDue, now: int) -> None:
        if due.epoch != self.epoch or self.frozen_until is None:
            return
        if now >= self.frozen_until and self._majority_reachable():
            self._issue_mupdate(now)

    # -------------------------------------------------------------- internals

    def _renew_all(self, now: int) -> None:
        lease_until = now + self.cfg.lease_us
        for n in sorted(self.members | self.shadows):
            if n in self.suspected or not self._reachable(n) or n in self.net.crashed:
                continue
            self.grants[n] = max(self.grants.get(n, 0), lease_until)
            self._deliver(n, Message(epoch=self.epoch, sender=RM_ID, kind=MsgKind.LEASE,
                                     value=struct.pack("<Q", lease_until)))

    def _freeze(self, now: int) -> None:
        """Stop renewals; reconfigure once every old-epoch lease has expired."""
        if self.frozen_until is not None:
            return
        outstanding = [self.grants.get(n, 0) for n in self.members | self.shadows]
        self.frozen_until = max([now] + outstanding)
        self.net.schedule(self.frozen_until, ReconfigDue(self.epoch))

    def _issue_mupdate(self, now: int) -> None:
        removed = set(self.suspected)
        self.members -= removed
        self.shadows -= removed
        for j in sorted(self.join_requests):
            self.shadows.add(j)
            self.configured.add(j)
            self.joins[j].phase = "shadow"
        self.join_requests.clear()
        self.suspected.clear()
        self.frozen_until = None
        self.epoch += 1
        lease_until = now + self.cfg.lease_us
        targets = sorted(self.members | self.shadows)
        for n in targets:
            self.grants[n] = lease_until
            self.last_heard[n] = now  # fresh grace period under the new epoch
        for i, n in enumerate(targets):
            self._deliver(n, Message(
                epoch=self.epoch, sender=RM_ID, kind=MsgKind.MUPDATE,
                value=encode_mupdate(lease_until, frozenset(self.members),
                                     frozenset(self.shadows))),
                extra_delay=i * self.cfg.stagger_us)
        self.mupdates_issued.append((now, self.epoch, frozenset(self.members)))
        for r in sorted(removed):
            self.grants.pop(r, None)
