"""Seeded discrete-event network simulator with fault injection.

Virtual time is an integer count of simulated microseconds.  Events pop in
(time, seq) order where seq is assigned at scheduling time, so "simultaneous"
deliveries are ordered by cause and identical seeds reproduce identical event
sequences bit for bit.

Per-link jitter, loss and duplication draw from substreams of the scenario
seed (one stream per ordered node pair), so toggling one link's behaviour
never perturbs another's.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Optional

from .rng import Rng
from .wire import Message, MsgKind, RM_ID

US = 1
MS = 1000
SEC = 1000 * 1000


@dataclass(frozen=True)
class LinkModel:
    base_delay_us: int = 10
    jitter_us: int = 0            # uniform extra delay in [0, jitter_us]
    drop_prob: float = 0.0
    dup_prob: float = 0.0

    def validate(self) -> None:
        if not (0.0 <= self.drop_prob <= 1.0 and 0.0 <= self.dup_prob <= 1.0):
            raise ValueError("link probabilities must lie in [0, 1]")
        if self.base_delay_us <= 0:
            raise ValueError("base one-way delay must be positive")


@dataclass(frozen=True)
class Crash:
    node: int
    at_us: int


@dataclass(frozen=True)
class Partition:
    groups: tuple[tuple[int, ...], ...]
    start_us: int
    end_us: int


@dataclass(frozen=True)
class DropNext:
    """Swallow the next `count` sends matching the filters (None = any)."""

    kind: Optional[MsgKind] = None
    src: Optional[int] = None
    dst: Optional[int] = None
    key: Optional[int] = None
    count: int = 1


FaultSpec = object  # Crash | Partition | DropNext


class LivelockGuard(RuntimeError):
    pass


# Event payloads dispatched to the harness.

@dataclass(frozen=True)
class Deliver:
    src: int
    dst: int
    msg: Message


@dataclass(frozen=True)
class TimerFire:
    node: int
    key: int
    gen: int


@dataclass(frozen=True)
class CrashNow:
    node: int


@dataclass(frozen=True)
class PartitionStart:
    part: Partition


@dataclass(frozen=True)
class PartitionEnd:
    part: Partition


class Simnet:
    def __init__(self, seed: int, link: LinkModel, trace: Optional[list[str]] = None):
        link.validate()
        self.link = link
        self.now = 0
        self._seq = 0
        self._heap: list[tuple[int, int, object]] = []
        self._root = Rng(seed, "simnet")
        self._link_rngs: dict[tuple[int, int], Rng] = {}
        self.crashed: set[int] = set()
        self._partition: Optional[Partition] = None
        self._injected_partitions: list[Partition] = []
        self._drop_next: list[DropNext] = []
        self._drop_counts: dict[int, int] = {}
        self._timer_gen: dict[tuple[int, int], int] = {}
        self._since_progress = 0
        self.trace = trace
        # Message sends by kind name; duplicates count as one send.
        self.sent_by_kind: dict[str, int] = {}
        # When set, the membership service is treated as co-located with the
        # partition side holding a strict majority of this replica set.
        self.majority_universe: Optional[frozenset[int]] = None

    # ------------------------------------------------------------- scheduling

    def schedule(self, at_us: int, payload: object) -> None:
        if at_us < self.now:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._heap, (at_us, self._seq, payload))
        self._seq += 1

    def after(self, delay_us: int, payload: object) -> None:
        self.schedule(self.now + delay_us, payload)

    # ------------------------------------------------------------------ links

    def _link_rng(self, src: int, dst: int) -> Rng:
        key = (src, dst)
        rng = self._link_rngs.get(key)
        if rng is None:
            rng = self._root.spawn(f"link:{src}:{dst}")
            self._link_rngs[key] = rng
        return rng

    def _delay(self, rng: Rng) -> int:
        d = self.link.base_delay_us
        if self.link.jitter_us:
            d += rng.randint(0, self.link.jitter_us)
        return d

    def _drop_next_matches(self, src: int, dst: int, msg: Message) -> bool:
        for i, spec in enumerate(self._drop_next):
            left = self._drop_counts.get(i, 0)
            if left <= 0:
                continue
            if spec.kind is not None and msg.kind is not spec.kind:
                continue
            if spec.src is not None and src != spec.src:
                continue
            if spec.dst is not None and dst != spec.dst:
                continue
            if spec.key is not None and msg.key != spec.key:
                continue
            self._drop_counts[i] = left - 1
            return True
        return False

    def send(self, src: int, dst: int, msg: Message) -> None:
        """Schedule 0 (dropped), 1, or 2 (duplicated) deliveries of msg."""
        if src in self.crashed:
            return
        self.sent_by_kind[msg.kind.name] = self.sent_by_kind.get(msg.kind.name, 0) + 1
        self._trace("SEND", src, msg)
        if self._drop_next_matches(src, dst, msg):
            self._trace("DROP", src, msg)
            return
        rng = self._link_rng(src, dst)
        if rng.chance(self.link.drop_prob):
            self._trace("DROP", src, msg)
            return
        self.after(self._delay(rng), Deliver(src, dst, msg))
        if rng.chance(self.link.dup_prob):
            self._trace("DUP", src, msg)
            self.after(self._delay(rng), Deliver(src, dst, msg))

    def deliverable(self, src: int, dst: int) -> bool:
        """A delivery goes through unless the destination crashed or a
        partition currently separates the endpoints."""
        if dst in self.crashed or src in self.crashed:
            return False
        if self._partition is not None:
            a, b = self.partition_group(src), self.partition_group(dst)
            return a is not None and a == b
        return True

    def partition_group(self, node: int) -> Optional[int]:
        if self._partition is None:
            return None
        if node == RM_ID and self.majority_universe is not None:
            need = len(self.majority_universe) // 2 + 1
            for i, grp in enumerate(self._partition.groups):
                if len(set(grp) & self.majority_universe) >= need:
                    return i
            return None
        for i, grp in enumerate(self._partition.groups):
            if node in grp:
                return i
        return None

    @property
    def active_partition(self) -> Optional[Partition]:
        return self._partition

    # ----------------------------------------------------------------- timers

    def arm_timer(self, node: int, key: int, deadline_us: int) -> None:
        gen = self._timer_gen.get((node, key), 0) + 1
        self._timer_gen[(node, key)] = gen
        self.schedule(deadline_us, TimerFire(node, key, gen))

    def cancel_timer(self, node: int, key: int) -> None:
        self._timer_gen[(node, key)] = self._timer_gen.get((node, key), 0) + 1

    def timer_current(self, t: TimerFire) -> bool:
        return self._timer_gen.get((t.node, t.key), 0) == t.gen

    # ----------------------------------------------------------------- faults

    def inject(self, fault) -> None:
        if isinstance(fault, Crash):
            self.schedule(fault.at_us, CrashNow(fault.node))
        elif isinstance(fault, Partition):
            if fault.end_us <= fault.start_us:
                raise ValueError("partition must end after it starts")
            for other in self._injected_partitions:
                if fault.start_us < other.end_us and other.start_us < fault.end_us:
                    raise ValueError("overlapping partitions are not supported")
            self._injected_partitions.append(fault)
            self.schedule(fault.start_us, PartitionStart(fault))
            self.schedule(fault.end_us, PartitionEnd(fault))
        elif isinstance(fault, DropNext):
            idx = len(self._drop_next)
            self._drop_next.append(fault)
            self._drop_counts[idx] = fault.count
        else:
            raise TypeError(f"unknown fault spec {fault!r}")

    def apply_crash(self, node: int) -> None:
        self.crashed.add(node)
        self._trace_plain("CRASH", node)

    def apply_partition(self, part: Partition) -> None:
        self._partition = part
        self._trace_plain("PART", -1)

    def heal_partition(self) -> None:
        self._partition = None
        self._trace_plain("HEAL", -1)

    # ------------------------------------------------------------------- loop

    def run(self, dispatch: Callable[[object], None], *,
            until_us: Optional[int] = None,
            stop_when: Optional[Callable[[], bool]] = None,
            max_events: int = 20_000_000,
            stall_limit: int = 2_000_000) -> None:
        """Drain events in deterministic order until quiescence (or until_us,
        or the stop_when predicate turns true).

        ``dispatch`` handles every payload; it reports client-visible progress
        by calling ``mark_progress`` so the guard can tell livelock from work.
        """
        events = 0
        self._since_progress = 0
        while self._heap:
            if stop_when is not None and stop_when():
                break
            at, _, payload = self._heap[0]
            if until_us is not None and at > until_us:
                break
            heapq.heappop(self._heap)
            self.now = at
            events += 1
            self._since_progress += 1
            if events > max_events or self._since_progress > stall_limit:
                raise LivelockGuard(
                    f"no progress after {self._since_progress} events ({events} total)")
            if isinstance(payload, CrashNow):
                self.apply_crash(payload.node)
                dispatch(payload)
                continue
            if isinstance(payload, PartitionStart):
                self.apply_partition(payload.part)
                dispatch(payload)
                continue
            if isinstance(payload, PartitionEnd):
                self.heal_partition()
                dispatch(payload)
                continue
            if isinstance(payload, Deliver):
                if not self.deliverable(payload.src, payload.dst):
                    continue
                self._trace("DLVR", payload.dst, payload.msg)
                dispatch(payload)
                continue
            if isinstance(payload, TimerFire):
                if not self.timer_current(payload):
                    continue
                self._trace_plain("TMR", payload.node)
                dispatch(payload)
                continue
            dispatch(payload)
        if until_us is not None and self.now < until_us and not self._heap:
            self.now = until_us

    def mark_progress(self) -> None:
        self._since_progress = 0

    # ------------------------------------------------------------------ trace

    def _trace(self, kind: str, node: int, msg: Message) -> None:
        if self.trace is not None:
            self.trace.append(f"{self.now}\t{kind}\t{node}\t{msg.encode().hex()}")

    def _trace_plain(self, kind: str, node: int, payload_hex: str = "00") -> None:
        if self.trace is not None:
            self.trace.append(f"{self.now}\t{kind}\t{node}\t{payload_hex}")
