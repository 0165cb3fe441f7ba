"""Scenario runner: wires nodes, membership, clients and the recorder to the
simulated network and produces (metrics, history, trace) for a scenario.

Clients are closed-loop sessions: each issues its next operation only after
the previous one completed (or was abandoned because its target node died or
dropped out of the membership).  Invocations are recorded at first arrival,
completions when a node answers; abandoned operations stay pending in the
history, which is exactly how the checker treats an op that may or may not
have taken effect.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from .craq import ChainConfig, CraqNode
from .history import HistoryEvent
from .kvstore import KeyState, Store
from .membership import ReconfigDue, RmConfig, RmOracle, RmTick
from .metrics import RunMetrics
from .node import (
    CompareAndSwap,
    FetchAdd,
    HermesNode,
    NodeConfig,
    OpResult,
    ResultKind,
    decode_value,
    encode_value,
)
from .rng import Rng
from .scenario import JoinAt, Scenario, SuspectAt
from .simnet import CrashNow, Deliver, PartitionEnd, PartitionStart, Simnet, TimerFire
from .timestamps import Timestamp
from .wire import Message, MsgKind, RM_ID, decode_mupdate
from .workload import OpDraw, WorkloadGen


@dataclass(frozen=True)
class ClientArrival:
    client: int


@dataclass(frozen=True)
class RetryRoute:
    client: int
    op_id: int


@dataclass(frozen=True)
class RetryCheck:
    client: int
    op_id: int


@dataclass(frozen=True)
class HeartbeatTick:
    pass


@dataclass(frozen=True)
class SuspectNow:
    node: int


@dataclass(frozen=True)
class JoinNow:
    node: int


@dataclass
class OutstandingOp:
    op_id: int
    draw: OpDraw
    invoked_at: int
    target: Optional[int] = None


class ClientSession:
    def __init__(self, client_id: int, home: int, rng):
        self.client_id = client_id
        self.home = home
        self.rng = rng
        self.last_seen: dict[int, int] = {}
        self.outstanding: Optional[OutstandingOp] = None
        self.stopped = False


@dataclass
class RunResult:
    metrics: RunMetrics
    history: list[HistoryEvent]
    trace: list[str]
    ts_hints: dict[int, Timestamp]
    runner: "Runner"

    def csv_row(self) -> str:
        return self.metrics.csv_row()


class Runner:
    def __init__(self, scenario: Scenario, *, record_trace: bool = True):
        scenario.validate()
        self.sc = scenario
        self.trace: list[str] = [] if record_trace else None
        self.net = Simnet(scenario.seed, scenario.link, trace=self.trace)
        self.net.majority_universe = frozenset(range(scenario.nodes))
        self.metrics = RunMetrics(
            scenario=scenario.name, protocol=scenario.protocol, nodes=scenario.nodes,
            write_ratio=scenario.write_ratio, rmw_ratio=scenario.rmw_ratio,
            distribution=scenario.distribution_label(),
            series_interval_us=scenario.series_interval_us)
        self.history: list[HistoryEvent] = []
        self.ts_hints: dict[int, Timestamp] = {}
        self._op_seq = 0
        self.ops: dict[int, tuple[int, OpDraw]] = {}      # op_id -> (client, draw)
        self._done_ops: set[int] = set()

        default_value = encode_value(0, scenario.value_size)
        ids = list(range(scenario.nodes))
        if scenario.protocol == "hermes":
            mlt = scenario.effective_mlt_us()
            self.nodes: dict[int, object] = {}
            for n in ids:
                cfg = NodeConfig(
                    mlt_us=mlt, value_size=scenario.value_size,
                    opt_skip_trans_val=scenario.skip_trans_val,
                    opt_virtual_ids=scenario.virtual_ids,
                    opt_broadcast_acks=scenario.broadcast_acks,
                    virtual_ids=(scenario.virtual_id_sets[n]
                                 if scenario.virtual_ids and scenario.virtual_id_sets else ()),
                    sync_chunk=scenario.sync_chunk)
                store = Store(scenario.keys, default_value)
                self.nodes[n] = HermesNode(n, cfg, store, epoch=1, live=frozenset(ids))
            self.oracle = RmOracle(
                RmConfig(lease_us=scenario.lease_us, tick_us=scenario.rm_tick_us,
                         miss_ticks=scenario.miss_ticks, stagger_us=scenario.stagger_us,
                         auto_rejoin=scenario.auto_rejoin),
                ids, self.net)
            for n, grant in self.oracle.bootstrap().items():
                self.nodes[n].lease_until = grant
            self.net.schedule(0, RmTick())
            self.net.schedule(0, HeartbeatTick())
        else:
            chain = ChainConfig(chain=tuple(ids), value_size=scenario.value_size)
            self.nodes = {n: CraqNode(n, chain, scenario.keys, default_value) for n in ids}
            self.oracle = None

        wl_rng_root = Rng(scenario.seed, "workload")
        self.workload = WorkloadGen(
            keys=scenario.keys, write_ratio=scenario.write_ratio,
            rmw_ratio=scenario.rmw_ratio, distribution=scenario.distribution,
            zipf_theta=scenario.zipf_theta, seed_rng=wl_rng_root)
        self.clients = {
            c: ClientSession(c, c % scenario.nodes, self.workload.client_rng(c))
            for c in range(scenario.clients)
        }
        self._sync_progress: dict[int, int] = {}
        # Scripted joiners outside the initial replica set exist from the
        # start but stay silent (no heartbeats) until their join time.
        self.dormant: set[int] = set()

        for fault in scenario.faults:
            if isinstance(fault, SuspectAt):
                self.net.schedule(fault.at_us, SuspectNow(fault.node))
            elif isinstance(fault, JoinAt):
                if fault.node not in self.nodes and scenario.protocol == "hermes":
                    cfg = NodeConfig(
                        mlt_us=scenario.effective_mlt_us(), value_size=scenario.value_size,
                        opt_skip_trans_val=scenario.skip_trans_val,
                        sync_chunk=scenario.sync_chunk)
                    self.nodes[fault.node] = HermesNode(
                        fault.node, cfg, Store(scenario.keys, default_value),
                        epoch=0, live=frozenset())
                    self.dormant.add(fault.node)
                self.net.schedule(fault.at_us, JoinNow(fault.node))
            else:
                self.net.inject(fault)
        for c in sorted(self.clients):
            self.net.schedule(0, ClientArrival(c))

    # ---------------------------------------------------------------- running

    def run(self) -> RunResult:
        cap = self.sc.duration_us + max(20 * self.sc.lease_us, 200_000)
        self.net.run(self._dispatch, until_us=cap, stop_when=self._finished)
        self.metrics.sim_duration = self.net.now
        self.metrics.msgs = dict(self.net.sent_by_kind)
        return RunResult(metrics=self.metrics, history=self.history,
                         trace=self.trace if self.trace is not None else [],
                         ts_hints=self.ts_hints, runner=self)

    def _finished(self) -> bool:
        if self.net.now < self.sc.duration_us:
            return False
        return all(c.outstanding is None for c in self.clients.values())

    # ----------------------------------------------------------------- events

    def _dispatch(self, payload) -> None:
        if isinstance(payload, Deliver):
            self._on_deliver(payload)
        elif isinstance(payload, TimerFire):
            self._on_timer(payload)
        elif isinstance(payload, ClientArrival):
            self._on_arrival(payload.client)
        elif isinstance(payload, RetryRoute):
            self._on_retry_route(payload)
        elif isinstance(payload, RetryCheck):
            self._on_retry_check(payload)
        elif isinstance(payload, RmTick):
            if not self._finished():
                self.oracle.on_tick(self.net.now)
        elif isinstance(payload, ReconfigDue):
            self.oracle.on_reconfig_due(payload, self.net.now)
        elif isinstance(payload, HeartbeatTick):
            self._on_heartbeat_tick()
        elif isinstance(payload, CrashNow):
            self._on_crash(payload.node)
        elif isinstance(payload, SuspectNow):
            if self.oracle is not None:
                self.oracle.suspect(payload.node, self.net.now)
        elif isinstance(payload, JoinNow):
            if self.oracle is not None:
                self.dormant.discard(payload.node)
                self.oracle.request_join(payload.node, self.net.now)
        elif isinstance(payload, (PartitionStart, PartitionEnd)):
            pass
        else:
            raise TypeError(f"unhandled event payload {payload!r}")

    def _on_deliver(self, d: Deliver) -> None:
        now = self.net.now
        if d.dst == RM_ID:
            if self.oracle is None:
                return
            if d.msg.kind is MsgKind.HEARTBEAT:
                self.oracle.on_heartbeat(d.msg.sender, now)
            elif d.msg.kind is MsgKind.SYNC_DONE:
                self.oracle.on_sync_done(d.msg.sender, now)
            return
        node = self.nodes[d.dst]
        self.metrics.per_node_handled[d.dst] = self.metrics.per_node_handled.get(d.dst, 0) + 1
        if d.msg.kind is MsgKind.LEASE:
            (lease_until,) = struct.unpack("<Q", d.msg.value)
            node.renew_lease(lease_until, d.msg.epoch)
            return
        if d.msg.kind is MsgKind.MUPDATE:
            lease_until, live, shadows = decode_mupdate(d.msg.value)
            before = self._trans_pendings(node)
            eff = node.apply_membership(d.msg.epoch, live, shadows, lease_until, now)
            self.metrics.trans_commits += max(0, before - self._trans_pendings(node))
            self._apply(d.dst, eff)
            return
        if d.msg.kind in (MsgKind.ACK, MsgKind.VAL) and self.sc.protocol == "hermes":
            rec = node.store.get(d.msg.key) if not node.crashed else None
            was_trans = rec is not None and rec.state is KeyState.TRANS and rec.pending is not None
            eff = node.on_message(d.msg, now)
            if was_trans and rec.pending is None:
                self.metrics.trans_commits += 1
            self._apply(d.dst, eff)
            return
        self._apply(d.dst, node.on_message(d.msg, now))

    @staticmethod
    def _trans_pendings(node) -> int:
        return sum(1 for rec in node.store.records.values()
                   if rec.state is KeyState.TRANS and rec.pending is not None)

    def _on_timer(self, t: TimerFire) -> None:
        node = self.nodes[t.node]
        rec = node.store.get(t.key)
        was_invalid = rec.state is KeyState.INVALID
        eff = node.mlt_fire(t.key, self.net.now)
        if was_invalid and rec.state is KeyState.REPLAY:
            self.metrics.replays += 1
        self._apply(t.node, eff)

    def _on_heartbeat_tick(self) -> None:
        if self._finished():
            return
        now = self.net.now
        for n in sorted(self.nodes):
            node = self.nodes[n]
            if getattr(node, "crashed", False) or n in self.dormant:
                continue
            self.net.send(n, RM_ID, Message(epoch=getattr(node, "epoch", 0), sender=n,
                                            kind=MsgKind.HEARTBEAT))
            # Shadow sync watchdog: re-pull when a chunk went missing.
            cursor = getattr(node, "sync_cursor", None)
            if cursor is not None:
                if self._sync_progress.get(n) == cursor and not node.join_acks_pending:
                    self._apply(n, node.sync_stalled_retry(now))
                self._sync_progress[n] = cursor
        self.net.after(self.sc.rm_tick_us, HeartbeatTick())

    def _on_crash(self, node_id: int) -> None:
        node = self.nodes.get(node_id)
        if node is not None:
            node.crashed = True
        if self.oracle is not None and self.sc.suspect_on_crash:
            self.oracle.suspect(node_id, self.net.now)

    # ----------------------------------------------------------- client logic

    def _on_arrival(self, client_id: int) -> None:
        client = self.clients[client_id]
        if client.outstanding is not None or client.stopped:
            return
        if self.net.now >= self.sc.duration_us:
            client.stopped = True
            return
        draw = self.workload.next_op(client.rng, client.last_seen)
        op_id = self._op_seq
        self._op_seq += 1
        self.ops[op_id] = (client_id, draw)
        client.outstanding = OutstandingOp(op_id, draw, self.net.now)
        self.history.append(HistoryEvent(self.net.now, client_id, op_id, draw.key,
                                         "invoke", draw.kind, self._invoke_detail(draw)))
        self.metrics.record_invoke(draw.kind)
        self._route(client)

    @staticmethod
    def _invoke_detail(draw: OpDraw) -> str:
        if draw.kind == "write":
            return str(draw.value)
        if draw.kind == "cas":
            return f"{draw.cas_expected}:{draw.cas_new}"
        if draw.kind == "fadd":
            return str(draw.fadd_delta)
        return "-"

    def _eligible(self, node_id: int) -> bool:
        node = self.nodes[node_id]
        if getattr(node, "crashed", False):
            return False
        if self.sc.protocol == "craq":
            return True
        return node.operational(self.net.now)

    def _pick_node(self, client: ClientSession, draw: OpDraw) -> Optional[int]:
        if self.sc.protocol == "craq" and draw.kind == "write":
            head = 0
            return head if self._eligible(head) else None
        if self._eligible(client.home):
            return client.home
        for n in sorted(self.nodes):
            if self._eligible(n):
                return n
        return None

    def _route(self, client: ClientSession) -> None:
        op = client.outstanding
        if op is None:
            return
        target = self._pick_node(client, op.draw)
        if target is None:
            self.net.after(self.sc.rm_tick_us, RetryRoute(client.client_id, op.op_id))
            return
        op.target = target
        node = self.nodes[target]
        draw = op.draw
        now = self.net.now
        if draw.kind == "read":
            eff = node.client_read(draw.key, op.op_id, now)
        elif draw.kind == "write" and self.sc.protocol == "craq":
            eff = node.client_write(draw.key, encode_value(draw.value, self.sc.value_size),
                                    op.op_id, now)
        elif draw.kind == "write":
            eff = node.client_write(draw.key, encode_value(draw.value, self.sc.value_size),
                                    op.op_id, now, cid_draw=client.rng.u64())
        elif draw.kind == "cas":
            spec = CompareAndSwap(encode_value(draw.cas_expected, self.sc.value_size),
                                  encode_value(draw.cas_new, self.sc.value_size))
            eff = node.client_rmw(draw.key, spec, op.op_id, now, cid_draw=client.rng.u64())
        else:
            eff = node.client_rmw(draw.key, FetchAdd(draw.fadd_delta), op.op_id, now,
                                  cid_draw=client.rng.u64())
        immediate = any(oid == op.op_id for oid, _ in eff.completions)
        if draw.kind == "read" and immediate:
            ok = all(r.kind is not ResultKind.NOT_OPERATIONAL
                     for oid, r in eff.completions if oid == op.op_id)
            if ok:
                self.metrics.reads_local += 1
                if eff.sends:
                    self.metrics.local_reads_with_messages += 1
        if self.sc.protocol == "craq" and draw.kind == "read" and not immediate:
            self.metrics.reads_redirected += 1
        self._apply(target, eff)
        if client.outstanding is op:  # still pending: watch for a dead target
            self.net.after(self.sc.retry_us, RetryCheck(client.client_id, op.op_id))

    def _on_retry_route(self, r: RetryRoute) -> None:
        client = self.clients[r.client]
        if client.outstanding is not None and client.outstanding.op_id == r.op_id \
                and client.outstanding.target is None:
            self._route(client)

    def _on_retry_check(self, r: RetryCheck) -> None:
        client = self.clients[r.client]
        op = client.outstanding
        if op is None or op.op_id != r.op_id or op.target is None:
            return
        node = self.nodes[op.target]
        gone = getattr(node, "crashed", False) or getattr(node, "is_shadow", False)
        if self.oracle is not None and not gone:
            gone = op.target not in (self.oracle.members | self.oracle.shadows)
        if gone:
            # The op is stuck on a node that left the membership; the client
            # gives up on it (it stays pending in the history) and moves on.
            self.metrics.abandoned += 1
            client.outstanding = None
            self.net.after(self.sc.think_us, ClientArrival(client.client_id))
        else:
            self.net.after(self.sc.retry_us, RetryCheck(client.client_id, op.op_id))

    # ------------------------------------------------------------ effects i/o

    def _apply(self, node_id: int, eff) -> None:
        now = self.net.now
        for dst, msg in eff.sends:
            self.net.send(node_id, dst, msg)
        for key in eff.timer_cancels:
            self.net.cancel_timer(node_id, key)
        for key, deadline in eff.timer_arms:
            self.net.arm_timer(node_id, key, deadline)
        for op_id, result in eff.completions:
            self._complete(op_id, result, now)

    def _complete(self, op_id: int, result: OpResult, now: int) -> None:
        if op_id in self._done_ops:
            return
        entry = self.ops.get(op_id)
        if entry is None:
            return
        client_id, draw = entry
        client = self.clients[client_id]
        if result.kind is ResultKind.NOT_OPERATIONAL:
            if client.outstanding is not None and client.outstanding.op_id == op_id:
                client.outstanding.target = None
                self.net.after(self.sc.rm_tick_us, RetryRoute(client_id, op_id))
            return
        if client.outstanding is None or client.outstanding.op_id != op_id:
            return  # completion raced with an abandon; drop it
        self._done_ops.add(op_id)
        invoked_at = client.outstanding.invoked_at
        client.outstanding = None
        detail, op_class, seen = self._result_detail(draw, result)
        if seen is not None:
            client.last_seen[draw.key] = seen
        self.history.append(HistoryEvent(now, client_id, op_id, draw.key,
                                         "complete", draw.kind, detail))
        if result.ts is not None:
            self.ts_hints[op_id] = result.ts
        if result.kind is ResultKind.ABORTED:
            self.metrics.aborts += 1
        elif result.kind is ResultKind.CAS_FAILED:
            self.metrics.cas_failures += 1
        else:
            self.metrics.record_completion(op_class, now - invoked_at, now)
        if draw.kind == "read":
            self.metrics.reads_total += 1
        self.net.mark_progress()
        self.net.after(self.sc.think_us, ClientArrival(client_id))

    @staticmethod
    def _result_detail(draw: OpDraw, result: OpResult) -> tuple[str, str, Optional[int]]:
        """(history detail, metrics class, client-observed value or None)."""
        if result.kind is ResultKind.READ_OK:
            v = decode_value(result.value)
            return str(v), "read", v
        if result.kind is ResultKind.WRITE_OK:
            return "ok", "write", draw.value
        if result.kind is ResultKind.RMW_OK:
            if draw.kind == "cas":
                return "ok", "rmw", draw.cas_new
            old = decode_value(result.value)
            return str(old), "rmw", old + draw.fadd_delta
        if result.kind is ResultKind.CAS_FAILED:
            return "casfail", "rmw", decode_value(result.value)
        if result.kind is ResultKind.ABORTED:
            return "aborted", "rmw", None
        raise AssertionError(result.kind)


def run_scenario(scenario: Scenario, *, record_trace: bool = True) -> RunResult:
    return Runner(scenario, record_trace=record_trace).run()
