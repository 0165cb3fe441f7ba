"""Bounded exhaustive exploration of small replication configurations.

Time is abstracted away: the explorer enumerates every ordering of the
nondeterministic frontier (message deliveries, client invocations, losses,
duplications, a crash, membership installs, timeout firings) over the *real*
node state machines, deduplicating via canonical state encodings.  At every
state it checks that replicas sharing a timestamp agree on the value; at
every terminal state (no enabled action) it checks for deadlock, that writes
committed, that at most one concurrent RMW succeeded, convergence of live
replicas, and linearizability of the observed results.

Bounds are meant for desk scale: <= 3 nodes, one key, a few client ops, at
most one crash and a couple of losses/duplications.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .checker import SearchBudgetExceeded, search_linearizable
from .history import Op
from .kvstore import KeyRecord, KeyState, PendingUpdate, Store
from .node import CompareAndSwap, FetchAdd, HermesNode, NodeConfig, OpKind, ResultKind, encode_value, decode_value
from .timestamps import Timestamp
from .wire import Message, MsgKind, decode as wire_decode

_LEASE_FOREVER = 1 << 60
_MLT = 1_000


@dataclass(frozen=True)
class OpSpec:
    node: int
    kind: str                   # read / write / cas / fadd
    key: int = 0
    value: Optional[int] = None
    cas_expected: Optional[int] = None
    cas_new: Optional[int] = None
    fadd_delta: Optional[int] = None
    # Invocation gate: None = always; "invalid" = only while the key is not
    # Valid at the op's node (a request arriving mid-write).
    gate: Optional[str] = None


@dataclass
class ExploreConfig:
    nodes: int
    ops: tuple[OpSpec, ...]
    keys: int = 1
    value_size: int = 8
    drop_budget: int = 0
    drop_kind: Optional[MsgKind] = None
    dup_budget: int = 0
    crash_budget: int = 0
    crash_candidates: tuple[int, ...] = ()
    # Crash only while this op index is invoked-but-incomplete (None = anytime).
    crash_while_op_inflight: Optional[int] = None
    skip_trans_val: bool = True
    state_budget: int = 10_000_000
    assert_convergence: bool = True
    assert_valid_keys: bool = False     # every live replica ends Valid

    def validate(self) -> None:
        if self.nodes > 3 or self.keys > 1 or len(self.ops) > 3:
            raise ValueError("explorer bounds: <=3 nodes, 1 key, <=3 ops")
        if self.crash_budget > 1 or self.drop_budget > 2 or self.dup_budget > 2:
            raise ValueError("explorer bounds: <=1 crash, <=2 drops, <=2 dups")


@dataclass
class ExplorationReport:
    states: int = 0
    transitions: int = 0
    terminals: int = 0
    complete: bool = True
    budget_hit: bool = False
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


# Op status slots: (status, result_detail, preds)
_NOT_INVOKED, _INVOKED, _DONE = 0, 1, 2


class _World:
    """Mutable working copy of one explored state."""

    def __init__(self, cfg: ExploreConfig):
        self.cfg = cfg
        self.nodes: dict[int, HermesNode] = {}
        self.net: list[tuple[int, int, bytes]] = []
        self.crashed: set[int] = set()
        self.drops_left = cfg.drop_budget
        self.dups_left = cfg.dup_budget
        self.crash_left = cfg.crash_budget
        self.installs: frozenset[int] = frozenset()
        self.op_status: list[tuple[int, Optional[str], frozenset[int]]] = [
            (_NOT_INVOKED, None, frozenset()) for _ in cfg.ops]

    # -------------------------------------------------------------- encoding

    def key_tuple(self) -> tuple:
        return (
            tuple(self._encode_node(self.nodes[n]) if n not in self.crashed else "X"
                  for n in sorted(self.nodes)),
            tuple(sorted(self.net)),
            frozenset(self.crashed),
            (self.drops_left, self.dups_left, self.crash_left),
            self.installs,
            tuple(self.op_status),
        )

    @staticmethod
    def _encode_node(node: HermesNode) -> tuple:
        recs = []
        for k in sorted(node.store.records):
            r = node.store.records[k]
            pend = None
            if r.pending is not None:
                p = r.pending
                pend = (p.ts, p.value, p.is_rmw, tuple(sorted(p.acks_needed)),
                        tuple(sorted(p.acks_received)), p.client_op, p.reply)
            stalled = tuple(_encode_stalled(e) for e in r.stalled)
            recs.append((r.state.value, r.ts, r.value, r.rmw_flag, pend, stalled,
                         r.mlt_deadline is not None, r.mlt_armed_ts,
                         tuple(sorted(r.bcast_acks)), r.inv_sender))
        return (node.epoch, tuple(sorted(node.live)), tuple(recs))

    @classmethod
    def from_key(cls, cfg: ExploreConfig, key: tuple) -> "_World":
        w = cls(cfg)
        nodes_enc, net, crashed, budgets, installs, ops = key
        w.net = list(net)
        w.crashed = set(crashed)
        w.drops_left, w.dups_left, w.crash_left = budgets
        w.installs = installs
        w.op_status = list(ops)
        default = encode_value(0, cfg.value_size)
        for n, enc in enumerate(nodes_enc):
            node = _make_node(cfg, n, default)
            if enc == "X":
                node.crashed = True
            else:
                epoch, live, recs = enc
                node.epoch = epoch
                node.live = frozenset(live)
                for k, rt in zip(sorted(node.store.records), recs):
                    state_v, ts, value, flag, pend, stalled, armed, armed_ts, backs, inv_sender = rt
                    r = node.store.records[k]
                    r.state = KeyState(state_v)
                    r.ts = Timestamp(*ts)
                    r.value = value
                    r.rmw_flag = flag
                    r.pending = None
                    if pend is not None:
                        pts, pval, prmw, need, got, cop, reply = pend
                        r.pending = PendingUpdate(ts=Timestamp(*pts), value=pval,
                                                  is_rmw=prmw, acks_needed=set(need),
                                                  acks_received=set(got), client_op=cop,
                                                  reply=reply)
                    r.stalled.clear()
                    for e in stalled:
                        r.stalled.append(_decode_stalled(e))
                    r.mlt_deadline = _MLT if armed else None
                    r.mlt_armed_ts = Timestamp(*armed_ts) if armed_ts is not None else None
                    r.bcast_acks = set(backs)
                    r.inv_sender = inv_sender
            w.nodes[n] = node
        return w


def _encode_stalled(entry) -> tuple:
    op_id, kind, payload = entry
    if kind is OpKind.READ:
        return (op_id, "r")
    if kind is OpKind.WRITE:
        value, draw = payload
        return (op_id, "w", value, draw)
    if kind is OpKind.CAS:
        spec, draw = payload
        return (op_id, "c", spec.expected, spec.new, draw)
    spec, draw = payload
    return (op_id, "f", spec.delta, draw)


def _decode_stalled(e):
    if e[1] == "r":
        return (e[0], OpKind.READ, None)
    if e[1] == "w":
        return (e[0], OpKind.WRITE, (e[2], e[3]))
    if e[1] == "c":
        return (e[0], OpKind.CAS, (CompareAndSwap(e[2], e[3]), e[4]))
    return (e[0], OpKind.FADD, (FetchAdd(e[2]), e[3]))


def _make_node(cfg: ExploreConfig, node_id: int, default: bytes) -> HermesNode:
    nc = NodeConfig(mlt_us=_MLT, value_size=cfg.value_size,
                    opt_skip_trans_val=cfg.skip_trans_val)
    node = HermesNode(node_id, nc, Store(cfg.keys, default), epoch=1,
                      live=frozenset(range(cfg.nodes)))
    node.lease_until = _LEASE_FOREVER
    return node


# ------------------------------------------------------------------- actions

def _enabled_actions(w: _World) -> list[tuple]:
    acts: list[tuple] = []
    for i, spec in enumerate(w.cfg.ops):
        status, _, _ = w.op_status[i]
        if status != _NOT_INVOKED or spec.node in w.crashed:
            continue
        if spec.gate == "invalid":
            rec = w.nodes[spec.node].store.get(spec.key)
            if rec.state is KeyState.VALID:
                continue
        acts.append(("invoke", i))
    for idx in range(len(w.net)):
        acts.append(("deliver", idx))
    if w.drops_left > 0:
        for idx, (_, _, raw) in enumerate(w.net):
            if w.cfg.drop_kind is None or wire_decode(raw).kind is w.cfg.drop_kind:
                acts.append(("drop", idx))
    if w.dups_left > 0:
        for idx in range(len(w.net)):
            acts.append(("dup", idx))
    if w.crash_left > 0:
        for n in w.cfg.crash_candidates:
            if n in w.crashed:
                continue
            if w.cfg.crash_while_op_inflight is not None:
                st, _, _ = w.op_status[w.cfg.crash_while_op_inflight]
                if st != _INVOKED:
                    continue
            acts.append(("crash", n))
    for n in sorted(w.installs):
        acts.append(("install", n))
    for n in sorted(w.nodes):
        if n in w.crashed:
            continue
        node = w.nodes[n]
        for k in sorted(node.store.records):
            rec = node.store.records[k]
            if rec.mlt_deadline is None or not _quiet(w, k):
                continue
            if rec.pending is not None and rec.pending.acks_needed - rec.pending.acks_received:
                acts.append(("mlt", n, k))
            elif rec.state is KeyState.INVALID and rec.stalled:
                acts.append(("mlt", n, k))
    return acts


def _quiet(w: _World, key: int) -> bool:
    """No protocol message for this key still in flight (timeouts model a
    silent network, which keeps retransmission storms out of the search)."""
    for _, _, raw in w.net:
        if wire_decode(raw).key == key:
            return False
    return True


def _apply(w: _World, action: tuple, cfg: ExploreConfig) -> None:
    kind = action[0]
    if kind == "invoke":
        i = action[1]
        spec = cfg.ops[i]
        node = w.nodes[spec.node]
        done_before = frozenset(j for j, (st, _, _) in enumerate(w.op_status) if st == _DONE)
        w.op_status[i] = (_INVOKED, None, done_before)
        if spec.kind == "read":
            eff = node.client_read(spec.key, i, 0)
        elif spec.kind == "write":
            eff = node.client_write(spec.key, encode_value(spec.value, cfg.value_size), i, 0)
        elif spec.kind == "cas":
            eff = node.client_rmw(spec.key, CompareAndSwap(
                encode_value(spec.cas_expected, cfg.value_size),
                encode_value(spec.cas_new, cfg.value_size)), i, 0)
        else:
            eff = node.client_rmw(spec.key, FetchAdd(spec.fadd_delta), i, 0)
        _absorb(w, spec.node, eff)
    elif kind == "deliver":
        src, dst, raw = w.net.pop(action[1])
        if dst in w.crashed:
            return
        node = w.nodes[dst]
        eff = node.on_message(wire_decode(raw), 0)
        _absorb(w, dst, eff)
    elif kind == "drop":
        w.net.pop(action[1])
        w.drops_left -= 1
    elif kind == "dup":
        w.net.append(w.net[action[1]])
        w.dups_left -= 1
    elif kind == "crash":
        n = action[1]
        w.crashed.add(n)
        w.crash_left -= 1
        w.nodes[n].crashed = True
        w.net = [m for m in w.net if m[1] != n]
        w.installs = frozenset(x for x in w.nodes if x not in w.crashed)
    elif kind == "install":
        n = action[1]
        w.installs = w.installs - {n}
        live = frozenset(x for x in w.nodes if x not in w.crashed)
        node = w.nodes[n]
        eff = node.apply_membership(node.epoch + 1, live, frozenset(),
                                    _LEASE_FOREVER, 0)
        _absorb(w, n, eff)
    elif kind == "mlt":
        _, n, k = action
        node = w.nodes[n]
        eff = node.mlt_fire(k, _MLT)
        _absorb(w, n, eff)
    else:
        raise AssertionError(action)


def _absorb(w: _World, src: int, eff) -> None:
    for dst, msg in eff.sends:
        if 0 <= dst < len(w.nodes) and dst not in w.crashed:
            w.net.append((src, dst, msg.encode()))
    for op_id, result in eff.completions:
        if result.kind is ResultKind.NOT_OPERATIONAL:
            continue
        st, _, preds = w.op_status[op_id]
        detail = _result_detail(w.cfg.ops[op_id], result)
        w.op_status[op_id] = (_DONE, detail, preds)


def _result_detail(spec: OpSpec, result) -> str:
    if result.kind is ResultKind.READ_OK:
        return str(decode_value(result.value))
    if result.kind is ResultKind.WRITE_OK:
        return "ok"
    if result.kind is ResultKind.RMW_OK:
        return "ok" if spec.kind == "cas" else str(decode_value(result.value))
    if result.kind is ResultKind.CAS_FAILED:
        return "casfail"
    if result.kind is ResultKind.ABORTED:
        return "aborted"
    raise AssertionError(result.kind)


# ---------------------------------------------------------------- assertions

def _state_invariant(w: _World) -> Optional[str]:
    """Replicas that applied the same timestamp must hold the same update."""
    for k in range(w.cfg.keys):
        seen: dict[Timestamp, tuple[bytes, bool]] = {}
        for n, node in w.nodes.items():
            if n in w.crashed:
                continue
            rec = node.store.get(k)
            prev = seen.get(rec.ts)
            if prev is None:
                seen[rec.ts] = (rec.value, rec.rmw_flag)
            elif prev != (rec.value, rec.rmw_flag):
                return (f"key {k}: divergent update for ts {rec.ts}: "
                        f"{prev} vs {(rec.value, rec.rmw_flag)}")
    return None


def _terminal_checks(w: _World, cfg: ExploreConfig) -> list[str]:
    issues = []
    # Deadlock: every invoked op must be resolved unless it sits on a node
    # that crashed (its client is gone with the node).
    for i, (st, detail, _) in enumerate(w.op_status):
        if st == _INVOKED and cfg.ops[i].node not in w.crashed:
            issues.append(f"op {i} stuck (no enabled action can resolve it)")
    for i, (st, detail, _) in enumerate(w.op_status):
        spec = cfg.ops[i]
        if spec.kind == "write" and st == _DONE and detail != "ok":
            issues.append(f"write op {i} finished with {detail!r}")
        if spec.kind == "write" and st == _INVOKED and spec.node not in w.crashed:
            issues.append(f"write op {i} never committed")
    rmw_ok = sum(1 for i, (st, detail, _) in enumerate(w.op_status)
                 if cfg.ops[i].kind in ("cas", "fadd") and st == _DONE and detail != "aborted"
                 and detail != "casfail")
    if rmw_ok > 1:
        issues.append(f"{rmw_ok} concurrent RMWs committed")
    if cfg.assert_convergence:
        live = [n for n in sorted(w.nodes) if n not in w.crashed]
        for k in range(cfg.keys):
            states = {(w.nodes[n].store.get(k).ts, w.nodes[n].store.get(k).value)
                      for n in live}
            if len(states) > 1:
                issues.append(f"key {k} diverged at quiescence: {sorted(states)}")
            if cfg.assert_valid_keys:
                off = [n for n in live
                       if w.nodes[n].store.get(k).state is not KeyState.VALID]
                if off:
                    issues.append(f"key {k} not Valid at quiescence on nodes {off}")
    issues.extend(_check_linearizable(w, cfg))
    return issues


def _check_linearizable(w: _World, cfg: ExploreConfig) -> list[str]:
    ops: list[Op] = []
    preds_sets: list[frozenset[int]] = []
    index_of: dict[int, int] = {}
    for i, (st, detail, preds) in enumerate(w.op_status):
        if st == _NOT_INVOKED:
            continue
        spec = cfg.ops[i]
        if st == _INVOKED and spec.kind == "read":
            continue  # pending reads constrain nothing
        args = ()
        if spec.kind == "write":
            args = (spec.value,)
        elif spec.kind == "cas":
            args = (spec.cas_expected, spec.cas_new)
        elif spec.kind == "fadd":
            args = (spec.fadd_delta,)
        op = Op(op_id=i, kind=spec.kind, args=args, invoke_t=0,
                complete_t=0 if st == _DONE else None,
                result=detail if st == _DONE else None)
        index_of[i] = len(ops)
        ops.append(op)
        preds_sets.append(preds)
    preds = {
        idx: frozenset(index_of[p] for p in preds_sets[idx] if p in index_of)
        for idx in range(len(ops))
    }
    try:
        ok, _ = search_linearizable(ops, preds, init_value=0, budget=200_000)
    except SearchBudgetExceeded:
        return ["linearizability search budget exceeded at terminal state"]
    if not ok:
        results = [(i, st, d) for i, (st, d, _) in enumerate(w.op_status)]
        return [f"terminal results not linearizable: {results}"]
    return []


# -------------------------------------------------------------------- driver

def explore(cfg: ExploreConfig,
            collect_outcomes: Optional[set] = None) -> ExplorationReport:
    """DFS over the nondeterministic frontier with state-hash deduplication.

    ``collect_outcomes``, when given, accumulates one tuple of per-op result
    details for every terminal state reached.
    """
    cfg.validate()
    report = ExplorationReport()
    w0 = _World(cfg)
    default = encode_value(0, cfg.value_size)
    for n in range(cfg.nodes):
        w0.nodes[n] = _make_node(cfg, n, default)
    key0 = w0.key_tuple()
    visited = {key0}
    report.states = 1

    def note_terminal(w: _World) -> None:
        report.terminals += 1
        if collect_outcomes is not None:
            collect_outcomes.add(tuple(d for _, d, _ in w.op_status))
        issues = _terminal_checks(w, cfg)
        if issues and len(report.violations) < 20:
            report.violations.extend(f"terminal: {msg}" for msg in issues)

    acts0 = _enabled_actions(w0)
    if not acts0:
        note_terminal(w0)
        return report

    stack: list[tuple[tuple, list[tuple], int]] = [(key0, acts0, 0)]
    while stack:
        key, acts, idx = stack[-1]
        if idx >= len(acts):
            stack.pop()
            continue
        stack[-1] = (key, acts, idx + 1)
        w = _World.from_key(cfg, key)
        _apply(w, acts[idx], cfg)
        report.transitions += 1
        bad = _state_invariant(w)
        if bad is not None:
            if len(report.violations) < 20:
                report.violations.append(f"after {acts[idx]}: {bad}")
            continue
        nkey = w.key_tuple()
        if nkey in visited:
            continue
        if report.states >= cfg.state_budget:
            report.budget_hit = True
            report.complete = False
            break
        visited.add(nkey)
        report.states += 1
        nacts = _enabled_actions(w)
        if not nacts:
            note_terminal(w)
        else:
            stack.append((nkey, nacts, 0))
    return report


# ----------------------------------------------------------- builtin configs

def builtin_config(name: str) -> ExploreConfig:
    """The four standing exploration scenarios (a-d)."""
    if name == "a":  # two concurrent writes
        return ExploreConfig(
            nodes=3,
            ops=(OpSpec(node=0, kind="write", value=101),
                 OpSpec(node=1, kind="write", value=102)),
            assert_valid_keys=True)
    if name == "b":  # write racing an RMW
        return ExploreConfig(
            nodes=3,
            ops=(OpSpec(node=0, kind="write", value=101),
                 OpSpec(node=1, kind="cas", cas_expected=0, cas_new=7)),
            assert_valid_keys=True)
    if name == "c":  # write + VAL loss + timeout-driven replay
        return ExploreConfig(
            nodes=2,
            ops=(OpSpec(node=0, kind="write", value=101),
                 OpSpec(node=1, kind="read", gate="invalid")),
            drop_budget=1, drop_kind=MsgKind.VAL,
            assert_valid_keys=True)
    if name == "d":  # follower crash mid-write + reconfiguration
        # A VAL sent just before the epoch bump is legitimately dropped by
        # followers that installed the update first; with no later request
        # the key rests Invalid there, so only (ts, value) convergence is
        # asserted here.
        return ExploreConfig(
            nodes=3,
            ops=(OpSpec(node=0, kind="write", value=101),
                 OpSpec(node=1, kind="read")),
            crash_budget=1, crash_candidates=(2,),
            crash_while_op_inflight=0)
    raise ValueError(f"unknown builtin exploration scenario {name!r}")
