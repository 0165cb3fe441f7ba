"""Per-replica protocol state machine for invalidation-based replication.

Each handler is a pure function of (node state, input event): it mutates only
this node's records and returns an Effects bundle of outgoing messages,
client completions and timer requests.  No clocks, no I/O and no randomness
live in here -- the current time and any random draw arrive as arguments, so
replaying the same inputs yields identical effects.

Protocol sketch (any replica may coordinate an update):

  coordinator: bump the key version (+2 for a write, +1 for an RMW), apply
  the new value locally, broadcast INV carrying timestamp and value, collect
  ACKs from all live followers, then commit and broadcast VAL.  Followers ACK
  every INV, apply it when its timestamp is higher, and validate the key when
  a VAL matches the local timestamp exactly.  A key stuck Invalid past the
  message-loss timeout is replayed by whoever is stuck, re-broadcasting the
  *stored* timestamp and value so the original global order is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .kvstore import KeyRecord, KeyState, PendingUpdate, Store
from .timestamps import TS_ZERO, Timestamp
from .wire import (
    RM_ID,
    SCAN_DONE,
    Message,
    MsgKind,
    decode_chunk,
    decode_pull,
    encode_chunk,
    encode_pull,
)


class OpKind(Enum):
    READ = "read"
    WRITE = "write"
    CAS = "cas"
    FADD = "fadd"


@dataclass(frozen=True)
class CompareAndSwap:
    expected: bytes
    new: bytes


@dataclass(frozen=True)
class FetchAdd:
    delta: int


RmwSpec = Union[CompareAndSwap, FetchAdd]


class ResultKind(Enum):
    READ_OK = "read_ok"
    WRITE_OK = "write_ok"
    RMW_OK = "rmw_ok"
    CAS_FAILED = "cas_failed"
    ABORTED = "aborted"
    NOT_OPERATIONAL = "not_operational"


@dataclass(frozen=True)
class OpResult:
    kind: ResultKind
    value: bytes = b""
    # Timestamp witnessing the value/commit; lets the checker seed its fast
    # path without widening the on-disk history format.
    ts: Optional[Timestamp] = None


@dataclass
class Effects:
    """Deterministic outcome of feeding one event to a node."""

    sends: list[tuple[int, Message]] = field(default_factory=list)
    completions: list[tuple[int, OpResult]] = field(default_factory=list)
    timer_arms: list[tuple[int, int]] = field(default_factory=list)   # (key, deadline)
    timer_cancels: list[int] = field(default_factory=list)            # key

    def send(self, dst: int, msg: Message) -> None:
        self.sends.append((dst, msg))

    def complete(self, op_id: int, result: OpResult) -> None:
        self.completions.append((op_id, result))

    def merge(self, other: "Effects") -> None:
        self.sends.extend(other.sends)
        self.completions.extend(other.completions)
        self.timer_arms.extend(other.timer_arms)
        self.timer_cancels.extend(other.timer_cancels)


@dataclass
class NodeConfig:
    mlt_us: int
    value_size: int = 32
    opt_skip_trans_val: bool = True        # superseded commits skip the VAL round
    opt_virtual_ids: bool = False          # pick a random virtual cid per update
    opt_broadcast_acks: bool = False       # followers ACK everyone and self-validate
    virtual_ids: tuple[int, ...] = ()
    sync_chunk: int = 64


def encode_value(n: int, size: int) -> bytes:
    return n.to_bytes(size, "little")


def decode_value(b: bytes) -> int:
    return int.from_bytes(b, "little")


class HermesNode:
    """One replica: a key store plus the per-key replication state machine."""

    def __init__(self, node_id: int, config: NodeConfig, store: Store,
                 epoch: int, live: frozenset[int]):
        self.node_id = node_id
        self.cfg = config
        self.store = store
        self.epoch = epoch
        self.live = live
        self.shadows: frozenset[int] = frozenset()
        self.lease_until = 0
        self.is_shadow = False
        self.sync_cursor: Optional[int] = None
        self.sync_donor: Optional[int] = None
        self.join_acks_pending: set[int] = set()
        self.crashed = False

    # ------------------------------------------------------------------ utils

    def operational(self, now: int) -> bool:
        return (not self.crashed) and (not self.is_shadow) and now < self.lease_until

    def followers(self) -> list[int]:
        return sorted(n for n in self.live | self.shadows if n != self.node_id)

    def choose_virtual_cid(self, draw: int) -> int:
        if self.cfg.opt_virtual_ids and self.cfg.virtual_ids:
            return self.cfg.virtual_ids[draw % len(self.cfg.virtual_ids)]
        return self.node_id

    def _msg(self, kind: MsgKind, key: int, ts: Timestamp = TS_ZERO, *,
             rmw_flag: bool = False, value: bytes = b"") -> Message:
        return Message(epoch=self.epoch, sender=self.node_id, kind=kind, key=key,
                       ts=ts, rmw_flag=rmw_flag, value=value)

    def _arm(self, eff: Effects, rec: KeyRecord, key: int, now: int) -> None:
        rec.mlt_deadline = now + self.cfg.mlt_us
        rec.mlt_armed_ts = rec.ts
        eff.timer_arms.append((key, rec.mlt_deadline))

    def _cancel(self, eff: Effects, rec: KeyRecord, key: int) -> None:
        if rec.mlt_deadline is not None:
            rec.mlt_deadline = None
            rec.mlt_armed_ts = None
            eff.timer_cancels.append(key)

    # -------------------------------------------------------- client requests

    def client_read(self, key: int, op_id: int, now: int) -> Effects:
        eff = Effects()
        if not self.operational(now):
            eff.complete(op_id, OpResult(ResultKind.NOT_OPERATIONAL))
            return eff
        rec = self.store.get(key)
        if rec.state is KeyState.VALID:
            eff.complete(op_id, OpResult(ResultKind.READ_OK, rec.value, rec.ts))
        else:
            rec.stalled.append((op_id, OpKind.READ, None))
            if rec.pending is None and rec.mlt_deadline is None:
                self._arm(eff, rec, key, now)
        return eff

    def client_write(self, key: int, value: bytes, op_id: int, now: int,
                     cid_draw: int = 0) -> Effects:
        eff = Effects()
        if not self.operational(now):
            eff.complete(op_id, OpResult(ResultKind.NOT_OPERATIONAL))
            return eff
        rec = self.store.get(key)
        if rec.state is not KeyState.VALID:
            rec.stalled.append((op_id, OpKind.WRITE, (value, cid_draw)))
            if rec.pending is None and rec.mlt_deadline is None:
                self._arm(eff, rec, key, now)
            return eff
        self._issue_write(eff, rec, key, value, op_id, now, cid_draw)
        return eff

    def client_rmw(self, key: int, spec: RmwSpec, op_id: int, now: int,
                   cid_draw: int = 0) -> Effects:
        eff = Effects()
        if not self.operational(now):
            eff.complete(op_id, OpResult(ResultKind.NOT_OPERATIONAL))
            return eff
        rec = self.store.get(key)
        if rec.state is not KeyState.VALID:
            kind = OpKind.CAS if isinstance(spec, CompareAndSwap) else OpKind.FADD
            rec.stalled.append((op_id, kind, (spec, cid_draw)))
            if rec.pending is None and rec.mlt_deadline is None:
                self._arm(eff, rec, key, now)
            return eff
        self._issue_rmw(eff, rec, key, spec, op_id, now, cid_draw)
        return eff

    def _issue_write(self, eff: Effects, rec: KeyRecord, key: int, value: bytes,
                     op_id: Optional[int], now: int, cid_draw: int) -> None:
        # Writes skip one version slot so a racing RMW (which bumps by one)
        # always carries the lower timestamp and loses.
        ts = Timestamp(rec.ts.version + 2, self.choose_virtual_cid(cid_draw))
        self._issue_update(eff, rec, key, ts, value, False, op_id, now, reply=b"")

    def _issue_rmw(self, eff: Effects, rec: KeyRecord, key: int, spec: RmwSpec,
                   op_id: int, now: int, cid_draw: int) -> None:
        if isinstance(spec, CompareAndSwap):
            if rec.value != spec.expected:
                eff.complete(op_id, OpResult(ResultKind.CAS_FAILED, rec.value, rec.ts))
                return
            new_value, reply = spec.new, b""
        else:
            old = rec.value
            new_value = encode_value(decode_value(old) + spec.delta, self.cfg.value_size)
            reply = old
        ts = Timestamp(rec.ts.version + 1, self.choose_virtual_cid(cid_draw))
        self._issue_update(eff, rec, key, ts, new_value, True, op_id, now, reply=reply)

    def _issue_update(self, eff: Effects, rec: KeyRecord, key: int, ts: Timestamp,
                      value: bytes, is_rmw: bool, op_id: Optional[int], now: int,
                      reply: bytes) -> None:
        followers = self.followers()
        rec.ts = ts
        rec.value = value
        rec.rmw_flag = is_rmw
        rec.state = KeyState.WRITE
        rec.bcast_acks = set()
        rec.inv_sender = self.node_id
        rec.pending = PendingUpdate(ts=ts, value=value, is_rmw=is_rmw,
                                    acks_needed=set(followers), client_op=op_id,
                                    reply=reply)
        if not followers:
            self._commit(eff, rec, key, now)
            return
        msg = self._msg(MsgKind.INV, key, ts, rmw_flag=is_rmw, value=value)
        for dst in followers:
            eff.send(dst, msg)
        self._arm(eff, rec, key, now)

    # ------------------------------------------------------- message handlers

    def on_message(self, msg: Message, now: int) -> Effects:
        """Entry point for delivered messages; enforces the epoch drop rule."""
        if self.crashed:
            return Effects()
        if msg.kind in (MsgKind.MUPDATE, MsgKind.LEASE):
            raise ValueError("membership traffic goes through apply_membership/renew_lease")
        if msg.epoch != self.epoch:
            return Effects()
        if msg.kind is MsgKind.INV:
            return self.handle_inv(msg, now)
        if msg.kind is MsgKind.ACK:
            return self.handle_ack(msg, now)
        if msg.kind is MsgKind.VAL:
            return self.handle_val(msg, now)
        if msg.kind is MsgKind.SYNC_PULL:
            return self.handle_sync_pull(msg, now)
        if msg.kind is MsgKind.SYNC_CHUNK:
            return self.handle_sync_chunk(msg, now)
        if msg.kind is MsgKind.JOIN_ACK:
            return self.handle_join_ack(msg, now)
        return Effects()

    def handle_inv(self, msg: Message, now: int) -> Effects:
        eff = Effects()
        rec = self.store.get(msg.key)

        # A pending RMW loses to any higher-timestamped update.  Replays of an
        # RMW (no client attached) are dropped the same way, so they stop
        # pushing a timestamp that can no longer win.
        if (rec.pending is not None and rec.pending.is_rmw
                and msg.ts > rec.pending.ts):
            if rec.pending.client_op is not None:
                eff.complete(rec.pending.client_op, OpResult(ResultKind.ABORTED, ts=msg.ts))
            rec.pending = None
            rec.state = KeyState.INVALID
            self._cancel(eff, rec, msg.key)

        if msg.rmw_flag and msg.ts < rec.ts:
            # RMW invalidation that already lost: answer with our local state
            # (the same message a replay would send) instead of an ACK.
            eff.send(msg.sender, self._msg(MsgKind.INV, msg.key, rec.ts,
                                           rmw_flag=rec.rmw_flag, value=rec.value))
            return eff

        if msg.ts > rec.ts:
            rec.ts = msg.ts
            rec.value = msg.value
            rec.rmw_flag = msg.rmw_flag
            rec.state = KeyState.TRANS if rec.pending is not None else KeyState.INVALID
            rec.bcast_acks = set()
            rec.inv_sender = msg.sender
            if rec.pending is None and rec.stalled and rec.mlt_deadline is not None:
                # Progress on the key: give the new update a full timeout.
                self._arm(eff, rec, msg.key, now)

        ack = self._msg(MsgKind.ACK, msg.key, msg.ts)
        if self.cfg.opt_broadcast_acks:
            for dst in self.followers():
                eff.send(dst, ack)
        else:
            eff.send(msg.sender, ack)
        return eff

    def handle_ack(self, msg: Message, now: int) -> Effects:
        eff = Effects()
        rec = self.store.get(msg.key)
        p = rec.pending
        if p is not None and msg.ts == p.ts:
            p.acks_received.add(msg.sender)
            if p.acks_needed <= p.acks_received:
                self._commit(eff, rec, msg.key, now)
        elif (self.cfg.opt_broadcast_acks and rec.state is KeyState.INVALID
                and msg.ts == rec.ts):
            # Count broadcast ACKs; once every follower of this update has
            # acknowledged, the key can be served without waiting for VAL.
            rec.bcast_acks.add(msg.sender)
            needed = {n for n in self.live | self.shadows if n != rec.inv_sender}
            if needed <= (rec.bcast_acks | {self.node_id}):
                rec.state = KeyState.VALID
                self._cancel(eff, rec, msg.key)
                self._drain(eff, rec, msg.key, now)
        return eff

    def handle_val(self, msg: Message, now: int) -> Effects:
        eff = Effects()
        rec = self.store.get(msg.key)
        if msg.ts != rec.ts or rec.state is KeyState.VALID:
            return eff
        if rec.pending is not None:
            # Another node drove an update with this exact timestamp (a replay
            # of our own write) or a superseding one to completion; the commit
            # is cluster-visible, so our client can be answered now.
            p = rec.pending
            rec.pending = None
            if p.client_op is not None:
                eff.complete(p.client_op, self._commit_result(p))
        rec.state = KeyState.VALID
        self._cancel(eff, rec, msg.key)
        self._drain(eff, rec, msg.key, now)
        return eff

    # ---------------------------------------------------------- commit/drain

    @staticmethod
    def _commit_result(p: PendingUpdate) -> OpResult:
        if p.is_rmw:
            return OpResult(ResultKind.RMW_OK, p.reply, p.ts)
        return OpResult(ResultKind.WRITE_OK, ts=p.ts)

    def _commit(self, eff: Effects, rec: KeyRecord, key: int, now: int) -> None:
        p = rec.pending
        rec.pending = None
        self._cancel(eff, rec, key)
        superseded = rec.state is KeyState.TRANS
        rec.state = KeyState.INVALID if superseded else KeyState.VALID
        if not (superseded and self.cfg.opt_skip_trans_val):
            val = self._msg(MsgKind.VAL, key, p.ts)
            for dst in self.followers():
                eff.send(dst, val)
        if p.client_op is not None:
            eff.complete(p.client_op, self._commit_result(p))
        if rec.state is KeyState.VALID:
            self._drain(eff, rec, key, now)
        elif rec.stalled:
            self._arm(eff, rec, key, now)

    def _drain(self, eff: Effects, rec: KeyRecord, key: int, now: int) -> None:
        """Serve stalled ops FIFO once the key is Valid again.

        Reads complete immediately; the first queued update re-enters the
        write path (leaving Valid), so anything behind it keeps waiting.
        """
        while rec.stalled and rec.state is KeyState.VALID:
            op_id, kind, payload = rec.stalled.popleft()
            if kind is OpKind.READ:
                eff.complete(op_id, OpResult(ResultKind.READ_OK, rec.value, rec.ts))
            elif kind is OpKind.WRITE:
                value, draw = payload
                self._issue_write(eff, rec, key, value, op_id, now, draw)
            else:
                spec, draw = payload
                self._issue_rmw(eff, rec, key, spec, op_id, now, draw)

    # ----------------------------------------------------------------- timers

    def mlt_fire(self, key: int, now: int) -> Effects:
        eff = Effects()
        if self.crashed:
            return eff
        rec = self.store.get(key)
        if rec.mlt_deadline is None or now < rec.mlt_deadline:
            return eff
        if rec.pending is not None:
            # Coordinator role: nudge the followers that still owe an ACK.
            missing = sorted(rec.pending.acks_needed - rec.pending.acks_received)
            msg = self._msg(MsgKind.INV, key, rec.pending.ts,
                            rmw_flag=rec.pending.is_rmw, value=rec.pending.value)
            for dst in missing:
                eff.send(dst, msg)
            self._arm(eff, rec, key, now)
        elif rec.state is KeyState.INVALID and rec.stalled:
            if rec.mlt_armed_ts == rec.ts:
                self._start_replay(eff, rec, key, now)
            else:
                self._arm(eff, rec, key, now)
        else:
            rec.mlt_deadline = None
            rec.mlt_armed_ts = None
        return eff

    def _start_replay(self, eff: Effects, rec: KeyRecord, key: int, now: int) -> None:
        followers = self.followers()
        rec.state = KeyState.REPLAY
        rec.pending = PendingUpdate(ts=rec.ts, value=rec.value, is_rmw=rec.rmw_flag,
                                    acks_needed=set(followers), client_op=None)
        if not followers:
            self._commit(eff, rec, key, now)
            return
        msg = self._msg(MsgKind.INV, key, rec.ts, rmw_flag=rec.rmw_flag, value=rec.value)
        for dst in followers:
            eff.send(dst, msg)
        self._arm(eff, rec, key, now)

    # ------------------------------------------------------------- membership

    def renew_lease(self, lease_until: int, epoch: int) -> Effects:
        if not self.crashed and epoch == self.epoch:
            self.lease_until = max(self.lease_until, lease_until)
        return Effects()

    def apply_membership(self, epoch: int, live: frozenset[int],
                         shadows: frozenset[int], lease_until: int, now: int) -> Effects:
        eff = Effects()
        if self.crashed or epoch <= self.epoch:
            return eff
        new_shadows = shadows - self.shadows
        self.epoch = epoch
        self.live = live
        self.shadows = shadows
        self.lease_until = max(self.lease_until, lease_until)
        if self.node_id in shadows:
            if not self.is_shadow:
                self._enter_shadow()
        else:
            self.is_shadow = False
            for sh in sorted(new_shadows):
                eff.send(sh, self._msg(MsgKind.JOIN_ACK, 0))
        followers = set(self.followers())
        for key in sorted(self.store.records):
            rec = self.store.records[key]
            p = rec.pending
            if p is None:
                continue
            p.acks_needed = set(followers)
            if p.is_rmw and rec.state is not KeyState.TRANS:
                # A reconfiguration invalidates whatever conflict resolution
                # the gathered ACKs witnessed: start the round over.
                p.acks_received = set()
                msg = self._msg(MsgKind.INV, key, p.ts, rmw_flag=True, value=p.value)
                for dst in sorted(followers):
                    eff.send(dst, msg)
                self._arm(eff, rec, key, now)
            elif p.acks_needed <= p.acks_received:
                self._commit(eff, rec, key, now)
            else:
                msg = self._msg(MsgKind.INV, key, p.ts, rmw_flag=p.is_rmw, value=p.value)
                for dst in sorted(p.acks_needed - p.acks_received):
                    eff.send(dst, msg)
                self._arm(eff, rec, key, now)
        if self.is_shadow and self.sync_cursor is not None and not self.join_acks_pending:
            eff.merge(self._sync_pull(now))
        return eff

    def _enter_shadow(self) -> None:
        self.is_shadow = True
        self.sync_cursor = 0
        # Pull only once every live full replica has acknowledged the join;
        # they may install the membership later than we do.
        self.join_acks_pending = {n for n in self.live - self.shadows if n != self.node_id}
        # Local pending/stalled work belongs to a membership this node is no
        # longer part of; its clients were redirected when it dropped out.
        for rec in self.store.records.values():
            rec.pending = None
            rec.stalled.clear()
            rec.mlt_deadline = None
            rec.mlt_armed_ts = None
            if rec.state in (KeyState.WRITE, KeyState.REPLAY, KeyState.TRANS):
                rec.state = KeyState.INVALID

    def handle_join_ack(self, msg: Message, now: int) -> Effects:
        self.join_acks_pending.discard(msg.sender)
        if self.is_shadow and not self.join_acks_pending and self.sync_cursor == 0:
            return self._sync_pull(now)
        return Effects()

    # -------------------------------------------------------- shadow bulk sync

    def _pick_donor(self) -> Optional[int]:
        candidates = sorted((self.live - self.shadows) - {self.node_id})
        return candidates[0] if candidates else None

    def _sync_pull(self, now: int) -> Effects:
        eff = Effects()
        donor = self._pick_donor()
        if donor is None or self.sync_cursor is None:
            return eff
        self.sync_donor = donor
        eff.send(donor, self._msg(MsgKind.SYNC_PULL, 0,
                                  value=encode_pull(self.sync_cursor, self.cfg.sync_chunk)))
        return eff

    def handle_sync_pull(self, msg: Message, now: int) -> Effects:
        eff = Effects()
        cursor, chunk = decode_pull(msg.value)
        records, next_cursor = self.store.scan(cursor, chunk)
        payload = [(k, r.ts, r.value, r.rmw_flag, r.state is KeyState.VALID)
                   for k, r in records]
        nc = SCAN_DONE if next_cursor is None else next_cursor
        eff.send(msg.sender, self._msg(MsgKind.SYNC_CHUNK, 0,
                                       value=encode_chunk(nc, payload)))
        return eff

    def handle_sync_chunk(self, msg: Message, now: int) -> Effects:
        eff = Effects()
        if not self.is_shadow or self.sync_cursor is None:
            return eff
        next_cursor, records = decode_chunk(msg.value)
        for key, ts, value, rmw_flag, valid in records:
            rec = self.store.get(key)
            if rec.pending is not None:
                continue
            if ts > rec.ts:
                rec.ts = ts
                rec.value = value
                rec.rmw_flag = rmw_flag
                # Adopting an uncommitted (Invalid-at-donor) value as Valid
                # could leak it to readers; keep it Invalid until validated.
                rec.state = KeyState.VALID if valid else KeyState.INVALID
            elif ts == rec.ts and valid and rec.state is KeyState.INVALID:
                rec.state = KeyState.VALID
        if next_cursor == SCAN_DONE:
            self.sync_cursor = None
            self.sync_donor = None
            self.is_shadow = False
            eff.send(RM_ID, self._msg(MsgKind.SYNC_DONE, 0))
        else:
            self.sync_cursor = next_cursor
            eff.merge(self._sync_pull(now))
        return eff

    def sync_stalled_retry(self, now: int) -> Effects:
        """Re-issue the outstanding pull (lost chunk or dead donor)."""
        if self.is_shadow and self.sync_cursor is not None:
            return self._sync_pull(now)
        return Effects()
