"""Chain-replication baseline with apportioned queries.

Writes enter at the head, flow down the chain and commit at the tail; ACKs
flow back up, letting each node move the version from its pending set to its
committed copy.  Reads are local whenever the key is clean (no unacked write
in sight); a dirty key at a non-tail node costs a version query to the tail.

Fault tolerance and chain reconfiguration are out of scope here: the chain
exists for latency-shape and read-indirection comparisons in failure-free
runs, so links may still lose or reorder messages but membership is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .node import Effects, OpResult, ResultKind
from .timestamps import Timestamp
from .wire import Message, MsgKind


@dataclass
class CraqRecord:
    version: int = 0
    value: bytes = b""
    # Writes seen but not yet acknowledged back from the tail, oldest first:
    # list of (version, value).  The key is clean iff this is empty.
    pending: list[tuple[int, bytes]] = field(default_factory=list)


@dataclass
class ChainConfig:
    chain: tuple[int, ...]          # head .. tail
    value_size: int = 32


class CraqNode:
    def __init__(self, node_id: int, cfg: ChainConfig, key_count: int,
                 default_value: bytes):
        self.node_id = node_id
        self.cfg = cfg
        self.records = {k: CraqRecord(value=default_value) for k in range(key_count)}
        idx = cfg.chain.index(node_id)
        self.upstream: Optional[int] = cfg.chain[idx - 1] if idx > 0 else None
        self.downstream: Optional[int] = cfg.chain[idx + 1] if idx < len(cfg.chain) - 1 else None
        self.is_head = idx == 0
        self.is_tail = idx == len(cfg.chain) - 1
        # Writes this head initiated: (key, version) -> client op id.
        self.head_ops: dict[tuple[int, int], int] = {}
        # Reads parked on a tail version query: op_id -> key.
        self.redirected: dict[int, int] = {}
        self.next_query = 0
        self.crashed = False

    # ----------------------------------------------------------------- client

    def client_write(self, key: int, value: bytes, op_id: int, now: int) -> Effects:
        assert self.is_head, "writes enter the chain at its head"
        eff = Effects()
        rec = self.records[key]
        version = self._next_version(rec)
        rec.pending.append((version, value))
        self.head_ops[(key, version)] = op_id
        if self.downstream is None:
            self._commit_local(eff, key, rec, version)
        else:
            eff.send(self.downstream, self._msg(MsgKind.CRAQ_WRITE, key, version, value))
        return eff

    def client_read(self, key: int, op_id: int, now: int) -> Effects:
        eff = Effects()
        rec = self.records[key]
        if self.is_tail or not rec.pending:
            eff.complete(op_id, OpResult(ResultKind.READ_OK, rec.value,
                                         Timestamp(rec.version, 0)))
        else:
            # Dirty at a non-tail node: ask the tail which version stands.
            self.redirected[op_id] = key
            tail = self.cfg.chain[-1]
            eff.send(tail, Message(epoch=0, sender=self.node_id, kind=MsgKind.CRAQ_VERQ,
                                   key=key, ts=Timestamp(0, op_id)))
        return eff

    # --------------------------------------------------------------- messages

    def on_message(self, msg: Message, now: int) -> Effects:
        if self.crashed:
            return Effects()
        if msg.kind is MsgKind.CRAQ_WRITE:
            return self._on_write(msg)
        if msg.kind is MsgKind.CRAQ_ACK:
            return self._on_ack(msg)
        if msg.kind is MsgKind.CRAQ_VERQ:
            return self._on_version_query(msg)
        if msg.kind is MsgKind.CRAQ_VERR:
            return self._on_version_reply(msg)
        return Effects()

    def _on_write(self, msg: Message) -> Effects:
        eff = Effects()
        key, version = msg.key, msg.ts.version
        rec = self.records[key]
        if self.is_tail:
            # The write commits here; tell everyone upstream.
            if version > rec.version:
                rec.version = version
                rec.value = msg.value
            if self.upstream is not None:
                eff.send(self.upstream, self._msg(MsgKind.CRAQ_ACK, key, version, b""))
        else:
            rec.pending.append((version, msg.value))
            rec.pending.sort(key=lambda p: p[0])
            eff.send(self.downstream, self._msg(MsgKind.CRAQ_WRITE, key, version, msg.value))
        return eff

    def _on_ack(self, msg: Message) -> Effects:
        eff = Effects()
        key, version = msg.key, msg.ts.version
        self._commit_local(eff, key, self.records[key], version)
        if self.upstream is not None:
            eff.send(self.upstream, self._msg(MsgKind.CRAQ_ACK, key, version, b""))
        return eff

    def _commit_local(self, eff: Effects, key: int, rec: CraqRecord, version: int) -> None:
        keep = []
        committed = []
        for v, val in rec.pending:
            if v <= version:
                committed.append(v)
                if v > rec.version:
                    rec.version = v
                    rec.value = val
            else:
                keep.append((v, val))
        rec.pending = keep
        if self.is_head:
            for v in committed:
                op = self.head_ops.pop((key, v), None)
                if op is not None:
                    eff.complete(op, OpResult(ResultKind.WRITE_OK, ts=Timestamp(v, 0)))

    def _on_version_query(self, msg: Message) -> Effects:
        assert self.is_tail
        eff = Effects()
        rec = self.records[msg.key]
        reply = Message(epoch=0, sender=self.node_id, kind=MsgKind.CRAQ_VERR,
                        key=msg.key, ts=Timestamp(rec.version, msg.ts.cid),
                        value=rec.value)
        eff.send(msg.sender, reply)
        return eff

    def _on_version_reply(self, msg: Message) -> Effects:
        eff = Effects()
        op_id = msg.ts.cid
        if self.redirected.pop(op_id, None) is not None:
            eff.complete(op_id, OpResult(ResultKind.READ_OK, msg.value,
                                         Timestamp(msg.ts.version, 0)))
        return eff

    # ------------------------------------------------------------------ utils

    def _next_version(self, rec: CraqRecord) -> int:
        return (rec.pending[-1][0] if rec.pending else rec.version) + 1

    def _msg(self, kind: MsgKind, key: int, version: int, value: bytes) -> Message:
        return Message(epoch=0, sender=self.node_id, kind=kind, key=key,
                       ts=Timestamp(version, 0), value=value)
