"""Protocol messages and their canonical byte encoding.

Every message travels as a flat little-endian record:

    epoch u32 | sender u32 | kind u8 | key u32 | version u64 | cid u32
    | value_len u32 | value bytes

so traces can be replayed and diffed bit-exactly.  The RMW marker on
invalidations is folded into the high bit of the kind tag.  Membership and
shadow-sync payloads ride in the value field with their own little pack
formats (see encode_mupdate / encode_chunk below).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .timestamps import TS_ZERO, Timestamp

_HEADER = struct.Struct("<IIBIQII")
_RMW_BIT = 0x80

# Pseudo node id used by the membership service on the wire.
RM_ID = 255


class MsgKind(IntEnum):
    INV = 1
    ACK = 2
    VAL = 3
    CRAQ_WRITE = 4
    CRAQ_ACK = 5
    CRAQ_VERQ = 6
    CRAQ_VERR = 7
    MUPDATE = 8
    LEASE = 9
    HEARTBEAT = 10
    SYNC_PULL = 11
    SYNC_CHUNK = 12
    SYNC_DONE = 13
    JOIN_ACK = 14


# Kinds the per-key replication state machine produces/consumes.
PROTOCOL_KINDS = (MsgKind.INV, MsgKind.ACK, MsgKind.VAL)


@dataclass(frozen=True)
class Message:
    epoch: int
    sender: int
    kind: MsgKind
    key: int = 0
    ts: Timestamp = TS_ZERO
    rmw_flag: bool = False
    value: bytes = field(default=b"", repr=False)

    def encode(self) -> bytes:
        tag = int(self.kind) | (_RMW_BIT if self.rmw_flag else 0)
        return _HEADER.pack(
            self.epoch, self.sender, tag, self.key,
            self.ts.version, self.ts.cid, len(self.value),
        ) + self.value


def decode(buf: bytes) -> Message:
    epoch, sender, tag, key, version, cid, vlen = _HEADER.unpack_from(buf)
    value = buf[_HEADER.size:_HEADER.size + vlen]
    if len(value) != vlen:
        raise ValueError("truncated message payload")
    return Message(
        epoch=epoch, sender=sender, kind=MsgKind(tag & ~_RMW_BIT), key=key,
        ts=Timestamp(version, cid), rmw_flag=bool(tag & _RMW_BIT), value=value,
    )


# -- membership payloads ----------------------------------------------------

_MUPDATE_HEAD = struct.Struct("<QH")


def encode_mupdate(lease_until: int, live: frozenset[int], shadows: frozenset[int]) -> bytes:
    ids = sorted(live)
    sh = sorted(shadows)
    return (
        _MUPDATE_HEAD.pack(lease_until, len(ids))
        + b"".join(struct.pack("<I", i) for i in ids)
        + struct.pack("<H", len(sh))
        + b"".join(struct.pack("<I", i) for i in sh)
    )


def decode_mupdate(value: bytes) -> tuple[int, frozenset[int], frozenset[int]]:
    lease_until, n = _MUPDATE_HEAD.unpack_from(value)
    off = _MUPDATE_HEAD.size
    live = frozenset(struct.unpack_from("<I", value, off + 4 * i)[0] for i in range(n))
    off += 4 * n
    (m,) = struct.unpack_from("<H", value, off)
    off += 2
    shadows = frozenset(struct.unpack_from("<I", value, off + 4 * i)[0] for i in range(m))
    return lease_until, live, shadows


# -- shadow-sync payloads ----------------------------------------------------

_PULL = struct.Struct("<IH")
_CHUNK_HEAD = struct.Struct("<IH")
_CHUNK_REC = struct.Struct("<IQIBBI")

SCAN_DONE = 0xFFFFFFFF


def encode_pull(cursor: int, chunk_size: int) -> bytes:
    return _PULL.pack(cursor, chunk_size)


def decode_pull(value: bytes) -> tuple[int, int]:
    return _PULL.unpack(value)


def encode_chunk(next_cursor: int, records) -> bytes:
    """records: iterable of (key, ts, value_bytes, rmw_flag, valid)."""
    out = [_CHUNK_HEAD.pack(next_cursor, len(records))]
    for key, ts, value, rmw_flag, valid in records:
        out.append(_CHUNK_REC.pack(key, ts.version, ts.cid, int(rmw_flag), int(valid), len(value)))
        out.append(value)
    return b"".join(out)


def decode_chunk(value: bytes):
    next_cursor, n = _CHUNK_HEAD.unpack_from(value)
    off = _CHUNK_HEAD.size
    records = []
    for _ in range(n):
        key, version, cid, rmw_flag, valid, vlen = _CHUNK_REC.unpack_from(value, off)
        off += _CHUNK_REC.size
        records.append((key, Timestamp(version, cid), value[off:off + vlen], bool(rmw_flag), bool(valid)))
        off += vlen
    return next_cursor, records
