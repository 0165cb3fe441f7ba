"""Per-node replicated key store: key id -> KeyRecord, plus chunked scans.

The store never compares timestamps itself; ordering decisions belong to the
protocol layer, which calls ``apply`` once it has decided a record changes.
Every key of the configured universe exists from initialization in the Valid
state with the default value and timestamp (0, 0).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .timestamps import TS_ZERO, Timestamp


class KeyState(Enum):
    VALID = "valid"
    INVALID = "invalid"
    WRITE = "write"
    REPLAY = "replay"
    TRANS = "trans"


@dataclass
class PendingUpdate:
    """A locally-coordinated update awaiting follower acknowledgments."""

    ts: Timestamp
    value: bytes
    is_rmw: bool
    acks_needed: set[int]
    acks_received: set[int] = field(default_factory=set)
    client_op: Optional[int] = None
    # Payload handed back to the client on completion (e.g. the previous
    # value for fetch-add); captured at issue time.
    reply: bytes = b""


@dataclass
class KeyRecord:
    state: KeyState = KeyState.VALID
    ts: Timestamp = TS_ZERO
    value: bytes = b""
    rmw_flag: bool = False
    pending: Optional[PendingUpdate] = None
    # Client ops waiting for the key to become Valid, FIFO:
    # (op_id, op_kind, payload).
    stalled: deque = field(default_factory=deque)
    mlt_deadline: Optional[int] = None
    # Timestamp snapshot taken when the loss timer was armed; a fired timer
    # only triggers a replay if nothing changed in the meantime.
    mlt_armed_ts: Optional[Timestamp] = None
    # Broadcast-ACK bookkeeping (only used when that optimization is on).
    bcast_acks: set[int] = field(default_factory=set)
    inv_sender: Optional[int] = None


class UnknownKey(KeyError):
    pass


class Store:
    def __init__(self, key_count: int, default_value: bytes):
        self.key_count = key_count
        self.records: dict[int, KeyRecord] = {
            k: KeyRecord(value=default_value) for k in range(key_count)
        }

    def get(self, key: int) -> KeyRecord:
        try:
            return self.records[key]
        except KeyError:
            raise UnknownKey(key) from None

    def apply(self, key: int, ts: Timestamp, value: bytes, rmw_flag: bool, state: KeyState) -> None:
        rec = self.get(key)
        rec.ts = ts
        rec.value = value
        rec.rmw_flag = rmw_flag
        rec.state = state

    def scan(self, cursor: int, chunk_size: int) -> tuple[list[tuple[int, KeyRecord]], Optional[int]]:
        """Return up to chunk_size records starting at key id ``cursor``.

        The second element is the next cursor, or None once exhausted.
        """
        if cursor >= self.key_count:
            return [], None
        end = min(cursor + chunk_size, self.key_count)
        out = [(k, self.records[k]) for k in range(cursor, end)]
        return out, (end if end < self.key_count else None)

    def snapshot_lines(self):
        """One 'key version cid value-hex' line per key, for replica diffing."""
        for k in range(self.key_count):
            rec = self.records[k]
            yield f"{k} {rec.ts.version} {rec.ts.cid} {rec.value.hex()}"
