"""Per-key logical timestamps: lexicographically ordered (version, cid) pairs.

The version counts committed updates to the key; cid is the (possibly
virtual) id of the node that coordinated the update and breaks version ties.
Tuple comparison gives the lexicographic total order directly.
"""

from __future__ import annotations

from typing import NamedTuple


class Timestamp(NamedTuple):
    version: int
    cid: int


TS_ZERO = Timestamp(0, 0)

LESS, EQUAL, GREATER = -1, 0, 1


def ts_compare(a: Timestamp, b: Timestamp) -> int:
    """Return -1, 0 or 1 as a is lower than, equal to, or higher than b."""
    if a == b:
        return EQUAL
    return GREATER if a > b else LESS
