"""Operation histories: invocation/completion records and their file format.

One event per line:

    time<TAB>client<TAB>op_id<TAB>key<TAB>invoke|complete<TAB>op-kind<TAB>args/result

op-kind is read | write | cas | fadd.  Args and results are rendered as
decimal integers (values travel as little-endian byte strings internally);
cas args are ``expected:new`` and special results are the literals ``ok``,
``casfail`` and ``aborted``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class HistoryEvent:
    time: int
    client: int
    op_id: int
    key: int
    phase: str          # "invoke" | "complete"
    op_kind: str        # "read" | "write" | "cas" | "fadd"
    detail: str         # args (invoke) or result (complete)

    def line(self) -> str:
        return (f"{self.time}\t{self.client}\t{self.op_id}\t{self.key}"
                f"\t{self.phase}\t{self.op_kind}\t{self.detail}")


def parse_line(line: str) -> HistoryEvent:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 7:
        raise ValueError(f"malformed history line: {line!r}")
    t, client, op_id, key, phase, kind, detail = parts
    if phase not in ("invoke", "complete"):
        raise ValueError(f"bad phase {phase!r}")
    if kind not in ("read", "write", "cas", "fadd"):
        raise ValueError(f"bad op kind {kind!r}")
    return HistoryEvent(int(t), int(client), int(op_id), int(key), phase, kind, detail)


def load(path: str) -> list[HistoryEvent]:
    events = []
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            if line.strip():
                events.append(parse_line(line))
    return events


def dump_lines(events: list[HistoryEvent]) -> str:
    return "".join(e.line() + "\n" for e in events)


def by_key(events: list[HistoryEvent]) -> dict[int, list[HistoryEvent]]:
    out: dict[int, list[HistoryEvent]] = {}
    for e in events:
        out.setdefault(e.key, []).append(e)
    return out


# -- the checker's internal view of one operation ----------------------------

@dataclass
class Op:
    op_id: int
    kind: str                       # read/write/cas/fadd
    args: tuple                     # write: (value,); cas: (exp, new); fadd: (delta,); read: ()
    invoke_t: int
    complete_t: Optional[int] = None
    result: Optional[str] = None    # raw detail string from the complete event

    @property
    def completed(self) -> bool:
        return self.complete_t is not None


def collect_ops(events: list[HistoryEvent]) -> list[Op]:
    """Pair invokes with completes; histories may leave ops pending."""
    ops: dict[int, Op] = {}
    for e in sorted(events, key=lambda e: (e.time, 0 if e.phase == "invoke" else 1, e.op_id)):
        if e.phase == "invoke":
            if e.op_id in ops:
                raise ValueError(f"duplicate invoke for op {e.op_id}")
            ops[e.op_id] = Op(e.op_id, e.op_kind, _parse_args(e), e.time)
        else:
            op = ops.get(e.op_id)
            if op is None:
                raise ValueError(f"completion without invocation for op {e.op_id}")
            if op.completed:
                raise ValueError(f"second completion for op {e.op_id}")
            op.complete_t = e.time
            op.result = e.detail
    return [ops[k] for k in sorted(ops)]


def _parse_args(e: HistoryEvent) -> tuple:
    if e.op_kind == "read":
        return ()
    if e.op_kind == "write":
        return (int(e.detail),)
    if e.op_kind == "cas":
        exp, new = e.detail.split(":")
        return (int(exp), int(new))
    return (int(e.detail),)
