"""Scripted three-node scenario with a frozen step-by-step state table.

Two nodes write the same key concurrently; the loser's coordinator ends up
superseded (Trans), a reader stalls and resumes on validation, then the
winning coordinator crashes with its final VAL lost, and the stuck node
replays the stored write to unblock a later read.  The per-step
(state, value) table of all three replicas is pinned below; any divergence
reports the first mismatching step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .kvstore import Store
from .node import HermesNode, NodeConfig, OpResult, decode_value, encode_value
from .wire import Message, MsgKind

_VALUE_SIZE = 8
_MLT = 10

# (state, value) per node; "X" marks the crashed node.
EXPECTED_STRIP: tuple = (
    (("valid", 0), ("valid", 0), ("valid", 0)),
    (("write", 1), ("valid", 0), ("valid", 0)),
    (("write", 1), ("valid", 0), ("write", 3)),
    (("write", 1), ("invalid", 1), ("write", 3)),
    (("write", 1), ("invalid", 3), ("write", 3)),
    (("trans", 3), ("invalid", 3), ("write", 3)),
    (("trans", 3), ("invalid", 3), ("valid", 3)),
    (("trans", 3), ("valid", 3), ("valid", 3)),
    (("invalid", 3), ("valid", 3), "X"),
    (("invalid", 3), ("valid", 3), "X"),
    (("valid", 3), ("valid", 3), "X"),
)

OP_WRITE_N0 = 0
OP_WRITE_N2 = 1
OP_READ_N1 = 2
OP_READ_N0 = 3


@dataclass
class GoldenResult:
    ok: bool
    strip: list
    first_mismatch: Optional[tuple] = None     # (step, expected, actual)
    completions: dict[int, str] = field(default_factory=dict)

    def table(self) -> str:
        rows = []
        for i, col in enumerate(self.strip):
            cells = []
            for c in col:
                cells.append("X" if c == "X" else f"{c[0][:1].upper()}:{c[1]}")
            marker = ""
            if self.first_mismatch is not None and self.first_mismatch[0] == i:
                marker = "   <- first mismatch"
            rows.append(f"step {i:2d}:  " + "  ".join(f"{c:>9}" for c in cells) + marker)
        return "\n".join(rows)


class _Script:
    def __init__(self):
        cfg = NodeConfig(mlt_us=_MLT, value_size=_VALUE_SIZE, opt_skip_trans_val=True)
        live = frozenset((0, 1, 2))
        self.nodes = [
            HermesNode(n, cfg, Store(1, encode_value(0, _VALUE_SIZE)), epoch=1, live=live)
            for n in range(3)
        ]
        for node in self.nodes:
            node.lease_until = 1 << 60
        self.pool: list[tuple[int, int, Message]] = []
        self.completions: dict[int, str] = {}
        self.crashed: set[int] = set()

    def absorb(self, src: int, eff) -> None:
        for dst, msg in eff.sends:
            self.pool.append((src, dst, msg))
        for op_id, result in eff.completions:
            self.completions[op_id] = _fmt_result(result)

    def deliver(self, src: int, dst: int, kind: MsgKind) -> None:
        for i, (s, d, m) in enumerate(self.pool):
            if s == src and d == dst and m.kind is kind:
                self.pool.pop(i)
                if dst in self.crashed:
                    return
                self.absorb(dst, self.nodes[dst].on_message(m, 0))
                return
        raise AssertionError(f"no {kind.name} from {src} to {dst} in flight")

    def snap(self):
        col = []
        for n, node in enumerate(self.nodes):
            if n in self.crashed:
                col.append("X")
            else:
                rec = node.store.get(0)
                col.append((rec.state.value, decode_value(rec.value)))
        return tuple(col)


def _fmt_result(result: OpResult) -> str:
    from .node import ResultKind
    if result.kind is ResultKind.READ_OK:
        return str(decode_value(result.value))
    if result.kind is ResultKind.WRITE_OK:
        return "ok"
    return result.kind.value


def run_golden() -> GoldenResult:
    s = _Script()
    strip = [s.snap()]                                             # 0: initial

    s.absorb(0, s.nodes[0].client_write(0, encode_value(1, _VALUE_SIZE), OP_WRITE_N0, 0))
    strip.append(s.snap())                                         # 1: n0 writes 1
    s.absorb(2, s.nodes[2].client_write(0, encode_value(3, _VALUE_SIZE), OP_WRITE_N2, 0))
    strip.append(s.snap())                                         # 2: n2 writes 3

    s.deliver(0, 1, MsgKind.INV)
    strip.append(s.snap())                                         # 3: n1 invalidated by n0
    s.deliver(2, 1, MsgKind.INV)
    strip.append(s.snap())                                         # 4: n1 adopts n2's higher ts
    s.deliver(2, 0, MsgKind.INV)
    strip.append(s.snap())                                         # 5: n0 superseded -> Trans
    s.deliver(0, 2, MsgKind.INV)                                   # n2 ACKs without applying

    s.absorb(1, s.nodes[1].client_read(0, OP_READ_N1, 0))          # read stalls at n1

    s.deliver(1, 2, MsgKind.ACK)
    s.deliver(0, 2, MsgKind.ACK)
    strip.append(s.snap())                                         # 6: n2 commits, VALs
    s.deliver(2, 1, MsgKind.VAL)
    strip.append(s.snap())                                         # 7: n1 valid, read done

    s.deliver(1, 0, MsgKind.ACK)
    s.deliver(2, 0, MsgKind.ACK)                                   # n0 completes in Trans -> Invalid
    s.crashed.add(2)
    s.nodes[2].crashed = True                                      # VAL n2->n0 dies with it
    strip.append(s.snap())                                         # 8: crash, n0 left Invalid

    for n in (0, 1):
        s.absorb(n, s.nodes[n].apply_membership(2, frozenset((0, 1)), frozenset(),
                                                1 << 60, 0))
    s.absorb(0, s.nodes[0].client_read(0, OP_READ_N0, 0))          # stalls, arms the timer
    strip.append(s.snap())                                         # 9: still blocked

    s.absorb(0, s.nodes[0].mlt_fire(0, _MLT))                      # replay with stored ts
    s.deliver(0, 1, MsgKind.INV)                                   # n1 ACKs, same ts
    s.deliver(1, 0, MsgKind.ACK)
    strip.append(s.snap())                                         # 10: replay committed
    s.deliver(0, 1, MsgKind.VAL)

    result = GoldenResult(ok=True, strip=strip, completions=s.completions)
    for i, (got, want) in enumerate(zip(strip, EXPECTED_STRIP)):
        if got != want:
            result.ok = False
            result.first_mismatch = (i, want, got)
            break
    if len(strip) != len(EXPECTED_STRIP):
        result.ok = False
        if result.first_mismatch is None:
            result.first_mismatch = (min(len(strip), len(EXPECTED_STRIP)), "length", "length")
    expected_completions = {OP_WRITE_N0: "ok", OP_WRITE_N2: "ok",
                            OP_READ_N1: "3", OP_READ_N0: "3"}
    if result.ok and s.completions != expected_completions:
        result.ok = False
        result.first_mismatch = (len(strip), expected_completions, dict(s.completions))
    return result
