"""Per-key linearizability checking for register histories with CAS/fetch-add.

Two engines share the verdict:

- a fast path that proposes a single candidate witness (commit-timestamp
  order when the run recorded timestamps, completion order otherwise) and
  validates it in one pass;
- a complete search in the Wing & Gong style: linearize one eligible
  operation at a time, memoizing (linearized-set, register-value) pairs so
  revisited configurations prune.  Sound and complete for this datatype.

Operations that never completed may be linearized or dropped; an operation
that reported ``aborted`` must linearize as a no-op.  A ``casfail`` is a
conditional no-op: the register must differ from the expected value at its
linearization point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .history import HistoryEvent, Op, collect_ops


class SearchBudgetExceeded(Exception):
    """The exhaustive fallback ran out of its state budget (distinct from a
    violation: the verdict is unknown)."""


@dataclass
class Verdict:
    ok: bool
    witness: Optional[list[int]] = None            # op ids in linearization order
    violation: Optional[list[HistoryEvent]] = None  # minimal violating prefix


DEFAULT_BUDGET = 10_000_000


# --------------------------------------------------------------- semantics

def _step(op: Op, value: int) -> Optional[int]:
    """Register value after linearizing op at ``value``; None if inconsistent."""
    if not op.completed:
        # Pending mutators take effect when applied; the caller decides
        # whether to apply them at all.
        if op.kind == "write":
            return op.args[0]
        if op.kind == "cas":
            exp, new = op.args
            return new if value == exp else None
        if op.kind == "fadd":
            return value + op.args[0]
        return None  # pending reads constrain nothing and are dropped
    r = op.result
    if op.kind == "read":
        return value if r == str(value) else None
    if r == "aborted":
        return value
    if op.kind == "write":
        return op.args[0]
    if op.kind == "cas":
        exp, new = op.args
        if r == "ok":
            return new if value == exp else None
        if r == "casfail":
            return value if value != exp else None
        return None
    if op.kind == "fadd":
        if r == str(value):
            return value + op.args[0]
        return None
    raise ValueError(f"unknown op kind {op.kind!r}")


def _preds_from_times(ops: Sequence[Op]) -> dict[int, frozenset[int]]:
    """Real-time precedence: j precedes i when j completed before i invoked."""
    out = {}
    for i, a in enumerate(ops):
        out[i] = frozenset(
            j for j, b in enumerate(ops)
            if j != i and b.complete_t is not None and b.complete_t < a.invoke_t)
    return out


# ------------------------------------------------------------------- search

def search_linearizable(ops: Sequence[Op], preds: dict[int, frozenset[int]],
                        init_value: int = 0,
                        budget: int = DEFAULT_BUDGET) -> tuple[bool, Optional[list[int]]]:
    """Complete decision over explicit precedence constraints.

    Returns (ok, witness-as-op-indices).  Pending reads must be filtered out
    by the caller (collect-based entry points do this).
    """
    must = frozenset(i for i, op in enumerate(ops) if op.completed)
    all_eligible = [i for i, op in enumerate(ops)
                    if op.completed or op.kind in ("write", "cas", "fadd")]
    visited: set[tuple[frozenset, int]] = set()
    path: list[int] = []
    # Each stack frame: (applied, value, candidate iterator)
    applied0: frozenset = frozenset()
    if must <= applied0:
        return True, []
    stack = [(applied0, init_value, iter(all_eligible))]
    visited.add((applied0, init_value))
    steps = 0
    while stack:
        applied, value, it = stack[-1]
        advanced = False
        for i in it:
            if i in applied or not (preds[i] <= applied):
                continue
            steps += 1
            if steps > budget:
                raise SearchBudgetExceeded(f"exceeded {budget} search steps")
            nv = _step(ops[i], value)
            if nv is None:
                continue
            na = applied | {i}
            key = (na, nv)
            if key in visited:
                continue
            visited.add(key)
            path.append(i)
            if must <= na:
                return True, list(path)
            stack.append((na, nv, iter(all_eligible)))
            advanced = True
            break
        if not advanced:
            stack.pop()
            if path:
                path.pop()
    return False, None


# ---------------------------------------------------------------- fast path

def _validate_witness(ops: Sequence[Op], order: list[int], init_value: int) -> bool:
    value = init_value
    for i in order:
        nv = _step(ops[i], value)
        if nv is None:
            return False
        value = nv
    applied = set(order)
    if any(op.completed and i not in applied for i, op in enumerate(ops)):
        return False
    # Real-time: nothing in the order may precede an op that completed before
    # it invoked.  suffix_min[k] = earliest completion at or after position k.
    INF = float("inf")
    suffix_min = [INF] * (len(order) + 1)
    for k in range(len(order) - 1, -1, -1):
        c = ops[order[k]].complete_t
        suffix_min[k] = min(suffix_min[k + 1], c if c is not None else INF)
    for k, i in enumerate(order):
        if ops[i].invoke_t > suffix_min[k + 1]:
            return False
    return True


def fast_witness(ops: Sequence[Op], ts_hints: Optional[dict[int, tuple]] = None,
                 init_value: int = 0) -> Optional[list[int]]:
    """Build and validate one candidate order; None if it doesn't check out."""
    completed = [i for i, op in enumerate(ops) if op.completed]
    if ts_hints is not None:
        keyed = []
        for i in completed:
            hint = ts_hints.get(ops[i].op_id)
            if hint is None:
                return None
            is_update = (ops[i].kind in ("write", "cas", "fadd")
                         and ops[i].result not in ("aborted", "casfail"))
            keyed.append(((hint[0], hint[1], 0 if is_update else 1,
                           ops[i].complete_t, ops[i].op_id), i))
        order = [i for _, i in sorted(keyed)]
    else:
        order = sorted(completed, key=lambda i: (ops[i].complete_t, ops[i].invoke_t,
                                                 ops[i].op_id))
    return order if _validate_witness(ops, order, init_value) else None


# -------------------------------------------------------------- entry point

def check_ops(ops: list[Op], ts_hints: Optional[dict[int, tuple]] = None,
              init_value: int = 0, budget: int = DEFAULT_BUDGET) -> tuple[bool, Optional[list[int]]]:
    ops = [op for op in ops if op.completed or op.kind != "read"]
    w = fast_witness(ops, ts_hints, init_value)
    if w is None and ts_hints is not None:
        w = fast_witness(ops, None, init_value)
    if w is not None:
        return True, [ops[i].op_id for i in w]
    preds = _preds_from_times(ops)
    ok, order = search_linearizable(ops, preds, init_value, budget)
    return ok, ([ops[i].op_id for i in order] if order is not None else None)


def check_key_history(events: list[HistoryEvent],
                      ts_hints: Optional[dict[int, tuple]] = None,
                      init_value: int = 0,
                      budget: int = DEFAULT_BUDGET) -> Verdict:
    """Sound and complete linearizability decision for one key's history."""
    ops = collect_ops(events)
    ok, witness = check_ops(ops, ts_hints, init_value, budget)
    if ok:
        return Verdict(ok=True, witness=witness)
    return Verdict(ok=False, violation=_minimal_prefix(events, ts_hints, init_value, budget))


def _minimal_prefix(events: list[HistoryEvent], ts_hints, init_value: int,
                    budget: int) -> list[HistoryEvent]:
    ordered = sorted(events, key=lambda e: (e.time, 0 if e.phase == "invoke" else 1, e.op_id))
    completes = [k for k, e in enumerate(ordered) if e.phase == "complete"]
    for k in completes:
        prefix = ordered[:k + 1]
        ok, _ = check_ops(collect_ops(prefix), ts_hints, init_value, budget)
        if not ok:
            return prefix
    return ordered
