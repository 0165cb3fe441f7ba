import pytest

from hermes_sim.checker import (
    SearchBudgetExceeded,
    check_key_history,
    check_ops,
    fast_witness,
    search_linearizable,
    _preds_from_times,
)
from hermes_sim.history import HistoryEvent, collect_ops, dump_lines, parse_line


def ev(time, client, op_id, phase, kind, detail, key=0):
    return HistoryEvent(time, client, op_id, key, phase, kind, detail)


def h(*events):
    return list(events)


# ------------------------------------------------------------ basic verdicts

def test_empty_history_is_linearizable():
    assert check_key_history([]).ok


def test_single_client_sequential_ops():
    events = h(
        ev(0, 0, 0, "invoke", "write", "5"), ev(10, 0, 0, "complete", "write", "ok"),
        ev(20, 0, 1, "invoke", "read", "-"), ev(30, 0, 1, "complete", "read", "5"),
        ev(40, 0, 2, "invoke", "write", "6"), ev(50, 0, 2, "complete", "write", "ok"),
        ev(60, 0, 3, "invoke", "read", "-"), ev(70, 0, 3, "complete", "read", "6"),
    )
    v = check_key_history(events)
    assert v.ok and v.witness == [0, 1, 2, 3]


def test_concurrent_writes_ordered_by_later_reads():
    # Two concurrent writes (1 and 3); every read afterwards returns 3, so
    # the write of 1 must be linearized first even though it completed last.
    events = h(
        ev(0, 1, 0, "invoke", "write", "1"),
        ev(1, 3, 1, "invoke", "write", "3"),
        ev(5, 2, 2, "invoke", "read", "-"),
        ev(12, 3, 1, "complete", "write", "ok"),
        ev(14, 2, 2, "complete", "read", "3"),
        ev(20, 1, 0, "complete", "write", "ok"),
        ev(30, 2, 3, "invoke", "read", "-"),
        ev(31, 2, 3, "complete", "read", "3"),
    )
    v = check_key_history(events)
    assert v.ok
    assert v.witness.index(0) < v.witness.index(1)


def test_read_of_overwritten_value_after_overwrite_read_is_violation():
    events = h(
        ev(0, 0, 0, "invoke", "write", "1"), ev(5, 0, 0, "complete", "write", "ok"),
        ev(10, 1, 1, "invoke", "write", "2"), ev(15, 1, 1, "complete", "write", "ok"),
        ev(20, 2, 2, "invoke", "read", "-"), ev(25, 2, 2, "complete", "read", "2"),
        ev(30, 2, 3, "invoke", "read", "-"), ev(35, 2, 3, "complete", "read", "1"),
    )
    v = check_key_history(events)
    assert not v.ok
    assert v.violation[-1].op_id == 3


def test_read_from_the_future_is_flagged_with_minimal_prefix():
    events = h(
        ev(0, 0, 0, "invoke", "read", "-"),
        ev(5, 0, 0, "complete", "read", "7"),      # 7 not yet written
        ev(10, 1, 1, "invoke", "write", "7"),
        ev(20, 1, 1, "complete", "write", "ok"),
        ev(30, 2, 2, "invoke", "read", "-"),
        ev(40, 2, 2, "complete", "read", "7"),
    )
    v = check_key_history(events)
    assert not v.ok
    # The minimal prefix stops at the offending read.
    assert v.violation[-1].phase == "complete" and v.violation[-1].op_id == 0


def test_stale_read_violation():
    events = h(
        ev(0, 0, 0, "invoke", "write", "9"), ev(5, 0, 0, "complete", "write", "ok"),
        ev(10, 1, 1, "invoke", "read", "-"), ev(15, 1, 1, "complete", "read", "0"),
    )
    assert not check_key_history(events).ok


# -------------------------------------------------------------- rmw semantics

def test_cas_success_requires_expected_value():
    good = h(
        ev(0, 0, 0, "invoke", "cas", "0:7"), ev(5, 0, 0, "complete", "cas", "ok"),
        ev(10, 1, 1, "invoke", "read", "-"), ev(15, 1, 1, "complete", "read", "7"),
    )
    assert check_key_history(good).ok
    bad = h(
        ev(0, 0, 0, "invoke", "write", "5"), ev(5, 0, 0, "complete", "write", "ok"),
        ev(10, 1, 1, "invoke", "cas", "0:7"), ev(15, 1, 1, "complete", "cas", "ok"),
    )
    assert not check_key_history(bad).ok


def test_casfail_requires_mismatched_value():
    good = h(
        ev(0, 0, 0, "invoke", "write", "5"), ev(5, 0, 0, "complete", "write", "ok"),
        ev(10, 1, 1, "invoke", "cas", "0:7"), ev(15, 1, 1, "complete", "cas", "casfail"),
    )
    assert check_key_history(good).ok
    bad = h(
        ev(0, 0, 0, "invoke", "cas", "0:7"), ev(5, 0, 0, "complete", "cas", "casfail"),
    )
    # Value is 0 throughout, so the expectation could not have failed.
    assert not check_key_history(bad).ok


def test_aborted_rmw_must_not_take_effect():
    ok = h(
        ev(0, 0, 0, "invoke", "cas", "0:7"), ev(5, 0, 0, "complete", "cas", "aborted"),
        ev(10, 1, 1, "invoke", "read", "-"), ev(15, 1, 1, "complete", "read", "0"),
    )
    assert check_key_history(ok).ok
    leaked = h(
        ev(0, 0, 0, "invoke", "cas", "0:7"), ev(5, 0, 0, "complete", "cas", "aborted"),
        ev(10, 1, 1, "invoke", "read", "-"), ev(15, 1, 1, "complete", "read", "7"),
    )
    assert not check_key_history(leaked).ok


def test_fetch_add_chain():
    events = h(
        ev(0, 0, 0, "invoke", "fadd", "3"), ev(5, 0, 0, "complete", "fadd", "0"),
        ev(10, 1, 1, "invoke", "fadd", "4"), ev(15, 1, 1, "complete", "fadd", "3"),
        ev(20, 2, 2, "invoke", "read", "-"), ev(25, 2, 2, "complete", "read", "7"),
    )
    assert check_key_history(events).ok
    wrong_old = h(
        ev(0, 0, 0, "invoke", "fadd", "3"), ev(5, 0, 0, "complete", "fadd", "1"),
    )
    assert not check_key_history(wrong_old).ok


# ---------------------------------------------------------------- pending ops

def test_pending_write_may_take_effect():
    events = h(
        ev(0, 0, 0, "invoke", "write", "4"),          # never completes
        ev(10, 1, 1, "invoke", "read", "-"), ev(15, 1, 1, "complete", "read", "4"),
    )
    assert check_key_history(events).ok


def test_pending_write_may_be_dropped():
    events = h(
        ev(0, 0, 0, "invoke", "write", "4"),          # never completes
        ev(10, 1, 1, "invoke", "read", "-"), ev(15, 1, 1, "complete", "read", "0"),
    )
    assert check_key_history(events).ok


def test_pending_write_cannot_take_effect_before_invocation():
    events = h(
        ev(0, 1, 1, "invoke", "read", "-"), ev(5, 1, 1, "complete", "read", "4"),
        ev(10, 0, 0, "invoke", "write", "4"),         # invoked after the read completed
    )
    assert not check_key_history(events).ok


# ------------------------------------------------------- fast path & fallback

def test_hinted_fast_path_accepts_commit_order():
    events = h(
        ev(0, 1, 0, "invoke", "write", "1"),
        ev(1, 3, 1, "invoke", "write", "3"),
        ev(12, 3, 1, "complete", "write", "ok"),
        ev(20, 1, 0, "complete", "write", "ok"),
        ev(30, 2, 2, "invoke", "read", "-"), ev(31, 2, 2, "complete", "read", "3"),
    )
    hints = {0: (2, 1), 1: (2, 3), 2: (2, 3)}
    ops = collect_ops(events)
    w = fast_witness(ops, hints)
    assert w is not None
    assert [ops[i].op_id for i in w] == [0, 1, 2]


def test_fast_path_never_accepts_what_search_rejects():
    import random
    rng = random.Random(1234)
    disagreements = 0
    for _ in range(400):
        events = _random_history(rng)
        ops = collect_ops(events)
        w = fast_witness(ops)
        ok, _ = check_ops(ops)
        if w is not None:
            assert ok, f"fast path accepted a violating history: {events}"
    assert disagreements == 0


def _random_history(rng, max_ops=5):
    events = []
    t = 0
    value_pool = [0, 1, 2]
    op_id = 0
    for client in range(rng.randint(1, 3)):
        for _ in range(rng.randint(1, max_ops // 2 + 1)):
            t0 = rng.randint(0, 30)
            t1 = t0 + rng.randint(1, 20)
            kind = rng.choice(["read", "write", "cas"])
            if kind == "read":
                events.append(ev(t0, client, op_id, "invoke", "read", "-"))
                events.append(ev(t1, client, op_id, "complete", "read",
                                 str(rng.choice(value_pool))))
            elif kind == "write":
                events.append(ev(t0, client, op_id, "invoke", "write",
                                 str(rng.choice(value_pool))))
                if rng.random() < 0.9:
                    events.append(ev(t1, client, op_id, "complete", "write", "ok"))
            else:
                exp, new = rng.choice(value_pool), rng.choice(value_pool)
                events.append(ev(t0, client, op_id, "invoke", "cas", f"{exp}:{new}"))
                if rng.random() < 0.9:
                    events.append(ev(t1, client, op_id, "complete", "cas",
                                     rng.choice(["ok", "casfail", "aborted"])))
            op_id += 1
    return events


def test_search_budget_exceeded_is_distinct():
    events = []
    for i in range(14):
        events.append(ev(0, i, i, "invoke", "write", str(i)))
        events.append(ev(1000, i, i, "complete", "write", "ok"))
    events.append(ev(2000, 99, 99, "invoke", "read", "-"))
    events.append(ev(2001, 99, 99, "complete", "read", "999"))  # unsatisfiable
    with pytest.raises(SearchBudgetExceeded):
        check_key_history(events, budget=50)


# -------------------------------------------------------------- file format

def test_history_line_roundtrip():
    e = ev(123, 4, 56, "invoke", "cas", "7:9", key=3)
    assert parse_line(e.line()) == e
    assert parse_line(dump_lines([e]).strip()) == e


def test_malformed_history_rejected():
    with pytest.raises(ValueError):
        parse_line("1\t2\t3\tnot-enough")
    with pytest.raises(ValueError):
        collect_ops([ev(5, 0, 0, "complete", "write", "ok")])
    with pytest.raises(ValueError):
        collect_ops([ev(0, 0, 0, "invoke", "read", "-"),
                     ev(1, 0, 0, "invoke", "read", "-")])
