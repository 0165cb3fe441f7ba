from hypothesis import given, strategies as st

from hermes_sim.timestamps import EQUAL, GREATER, LESS, Timestamp, ts_compare


def test_same_version_higher_cid_wins():
    assert ts_compare(Timestamp(1, 3), Timestamp(1, 1)) == GREATER


def test_higher_version_wins_regardless_of_cid():
    assert ts_compare(Timestamp(2, 1), Timestamp(1, 3)) == GREATER


def test_equal_is_reflexive():
    assert ts_compare(Timestamp(1, 1), Timestamp(1, 1)) == EQUAL


def test_lower_side():
    assert ts_compare(Timestamp(1, 1), Timestamp(1, 2)) == LESS
    assert ts_compare(Timestamp(0, 9), Timestamp(1, 0)) == LESS


ts_strategy = st.builds(Timestamp, st.integers(0, 50), st.integers(0, 10))


@given(ts_strategy, ts_strategy)
def test_total_order_trichotomy(a, b):
    results = {ts_compare(a, b), -ts_compare(b, a)}
    assert len(results) == 1
    if a != b:
        assert ts_compare(a, b) in (LESS, GREATER)


@given(ts_strategy, ts_strategy, ts_strategy)
def test_order_is_transitive(a, b, c):
    if ts_compare(a, b) == LESS and ts_compare(b, c) == LESS:
        assert ts_compare(a, c) == LESS
