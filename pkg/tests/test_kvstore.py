import pytest

from hermes_sim.kvstore import KeyState, Store, UnknownKey
from hermes_sim.timestamps import Timestamp


def test_every_key_exists_valid_from_initialization():
    store = Store(10, b"\x00" * 8)
    for k in range(10):
        rec = store.get(k)
        assert rec.state is KeyState.VALID
        assert rec.ts == Timestamp(0, 0)
        assert rec.value == b"\x00" * 8


def test_apply_then_get_roundtrips():
    store = Store(4, b"\x00")
    store.apply(2, Timestamp(3, 1), b"abc", True, KeyState.INVALID)
    rec = store.get(2)
    assert (rec.ts, rec.value, rec.rmw_flag, rec.state) == \
        (Timestamp(3, 1), b"abc", True, KeyState.INVALID)


def test_unknown_key_rejected():
    store = Store(4, b"")
    with pytest.raises(UnknownKey):
        store.get(4)


def test_scan_chunking_terminates():
    store = Store(100, b"")
    chunk1, cursor = store.scan(0, 64)
    assert len(chunk1) == 64 and cursor == 64
    chunk2, cursor = store.scan(64, 64)
    assert len(chunk2) == 36 and cursor is None
    assert [k for k, _ in chunk1 + chunk2] == list(range(100))


def test_scan_past_end_is_empty():
    store = Store(4, b"")
    records, cursor = store.scan(4, 8)
    assert records == [] and cursor is None


def test_snapshot_lines_format():
    store = Store(2, b"\x01\x02")
    store.apply(1, Timestamp(5, 3), b"\xff", False, KeyState.VALID)
    lines = list(store.snapshot_lines())
    assert lines == ["0 0 0 0102", "1 5 3 ff"]
