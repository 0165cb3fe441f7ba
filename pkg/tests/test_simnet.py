import pytest

from hermes_sim.simnet import (
    Crash,
    Deliver,
    DropNext,
    LinkModel,
    LivelockGuard,
    Partition,
    Simnet,
    TimerFire,
)
from hermes_sim.timestamps import Timestamp
from hermes_sim.wire import Message, MsgKind


def msg(kind=MsgKind.INV, key=0):
    return Message(epoch=1, sender=0, kind=kind, key=key, ts=Timestamp(1, 0), value=b"v")


def drain(net, until=None):
    seen = []
    net.run(seen.append, until_us=until)
    return seen


def test_lossless_link_delivers_exactly_once():
    net = Simnet(1, LinkModel(base_delay_us=10))
    net.send(0, 1, msg())
    events = drain(net)
    assert len(events) == 1 and isinstance(events[0], Deliver)
    assert net.now == 10


def test_same_seed_same_trace():
    traces = []
    for _ in range(2):
        trace = []
        net = Simnet(42, LinkModel(base_delay_us=10, jitter_us=5, drop_prob=0.2,
                                   dup_prob=0.2), trace=trace)
        for i in range(200):
            net.send(i % 3, (i + 1) % 3, msg(key=i))
        drain(net)
        traces.append(trace)
    assert traces[0] == traces[1]


def test_different_seed_different_jitter():
    def deliveries(seed):
        net = Simnet(seed, LinkModel(base_delay_us=10, jitter_us=8))
        for i in range(50):
            net.send(0, 1, msg(key=i))
        out = []
        net.run(lambda e: out.append((net.now, e.msg.key)), until_us=None)
        return out
    assert deliveries(1) != deliveries(2)


def test_duplicate_probability_one_delivers_twice():
    net = Simnet(3, LinkModel(base_delay_us=10, dup_prob=1.0))
    net.send(0, 1, msg())
    assert len(drain(net)) == 2
    assert net.sent_by_kind["INV"] == 1  # one send, two deliveries


def test_drop_probability_one_delivers_nothing():
    net = Simnet(3, LinkModel(base_delay_us=10, drop_prob=1.0))
    net.send(0, 1, msg())
    assert drain(net) == []


def test_drop_next_swallows_exact_count():
    net = Simnet(1, LinkModel(base_delay_us=10))
    net.inject(DropNext(kind=MsgKind.VAL, count=2))
    for _ in range(3):
        net.send(0, 1, msg(kind=MsgKind.VAL))
    net.send(0, 1, msg(kind=MsgKind.INV))
    events = drain(net)
    kinds = sorted(e.msg.kind.name for e in events)
    assert kinds == ["INV", "VAL"]


def test_crashed_node_neither_sends_nor_receives():
    net = Simnet(1, LinkModel(base_delay_us=10))
    net.inject(Crash(node=1, at_us=5))
    net.send(0, 1, msg())           # in flight at crash time
    events = drain(net)
    assert all(isinstance(e, Deliver) is False for e in events if not hasattr(e, "msg"))
    assert not any(isinstance(e, Deliver) for e in events)
    net.send(1, 0, msg())           # crashed source produces nothing
    assert not any(isinstance(e, Deliver) for e in drain(net))


def test_partition_suppresses_cross_group_delivery():
    net = Simnet(1, LinkModel(base_delay_us=10))
    net.inject(Partition(groups=((0, 1, 2), (3, 4)), start_us=0, end_us=1000))
    net.send(0, 3, msg())
    net.send(0, 1, msg())
    net.send(3, 4, msg())
    events = [e for e in drain(net, until=500) if isinstance(e, Deliver)]
    assert {(e.src, e.dst) for e in events} == {(0, 1), (3, 4)}


def test_partition_heals():
    net = Simnet(1, LinkModel(base_delay_us=10))
    net.inject(Partition(groups=((0,), (1,)), start_us=0, end_us=50))
    net.run(lambda e: None, until_us=60)
    net.send(0, 1, msg())
    assert len([e for e in drain(net) if isinstance(e, Deliver)]) == 1


def test_overlapping_partitions_rejected():
    net = Simnet(1, LinkModel())
    net.inject(Partition(groups=((0,), (1,)), start_us=0, end_us=100))
    with pytest.raises(ValueError):
        net.inject(Partition(groups=((0, 1), ()), start_us=50, end_us=150))


def test_timer_rearm_invalidates_older_generation():
    net = Simnet(1, LinkModel(base_delay_us=10))
    net.arm_timer(0, 7, 100)
    net.arm_timer(0, 7, 200)     # re-arm: old gen must not fire
    fires = [e for e in drain(net) if isinstance(e, TimerFire)]
    assert len(fires) == 1
    assert net.now == 200


def test_timer_cancel():
    net = Simnet(1, LinkModel(base_delay_us=10))
    net.arm_timer(0, 7, 100)
    net.cancel_timer(0, 7)
    assert [e for e in drain(net) if isinstance(e, TimerFire)] == []


def test_virtual_time_is_monotone():
    net = Simnet(9, LinkModel(base_delay_us=10, jitter_us=10))
    for i in range(100):
        net.send(0, 1, msg(key=i))
    times = []
    net.run(lambda e: times.append(net.now))
    assert times == sorted(times)
    with pytest.raises(ValueError):
        net.schedule(net.now - 1, "nope")


def test_livelock_guard_trips_without_progress():
    net = Simnet(1, LinkModel(base_delay_us=10))

    def respawn(event):
        net.after(1, "again")

    net.after(1, "again")
    with pytest.raises(LivelockGuard):
        net.run(respawn, stall_limit=10_000)
