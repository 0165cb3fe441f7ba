from hermes_sim.craq import ChainConfig, CraqNode
from hermes_sim.harness import run_scenario
from hermes_sim.node import ResultKind, encode_value
from hermes_sim.scenario import Scenario
from hermes_sim.simnet import LinkModel
from hermes_sim.wire import MsgKind


class Chain:
    def __init__(self, n, keys=2):
        cfg = ChainConfig(chain=tuple(range(n)), value_size=8)
        self.nodes = [CraqNode(i, cfg, keys, encode_value(0, 8)) for i in range(n)]
        self.pool = []
        self.completions = {}

    def absorb(self, src, eff):
        for dst, msg in eff.sends:
            self.pool.append((src, dst, msg))
        for op, res in eff.completions:
            self.completions[op] = res

    def step(self):
        src, dst, msg = self.pool.pop(0)
        self.absorb(dst, self.nodes[dst].on_message(msg, 0))
        return src, dst, msg

    def drain(self):
        hops = []
        while self.pool:
            hops.append(self.step())
        return hops

    def v(self, n):
        return encode_value(n, 8)


def test_write_traverses_down_then_acks_up():
    c = Chain(5)
    c.absorb(0, c.nodes[0].client_write(0, c.v(9), 1, 0))
    hops = c.drain()
    downstream = [(s, d) for s, d, m in hops if m.kind is MsgKind.CRAQ_WRITE]
    upstream = [(s, d) for s, d, m in hops if m.kind is MsgKind.CRAQ_ACK]
    assert downstream == [(0, 1), (1, 2), (2, 3), (3, 4)]
    assert upstream == [(4, 3), (3, 2), (2, 1), (1, 0)]
    assert c.completions[1].kind is ResultKind.WRITE_OK
    assert all(node.records[0].value == c.v(9) for node in c.nodes)
    assert all(not node.records[0].pending for node in c.nodes)


def test_single_node_chain_commits_locally():
    c = Chain(1)
    c.absorb(0, c.nodes[0].client_write(0, c.v(5), 1, 0))
    assert c.pool == []
    assert c.completions[1].kind is ResultKind.WRITE_OK
    assert c.nodes[0].records[0].value == c.v(5)


def test_clean_read_is_local_everywhere():
    c = Chain(5)
    c.absorb(0, c.nodes[0].client_write(0, c.v(9), 1, 0))
    c.drain()
    for n in range(5):
        eff = c.nodes[n].client_read(0, 10 + n, 0)
        assert eff.sends == []
        ((_, res),) = eff.completions
        assert res.value == c.v(9)


def test_dirty_read_at_non_tail_queries_tail():
    c = Chain(5)
    c.absorb(0, c.nodes[0].client_write(0, c.v(9), 1, 0))
    # Write has reached node 1 but no ACK yet: dirty there.
    c.step()
    eff = c.nodes[1].client_read(0, 42, 0)
    ((dst, msg),) = eff.sends
    assert dst == 4 and msg.kind is MsgKind.CRAQ_VERQ
    c.absorb(1, eff)
    c.drain()
    # Tail had not seen the write when queried: the read returns version 0.
    assert c.completions[42].value == c.v(0)
    assert c.completions[1].kind is ResultKind.WRITE_OK


def test_dirty_read_after_tail_commit_returns_new_value():
    c = Chain(3)
    c.absorb(0, c.nodes[0].client_write(0, c.v(9), 1, 0))
    c.step()  # 0 -> 1
    c.step()  # 1 -> 2 (tail commits)
    eff = c.nodes[1].client_read(0, 42, 0)
    assert [d for d, m in eff.sends] == [2]
    c.absorb(1, eff)
    c.drain()
    assert c.completions[42].value == c.v(9)


def test_tail_reads_always_local():
    c = Chain(3)
    c.absorb(0, c.nodes[0].client_write(0, c.v(9), 1, 0))
    c.step()
    eff = c.nodes[2].client_read(0, 42, 0)
    assert eff.sends == []


def test_pipelined_writes_commit_in_chain_order():
    c = Chain(3)
    c.absorb(0, c.nodes[0].client_write(0, c.v(1), 1, 0))
    c.absorb(0, c.nodes[0].client_write(0, c.v(2), 2, 0))
    assert [v for v, _ in c.nodes[0].records[0].pending] == [1, 2]
    c.drain()
    assert c.completions[1].ts.version == 1
    assert c.completions[2].ts.version == 2
    assert all(node.records[0].value == c.v(2) for node in c.nodes)


def test_craq_write_latency_is_2n_minus_2_hops():
    sc = Scenario(name="craq-lat", protocol="craq", nodes=5, keys=10,
                  write_ratio=1.0, distribution="uniform", duration_us=5_000,
                  seed=1, clients=1, think_us=1,
                  link=LinkModel(base_delay_us=10, jitter_us=0))
    r = run_scenario(sc)
    p50, p99 = r.metrics.latency_percentiles("write")
    assert p50 == p99 == 2 * (5 - 1) * 10
