"""Run metrics: per-class counts, latency percentiles, message accounting.

The CSV schema is fixed and versioned through the leading ``schema`` column
(currently ``sim.v1``) so downstream figure scripts stay stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

CSV_SCHEMA = "sim.v1"
CSV_HEADER = ("schema,scenario,protocol,nodes,write_ratio,distribution,"
              "ops_committed,aborts,read_local_fraction,"
              "lat_p50_read,lat_p99_read,lat_p50_write,lat_p99_write,"
              "msgs_total,sim_duration")

# Message kinds that count as replication-protocol traffic (heartbeats,
# leases, membership and sync traffic are accounted separately).
PROTOCOL_MSG_KINDS = ("INV", "ACK", "VAL", "CRAQ_WRITE", "CRAQ_ACK",
                      "CRAQ_VERQ", "CRAQ_VERR")


def percentile(sorted_vals: list[int], p: float) -> int:
    """Nearest-rank percentile over pre-sorted integers (0 when empty)."""
    if not sorted_vals:
        return 0
    idx = max(0, min(len(sorted_vals) - 1, int(p * len(sorted_vals) + 0.5) - 1))
    return sorted_vals[idx]


@dataclass
class RunMetrics:
    scenario: str
    protocol: str
    nodes: int
    write_ratio: float
    rmw_ratio: float
    distribution: str
    sim_duration: int = 0

    invoked: dict[str, int] = field(default_factory=dict)       # per op class
    completed: dict[str, int] = field(default_factory=dict)     # per op class, ok results
    aborts: int = 0
    cas_failures: int = 0
    abandoned: int = 0                                          # invocations lost to crashes/removal

    reads_total: int = 0
    reads_local: int = 0
    reads_redirected: int = 0                                   # chain tail queries
    local_reads_with_messages: int = 0                          # must stay zero

    latencies: dict[str, list[int]] = field(default_factory=dict)
    msgs: dict[str, int] = field(default_factory=dict)
    per_node_handled: dict[int, int] = field(default_factory=dict)

    trans_commits: int = 0
    replays: int = 0

    # committed ops per interval: list of (interval_start_us, class -> count)
    series_interval_us: int = 10_000
    series: dict[int, dict[str, int]] = field(default_factory=dict)

    # -------------------------------------------------------------- recording

    def record_invoke(self, op_class: str) -> None:
        self.invoked[op_class] = self.invoked.get(op_class, 0) + 1

    def record_completion(self, op_class: str, latency_us: int, now: int) -> None:
        self.completed[op_class] = self.completed.get(op_class, 0) + 1
        self.latencies.setdefault(op_class, []).append(latency_us)
        bucket = (now // self.series_interval_us) * self.series_interval_us
        per = self.series.setdefault(bucket, {})
        per[op_class] = per.get(op_class, 0) + 1

    # ------------------------------------------------------------- accounting

    def reconcile(self) -> bool:
        """invocations = completions + aborts + cas-failures + pending."""
        total_inv = sum(self.invoked.values())
        total_done = sum(self.completed.values()) + self.aborts + self.cas_failures
        return total_done + self.pending_at_end() == total_inv

    def pending_at_end(self) -> int:
        total_inv = sum(self.invoked.values())
        total_done = sum(self.completed.values()) + self.aborts + self.cas_failures
        return total_inv - total_done

    def read_local_fraction(self) -> float:
        return self.reads_local / self.reads_total if self.reads_total else 1.0

    def msgs_total(self) -> int:
        return sum(v for k, v in self.msgs.items() if k in PROTOCOL_MSG_KINDS)

    def latency_percentiles(self, op_class: str) -> tuple[int, int]:
        vals = sorted(self.latencies.get(op_class, []))
        return percentile(vals, 0.50), percentile(vals, 0.99)

    def histogram(self, op_class: str, bucket_us: int = 10) -> dict[int, int]:
        out: dict[int, int] = {}
        for v in self.latencies.get(op_class, []):
            b = (v // bucket_us) * bucket_us
            out[b] = out.get(b, 0) + 1
        return out

    # ------------------------------------------------------------------- csv

    def csv_row(self) -> str:
        p50_r, p99_r = self.latency_percentiles("read")
        p50_w, p99_w = self.latency_percentiles("write")
        ops_committed = sum(self.completed.values()) + self.cas_failures
        return ",".join(str(x) for x in (
            CSV_SCHEMA, self.scenario, self.protocol, self.nodes,
            f"{self.write_ratio:g}", self.distribution,
            ops_committed, self.aborts, f"{self.read_local_fraction():.6f}",
            p50_r, p99_r, p50_w, p99_w, self.msgs_total(), self.sim_duration,
        ))
