"""Deterministic simulation and checking toolkit for invalidation-based replication.

Subpackages roughly follow the moving parts of the system:

- ``node``       per-replica protocol state machine (pure, event-driven)
- ``craq``       chain-replication baseline in the same simulator
- ``kvstore``    per-node replicated key store
- ``membership`` lease/epoch-based reliable membership oracle
- ``simnet``     seeded discrete-event network simulator with fault injection
- ``workload``   closed-loop client workload generation (uniform / zipfian)
- ``harness``    scenario runner producing metrics, histories and traces
- ``checker``    per-key linearizability checking of recorded histories
- ``explorer``   bounded exhaustive state-space exploration of small setups
- ``golden``     scripted concurrent-write/replay scenario with a frozen
                 step-by-step state table
"""

__version__ = "0.1.0"
