"""Command-line front end.

Subcommands:
  run <config>       simulate one scenario; optionally emit csv/history/trace
  check <history>    linearizability-check a recorded history file
  explore <a|b|c|d | config>   bounded exhaustive exploration
  golden             run the scripted concurrent-write/replay scenario
  sweep <config> --param name=v1,v2,...   one csv row per parameter value

Exit status is nonzero on any check failure; failures also print one
machine-readable line on stderr (``error: <code>: <message>``).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import checker, history as history_mod
from .explorer import builtin_config, explore
from .golden import run_golden
from .harness import run_scenario
from .metrics import CSV_HEADER
from .scenario import ScenarioError, load_scenario, parse_time_us


def _err(code: str, msg: str) -> None:
    print(f"error: {code}: {msg}", file=sys.stderr)


def _seed_from_env(default: int | None) -> int | None:
    if default is not None:
        return default
    env = os.environ.get("HERMES_SIM_SEED")
    return int(env) if env else None


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(text)


def cmd_run(args) -> int:
    try:
        sc = load_scenario(args.config)
    except ScenarioError as e:
        _err("config", str(e))
        return 2
    seed = _seed_from_env(args.seed)
    if seed is not None:
        sc.seed = seed
    want_trace = args.trace is not None
    result = run_scenario(sc, record_trace=want_trace)
    csv_text = CSV_HEADER + "\n" + result.csv_row() + "\n"
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    if args.csv:
        _write(os.path.join(out_dir, args.csv), csv_text)
    if args.history:
        _write(os.path.join(out_dir, args.history), history_mod.dump_lines(result.history))
    if args.trace:
        _write(os.path.join(out_dir, args.trace), "".join(l + "\n" for l in result.trace))
    print(csv_text, end="")
    if not result.metrics.reconcile():
        _err("accounting", "op counters do not reconcile")
        return 1
    return 0


def cmd_check(args) -> int:
    try:
        events = history_mod.load(args.history)
    except (OSError, ValueError) as e:
        _err("history", str(e))
        return 2
    bad = 0
    for key, evs in sorted(history_mod.by_key(events).items()):
        try:
            verdict = checker.check_key_history(evs, budget=args.budget)
        except checker.SearchBudgetExceeded as e:
            _err("budget", f"key {key}: {e}")
            return 3
        if not verdict.ok:
            bad += 1
            _err("violation", f"key {key} is not linearizable")
            print(f"key {key}: minimal violating prefix:")
            for e in verdict.violation:
                print("  " + e.line())
    if bad:
        return 1
    print(f"ok: {len(history_mod.by_key(events))} key histories linearizable")
    return 0


def cmd_explore(args) -> int:
    name = args.config
    if name in ("a", "b", "c", "d"):
        cfg = builtin_config(name)
    else:
        _err("config", "explore takes one of the builtin scenarios: a, b, c, d")
        return 2
    report = explore(cfg)
    status = "complete" if report.complete else "partial (budget hit)"
    print(f"explored {report.states} states, {report.transitions} transitions, "
          f"{report.terminals} terminal states [{status}]")
    for v in report.violations:
        print(f"  violation: {v}")
    if report.violations:
        _err("violation", f"{len(report.violations)} safety violations")
        return 1
    if not report.complete:
        _err("budget", "state budget exceeded before full coverage")
        return 3
    return 0


def cmd_golden(args) -> int:
    result = run_golden()
    print(result.table())
    if result.ok:
        print("golden trace: ok")
        return 0
    step, want, got = result.first_mismatch
    _err("golden", f"step {step}: expected {want}, got {got}")
    return 1


def cmd_sweep(args) -> int:
    try:
        base = load_scenario(args.config)
    except ScenarioError as e:
        _err("config", str(e))
        return 2
    if "=" not in args.param:
        _err("param", "expected --param name=v1,v2,...")
        return 2
    pname, values = args.param.split("=", 1)
    rows = [CSV_HEADER]
    for raw in values.split(","):
        sc = replace(base)
        try:
            if pname in ("write_ratio", "rmw_ratio", "zipf_theta"):
                setattr(sc, pname, float(raw))
            elif pname in ("nodes", "keys", "clients", "seed"):
                setattr(sc, pname, int(raw))
            elif pname == "duration":
                sc.duration_us = parse_time_us(raw)
            else:
                _err("param", f"unsupported sweep parameter {pname!r}")
                return 2
            sc.name = f"{base.name}[{pname}={raw}]"
            sc.validate()
        except (ScenarioError, ValueError) as e:
            _err("param", str(e))
            return 2
        result = run_scenario(sc, record_trace=False)
        rows.append(result.csv_row())
    text = "\n".join(rows) + "\n"
    if args.csv:
        _write(args.csv, text)
    print(text, end="")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="hermes-sim")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out-dir", default=None)
    p_run.add_argument("--csv", default=None)
    p_run.add_argument("--history", default=None)
    p_run.add_argument("--trace", default=None)
    p_run.set_defaults(fn=cmd_run)

    p_check = sub.add_parser("check", help="check a history file")
    p_check.add_argument("history")
    p_check.add_argument("--budget", type=int, default=checker.DEFAULT_BUDGET)
    p_check.set_defaults(fn=cmd_check)

    p_exp = sub.add_parser("explore", help="bounded exhaustive exploration")
    p_exp.add_argument("config", help="builtin scenario: a, b, c or d")
    p_exp.set_defaults(fn=cmd_explore)

    p_gold = sub.add_parser("golden", help="scripted replay scenario")
    p_gold.set_defaults(fn=cmd_golden)

    p_sweep = sub.add_parser("sweep", help="sweep one scenario parameter")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--csv", default=None)
    p_sweep.set_defaults(fn=cmd_sweep)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
