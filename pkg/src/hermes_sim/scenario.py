"""Scenario configuration: a flat key=value format with section headers.

Times accept a unit suffix (``10us``, ``150ms``, ``2s``); bare integers are
microseconds.  See scenarios/*.cfg for examples.  Validation errors carry the
offending section/field.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field as dc_field
from typing import Optional

from .simnet import Crash, DropNext, LinkModel, Partition
from .wire import MsgKind


class ScenarioError(ValueError):
    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


def parse_time_us(text: str) -> int:
    t = text.strip().lower()
    for suffix, mult in (("us", 1), ("ms", 1000), ("s", 1000_000)):
        if t.endswith(suffix):
            return int(float(t[:-len(suffix)]) * mult)
    return int(t)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class JoinAt:
    node: int
    at_us: int


@dataclass(frozen=True)
class SuspectAt:
    node: int
    at_us: int


@dataclass
class Scenario:
    name: str = "scenario"
    protocol: str = "hermes"
    nodes: int = 5
    keys: int = 100
    value_size: int = 32
    write_ratio: float = 0.05
    rmw_ratio: float = 0.0
    distribution: str = "uniform"
    zipf_theta: float = 0.99
    duration_us: int = 100_000
    seed: int = 1
    clients: int = 5
    think_us: int = 1
    # How long a client waits on a silent (crashed/removed) node before the
    # harness re-routes or abandons the op.
    retry_us: int = 20_000

    link: LinkModel = dc_field(default_factory=LinkModel)

    # Protocol switches.
    skip_trans_val: bool = True
    virtual_ids: bool = False
    broadcast_acks: bool = False
    virtual_id_sets: tuple[tuple[int, ...], ...] = ()
    mlt_us: Optional[int] = None        # default: 10x one-way delay upper bound

    # Membership service.
    lease_us: int = 50_000
    rm_tick_us: int = 10_000
    miss_ticks: int = 3
    stagger_us: int = 0
    auto_rejoin: bool = True
    suspect_on_crash: bool = True
    sync_chunk: int = 64

    faults: tuple = ()
    series_interval_us: int = 10_000

    # ------------------------------------------------------------------ rules

    def effective_mlt_us(self) -> int:
        if self.mlt_us is not None:
            return self.mlt_us
        return 10 * (self.link.base_delay_us + self.link.jitter_us)

    def validate(self) -> None:
        if self.protocol not in ("hermes", "craq"):
            raise ScenarioError("scenario.protocol", f"unknown protocol {self.protocol!r}")
        if self.nodes < 1:
            raise ScenarioError("scenario.nodes", "need at least one node")
        if self.keys < 1:
            raise ScenarioError("scenario.keys", "need at least one key")
        if not (0.0 <= self.write_ratio <= 1.0):
            raise ScenarioError("scenario.write_ratio", "must lie in [0, 1]")
        if not (0.0 <= self.rmw_ratio <= 1.0):
            raise ScenarioError("scenario.rmw_ratio", "must lie in [0, 1]")
        if self.write_ratio + self.rmw_ratio > 1.0:
            raise ScenarioError("scenario.write_ratio", "write_ratio + rmw_ratio exceeds 1")
        if self.distribution not in ("uniform", "zipfian"):
            raise ScenarioError("scenario.distribution", f"unknown {self.distribution!r}")
        if self.distribution == "zipfian" and self.zipf_theta <= 0:
            raise ScenarioError("scenario.zipf_theta", "zipfian exponent must be positive")
        if self.value_size < 8:
            raise ScenarioError("scenario.value_size", "values need at least 8 bytes")
        try:
            self.link.validate()
        except ValueError as e:
            raise ScenarioError("links", str(e)) from None
        if self.virtual_ids:
            if len(self.virtual_id_sets) != self.nodes:
                raise ScenarioError("optimizations.virtual_id_sets",
                                    "need one virtual id set per node")
            seen: set[int] = set()
            for ids in self.virtual_id_sets:
                if not ids:
                    raise ScenarioError("optimizations.virtual_id_sets", "empty id set")
                overlap = seen & set(ids)
                if overlap:
                    raise ScenarioError("optimizations.virtual_id_sets",
                                        f"virtual ids assigned twice: {sorted(overlap)}")
                seen |= set(ids)
        if self.protocol == "craq" and self.rmw_ratio > 0:
            raise ScenarioError("scenario.rmw_ratio", "chain baseline serves reads/writes only")

    def distribution_label(self) -> str:
        if self.distribution == "zipfian":
            return f"zipfian:{self.zipf_theta:g}"
        return "uniform"


def _fault_from_string(label: str, text: str):
    parts = text.split()
    if not parts:
        raise ScenarioError(f"faults.{label}", "empty fault spec")
    kind, kv = parts[0], {}
    for item in parts[1:]:
        if "=" not in item:
            raise ScenarioError(f"faults.{label}", f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        kv[k] = v
    try:
        if kind == "crash":
            return Crash(node=int(kv["node"]), at_us=parse_time_us(kv["at"]))
        if kind == "partition":
            groups = tuple(tuple(int(n) for n in grp.split(",") if n != "")
                           for grp in kv["groups"].split("|"))
            return Partition(groups=groups, start_us=parse_time_us(kv["from"]),
                             end_us=parse_time_us(kv["to"]))
        if kind == "drop":
            return DropNext(
                kind=MsgKind[kv["kind"]] if "kind" in kv else None,
                src=int(kv["src"]) if "src" in kv else None,
                dst=int(kv["dst"]) if "dst" in kv else None,
                key=int(kv["key"]) if "key" in kv else None,
                count=int(kv.get("count", 1)))
        if kind == "suspect":
            return SuspectAt(node=int(kv["node"]), at_us=parse_time_us(kv["at"]))
        if kind == "join":
            return JoinAt(node=int(kv["node"]), at_us=parse_time_us(kv["at"]))
    except KeyError as e:
        raise ScenarioError(f"faults.{label}", f"missing field {e.args[0]}") from None
    except ValueError as e:
        raise ScenarioError(f"faults.{label}", str(e)) from None
    raise ScenarioError(f"faults.{label}", f"unknown fault kind {kind!r}")


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    sc = Scenario(name=name)

    def grab(section: str, key: str, conv, attr: str) -> None:
        if cp.has_option(section, key):
            raw = cp.get(section, key)
            try:
                setattr(sc, attr, conv(raw))
            except (ValueError, TypeError) as e:
                raise ScenarioError(f"{section}.{key}", f"{e}") from None

    grab("scenario", "name", str, "name")
    grab("scenario", "protocol", str, "protocol")
    grab("scenario", "nodes", int, "nodes")
    grab("scenario", "keys", int, "keys")
    grab("scenario", "value_size", int, "value_size")
    grab("scenario", "write_ratio", float, "write_ratio")
    grab("scenario", "rmw_ratio", float, "rmw_ratio")
    grab("scenario", "distribution", str, "distribution")
    grab("scenario", "zipf_theta", float, "zipf_theta")
    grab("scenario", "duration", parse_time_us, "duration_us")
    grab("scenario", "seed", int, "seed")
    grab("scenario", "clients", int, "clients")
    grab("scenario", "think", parse_time_us, "think_us")
    grab("scenario", "retry", parse_time_us, "retry_us")
    grab("scenario", "series_interval", parse_time_us, "series_interval_us")

    link = {}
    if cp.has_section("links"):
        for key, attr, conv in (("base_delay", "base_delay_us", parse_time_us),
                                ("jitter", "jitter_us", parse_time_us),
                                ("drop", "drop_prob", float),
                                ("dup", "dup_prob", float)):
            if cp.has_option("links", key):
                try:
                    link[attr] = conv(cp.get("links", key))
                except ValueError as e:
                    raise ScenarioError(f"links.{key}", str(e)) from None
    sc.link = LinkModel(**link)

    grab("optimizations", "skip_trans_val", _parse_bool, "skip_trans_val")
    grab("optimizations", "virtual_ids", _parse_bool, "virtual_ids")
    grab("optimizations", "broadcast_acks", _parse_bool, "broadcast_acks")
    if cp.has_option("optimizations", "virtual_id_sets"):
        raw = cp.get("optimizations", "virtual_id_sets")
        sc.virtual_id_sets = tuple(
            tuple(int(x) for x in grp.split(",") if x != "")
            for grp in raw.split("|"))
    if cp.has_option("scenario", "mlt"):
        sc.mlt_us = parse_time_us(cp.get("scenario", "mlt"))

    grab("membership", "lease", parse_time_us, "lease_us")
    grab("membership", "tick", parse_time_us, "rm_tick_us")
    grab("membership", "miss_ticks", int, "miss_ticks")
    grab("membership", "stagger", parse_time_us, "stagger_us")
    grab("membership", "auto_rejoin", _parse_bool, "auto_rejoin")
    grab("membership", "suspect_on_crash", _parse_bool, "suspect_on_crash")
    grab("membership", "sync_chunk", int, "sync_chunk")

    if cp.has_section("faults"):
        sc.faults = tuple(_fault_from_string(label, cp.get("faults", label))
                          for label in cp.options("faults"))

    sc.validate()
    return sc


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    name = path.rsplit("/", 1)[-1]
    if name.endswith(".cfg"):
        name = name[:-4]
    return parse_scenario(text, name=name)
