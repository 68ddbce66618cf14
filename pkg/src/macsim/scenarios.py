"""Scenario descriptions, presets and the runners behind the CLI.

A scenario is plain data (JSON-serialisable).  ``kind="runs"`` executes one
simulation per (topology, seed) pair and checks it; the other kinds are the
fixed experiments:

* ``anon-partition``: anonymous flooder on network A under the delayed-bridge
  scheduler versus network B under the synchronous one;
* ``kd-partition``: id-using flooder on K_D under the semi-synchronous
  scheduler versus free-standing lines;
* ``time-bound``: causal horizon and decision time on lines under max-delay;
* ``explore``: bounded exhaustive valid-step exploration.

The flooders used by the two partition experiments are stand-ins that are
correct on their reference networks under the synchronous scheduler.  The
experiments show the scheduler splitting them, not that every algorithm
fails.
"""

from __future__ import annotations

import csv
import io
import json
import os
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import checkers
from .core import SimConfig, run_simulation
from .explore import enumerate_valid_executions
from .protocols import AnonFlooder, IdFlooder, TwoPhase, WPaxos
from .schedulers import (ConfigurationError, LockStepScheduler, SynchronousScheduler, delayed_bridge,
                         parse_scheduler, semi_synchronous)
from .topology import Topology, build_line, build_network_a, build_network_b, build_kd, parse_topology

PROTOCOLS = ("twophase", "wpaxos", "anonflood", "idflood")
KINDS = ("runs", "anon-partition", "kd-partition", "time-bound", "explore")


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str = "adhoc"
    kind: str = "runs"
    topologies: list = field(default_factory=lambda: ["clique:n=4"])
    scheduler: str = "sync"
    protocol: str = "twophase"
    values: str = "alternate"
    f_ack: int = 1
    seeds: list = field(default_factory=lambda: [0])
    horizon: int = 100_000
    n_known: Optional[int] = None
    rounds: Optional[int] = None
    mutation: Optional[str] = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, source: str = "<scenario>", text: str = "") -> "Scenario":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ScenarioError(f"{source}:{_line_of(text, key)}: unknown field {key!r}")
        data = dict(data)
        if "topology" in data:
            raise ScenarioError(f"{source}:{_line_of(text, 'topology')}: use 'topologies' (a list)")
        if isinstance(data.get("topologies"), str):
            data["topologies"] = [data["topologies"]]
        if isinstance(data.get("seeds"), str):
            data["seeds"] = parse_seeds(data["seeds"])
        sc = cls(**data)
        try:
            sc.validate()
        except ScenarioError as exc:
            bad = str(exc).split(" ", 1)[0].strip("'")
            raise ScenarioError(f"{source}:{_line_of(text, bad)}: {exc}") from None
        return sc

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ScenarioError(f"kind: unknown kind {self.kind!r}")
        if self.protocol not in PROTOCOLS:
            raise ScenarioError(f"protocol: unknown protocol {self.protocol!r}")
        if self.f_ack < 1:
            raise ScenarioError("f_ack: must be >= 1")
        if not self.topologies:
            raise ScenarioError("topologies: empty")
        if not self.seeds:
            raise ScenarioError("seeds: empty")


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return 1


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}:1: scenario must be a JSON object")
    return Scenario.from_dict(data, str(path), text)


def parse_seeds(spec: str) -> list:
    """``a..b`` (inclusive) or a comma list."""
    spec = str(spec).strip()
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ScenarioError(f"seeds: empty range {spec!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in spec.split(",") if s.strip()]


# ----- presets -------------------------------------------------------------

PRESETS = {
    "thm2-demo": Scenario(
        name="thm2-demo", kind="anon-partition", topologies=["netA:D=4,n=4"], protocol="anonflood",
        scheduler="bridge", values="split"),
    "thm3-demo": Scenario(
        name="thm3-demo", kind="kd-partition", topologies=["kd:D=4"], protocol="idflood",
        scheduler="semisync", values="split"),
    "thm4-demo": Scenario(
        name="thm4-demo", kind="time-bound", topologies=["line:d=4", "line:d=6", "line:d=8"],
        protocol="wpaxos", scheduler="maxdelay", f_ack=4),
    "twophase-suite": Scenario(
        name="twophase-suite", topologies=[f"clique:n={n}" for n in range(2, 9)], protocol="twophase",
        scheduler="random", values="random", f_ack=5, seeds=list(range(50))),
    "wpaxos-suite": Scenario(
        name="wpaxos-suite", topologies=["clique:n=5", "line:d=6", "kd:D=4", "random:n=12,seed=3"],
        protocol="wpaxos", scheduler="random", values="random", f_ack=4, seeds=list(range(25))),
    "wpaxos-scaling": Scenario(
        name="wpaxos-scaling", topologies=["line:d=2", "line:d=4", "line:d=8"], protocol="wpaxos",
        scheduler="random", values="random", f_ack=4, seeds=list(range(50))),
    "flp-explore": Scenario(
        name="flp-explore", kind="explore", topologies=["clique:n=3"], protocol="twophase",
        scheduler="exhaustive:depth=64", values="010", params={"crash_budget": 1}),
}


def list_presets() -> list:
    return sorted(PRESETS)


def get_scenario(name_or_path: str) -> Scenario:
    if name_or_path in PRESETS:
        return Scenario.from_dict(PRESETS[name_or_path].to_dict())
    if Path(name_or_path).exists():
        return load_scenario(name_or_path)
    raise ScenarioError(f"no preset or file named {name_or_path!r} (presets: {', '.join(list_presets())})")


# ----- building blocks ------------------------------------------------------


def assign_values(spec: str, topology: Topology, seed: int = 0) -> dict:
    """``alternate | all0 | all1 | random | random:<seed> | split | <bitstring>``"""
    nodes = topology.nodes
    if spec == "alternate":
        return {u: i % 2 for i, u in enumerate(nodes)}
    if spec in ("all0", "all1"):
        return {u: int(spec[-1]) for u in nodes}
    if spec == "random" or spec.startswith("random:"):
        s = seed if spec == "random" else int(spec.split(":", 1)[1].replace("seed=", ""))
        rng = random.Random(f"values:{s}")
        return {u: rng.randint(0, 1) for u in nodes}
    if spec == "split":
        meta = topology.meta
        if topology.kind == "netA":
            ones = set(meta["gadgets"][1])
        elif topology.kind == "kd":
            ones = set(meta["copy2"])
        else:
            ones = set(nodes[len(nodes) // 2:])
        return {u: int(u in ones) for u in nodes}
    if set(spec) <= {"0", "1"} and spec:
        if len(spec) != len(nodes):
            raise ScenarioError(f"values: bitstring has {len(spec)} entries for {len(nodes)} nodes")
        return {u: int(c) for u, c in zip(nodes, spec)}
    raise ScenarioError(f"values: cannot parse {spec!r}")


@dataclass
class ProtocolSetup:
    factory: object
    anonymous: bool
    exact_ids: Optional[int]
    wpaxos: bool


def make_protocol(sc: Scenario, topology: Topology, values: dict) -> ProtocolSetup:
    if sc.protocol == "twophase":
        if topology.kind != "clique":
            raise ConfigurationError("two-phase consensus runs on cliques only")
        kw = {k: sc.params[k] for k in ("early_decide", "scan_r2_only") if k in sc.params}
        return ProtocolSetup(TwoPhase.factory(values, mutation=sc.mutation, **kw), False, 1, False)
    if sc.protocol == "wpaxos":
        n = sc.n_known or topology.n
        return ProtocolSetup(WPaxos.factory(values, n=n, mutation=sc.mutation), False, None, True)
    rounds = sc.rounds or topology.diameter
    if sc.protocol == "anonflood":
        return ProtocolSetup(AnonFlooder.factory(values, rounds), True, 0, False)
    return ProtocolSetup(IdFlooder.factory(values, rounds), False, 1, False)


def _scheduler_for(spec: str, topology: Topology, seed: int):
    if spec == "random":
        spec = f"random:seed={seed}"
    elif spec.startswith("random:") and "seed" not in spec:
        spec = f"random:seed={seed}," + spec.split(":", 1)[1]
    return parse_scheduler(spec, topology)


def run_one(sc: Scenario, topo_spec: str, seed: int, keep_trace: bool = False) -> dict:
    topology = parse_topology(topo_spec)
    values = assign_values(sc.values, topology, seed)
    setup = make_protocol(sc, topology, values)
    scheduler = _scheduler_for(sc.scheduler, topology, seed)
    trace = run_simulation(topology, setup.factory, scheduler, SimConfig(f_ack=sc.f_ack), sc.horizon,
                           anonymous=setup.anonymous, protocol_name=sc.protocol)
    report = checkers.standard_report(trace, exact_ids=setup.exact_ids, wpaxos=setup.wpaxos)
    m = report.metrics()
    row = {
        "scenario": sc.name,
        "topology": topo_spec,
        "n": topology.n,
        "D": topology.diameter,
        "seed": seed,
        "scheduler": trace.scheduler,
        "f_ack": sc.f_ack,
        "verdict": report.verdict,
        "failed": ";".join(r.name for r in report.failures()),
        "decision_time": m.get("decision_time"),
        "decision_time_fack": m.get("decision_time_fack"),
        "decision_time_dfack": m.get("decision_time_dfack"),
        "gst": m.get("gst"),
        "max_ids": m.get("max_ids"),
        "max_tag": m.get("max_tag"),
        "events": m.get("events"),
        "trace_hash": trace.trace_hash()[:16],
    }
    out = {"row": row, "report": report.to_dict()}
    if keep_trace:
        out["trace"] = trace.to_jsonl()
    return out


def _workers() -> int:
    raw = os.environ.get("MACSIM_THREADS", "")
    try:
        cap = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ScenarioError(f"MACSIM_THREADS must be an integer, got {raw!r}") from None
    return max(1, cap)


def _run_job(args) -> dict:
    sc_dict, topo_spec, seed, keep = args
    return run_one(Scenario(**sc_dict), topo_spec, seed, keep)


def run_matrix(sc: Scenario, keep_traces: bool = False) -> list:
    """Every (topology, seed) pair, in deterministic order, possibly in parallel."""
    jobs = [(sc.to_dict(), t, s, keep_traces) for t in sc.topologies for s in sc.seeds]
    workers = min(_workers(), len(jobs))
    if workers <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# ----- fixed experiments ------------------------------------------------------


def anon_partition(sc: Scenario) -> dict:
    """Network A versus three-fold cover B, anonymous flooder."""
    D, n = _dn(sc.topologies[0])
    topo_a, _ = build_network_a(D, n)
    topo_b, mapping = build_network_b(D, n)
    rounds = sc.rounds or D
    refs, t = {}, 0
    for b in (0, 1):
        tr = run_simulation(topo_b, AnonFlooder.factory({u: b for u in topo_b.nodes}, rounds),
                            SynchronousScheduler(), anonymous=True, protocol_name="anonflood")
        refs[b] = tr
        t = max(t, tr.decision_time())
    values = assign_values("split", topo_a)
    tr_a = run_simulation(topo_a, AnonFlooder.factory(values, rounds), delayed_bridge(topo_a, t),
                          anonymous=True, protocol_name="anonflood")
    results = [
        checkers.check_indistinguishable(tr_a, refs[0], mapping.for_network_a(topo_a, 0), t, "indistinguishable-g0"),
        checkers.check_indistinguishable(tr_a, refs[1], mapping.for_network_a(topo_a, 1), t, "indistinguishable-g1"),
        checkers.check_agreement(refs[0]),
        checkers.check_agreement(refs[1]),
        checkers.check_broadcast_contract(tr_a),
    ]
    violation = checkers.check_agreement(tr_a)
    return _partition_result(sc, t, results, violation, {"A": tr_a, "B0": refs[0], "B1": refs[1]},
                             {"n_prime": topo_a.n, "D": D})


def kd_partition(sc: Scenario) -> dict:
    """K_D under the semi-synchronous scheduler versus free-standing lines."""
    D = int(sc.topologies[0].split("D=")[1].split(",")[0])
    kd = build_kd(D)
    rounds = sc.rounds or D
    lines = {0: build_line(D), 1: build_line(D, offset=D + 1)}
    refs, t = {}, 0
    for b, line in lines.items():
        tr = run_simulation(line, IdFlooder.factory({u: b for u in line.nodes}, rounds),
                            SynchronousScheduler(), protocol_name="idflood")
        refs[b] = tr
        t = max(t, tr.decision_time())
    values = assign_values("split", kd)
    tr_k = run_simulation(kd, IdFlooder.factory(values, rounds), semi_synchronous(kd, t), protocol_name="idflood")
    results = [
        checkers.check_indistinguishable(tr_k, refs[0], {u: u for u in kd.meta["copy1"]}, t, "indistinguishable-L1"),
        checkers.check_indistinguishable(tr_k, refs[1], {u: u for u in kd.meta["copy2"]}, t, "indistinguishable-L2"),
        checkers.check_agreement(refs[0]),
        checkers.check_agreement(refs[1]),
        checkers.check_broadcast_contract(tr_k),
    ]
    violation = checkers.check_agreement(tr_k)
    return _partition_result(sc, t, results, violation, {"K": tr_k, "L1": refs[0], "L2": refs[1]},
                             {"n": kd.n, "D": D})


def _dn(spec: str) -> tuple:
    args = dict(p.split("=") for p in spec.split(":", 1)[1].split(","))
    return int(args["D"]), int(args["n"])


def _partition_result(sc, t, results, violation, traces, extra) -> dict:
    ok = all(r.ok for r in results) and not violation.ok
    return {
        "scenario": sc.name,
        "kind": sc.kind,
        "verdict": checkers.PASS if ok else checkers.FAIL,
        "t": t,
        "agreement_violation": None if violation.ok else violation.witness,
        "checks": [r.to_dict() for r in results],
        "info": extra,
        "traces": traces,
    }


def time_bound(sc: Scenario) -> dict:
    """Causal horizon of both endpoints and wPAXOS decision time on lines under max-delay."""
    rows, ok = [], True
    for spec in sc.topologies:
        line = parse_topology(spec)
        if line.kind != "line":
            raise ConfigurationError("time-bound experiment needs line topologies")
        D = line.diameter
        values = assign_values(sc.values, line)
        sub = Scenario(**{**sc.to_dict(), "kind": "runs"})
        setup = make_protocol(sub, line, values)
        tr = run_simulation(line, setup.factory, LockStepScheduler(None, "maxdelay"), SimConfig(f_ack=sc.f_ack),
                            sc.horizon, protocol_name=sc.protocol)
        bound = (D // 2) * sc.f_ack
        ends = [line.nodes[0], line.nodes[-1]]
        causal = [checkers.check_causal_horizon(tr, e, checkers.line_halves(line, e), bound) for e in ends]
        dt = tr.decision_time()
        time_ok = dt is not None and dt >= bound
        row_ok = all(c.ok for c in causal) and time_ok and checkers.check_agreement(tr).ok
        ok &= row_ok
        rows.append({
            "topology": spec, "D": D, "f_ack": sc.f_ack, "bound": bound,
            "earliest_far_info": min((c.metrics["earliest"] for c in causal if c.metrics.get("earliest") is not None),
                                     default=None),
            "decision_time": dt, "verdict": checkers.PASS if row_ok else checkers.FAIL,
        })
    return {"scenario": sc.name, "kind": sc.kind, "verdict": checkers.PASS if ok else checkers.FAIL, "rows": rows}


def explore(sc: Scenario) -> dict:
    topology = parse_topology(sc.topologies[0])
    values = assign_values(sc.values, topology)
    setup = make_protocol(sc, topology, values)
    depth = 64
    if sc.scheduler.startswith("exhaustive"):
        for part in sc.scheduler.partition(":")[2].split(","):
            if part.startswith("depth="):
                depth = int(part.split("=")[1])
    res = enumerate_valid_executions(topology, setup.factory, sc.params.get("crash_budget", 0), depth,
                                     anonymous=setup.anonymous,
                                     max_states=sc.params.get("max_states", 200_000))
    stats = res.to_dict()
    return {
        "scenario": sc.name,
        "kind": sc.kind,
        # the exploration itself is the product; crashes may legitimately block termination
        "verdict": checkers.FAIL if res.partial else checkers.PASS,
        "values": "".join(str(values[u]) for u in topology.nodes),
        "stats": stats,
    }


# ----- top level ------------------------------------------------------------


def summarize_rows(rows: list) -> list:
    """Per-topology decision-time quantiles and violation counts."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(r["topology"], []).append(r)
    out = []
    for topo, rs in groups.items():
        times = sorted(r["decision_time"] for r in rs if r["decision_time"] is not None)
        q = statistics.quantiles(times, n=4, method="inclusive") if len(times) >= 2 else [times[0]] * 3 if times else [None] * 3
        out.append({
            "topology": topo,
            "runs": len(rs),
            "failures": sum(r["verdict"] != checkers.PASS for r in rs),
            "agreement_violations": sum("agreement" in r["failed"] for r in rs),
            "undecided": sum(r["decision_time"] is None for r in rs),
            "time_min": times[0] if times else None,
            "time_q1": q[0],
            "time_median": q[1],
            "time_q3": q[2],
            "time_max": times[-1] if times else None,
            "max_tag": max((r["max_tag"] or 0 for r in rs), default=0),
            "max_ids": max((r["max_ids"] or 0 for r in rs), default=0),
        })
    return out


def rows_to_csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def run_scenario(sc: Scenario, out_dir=None, fmt: str = "csv") -> dict:
    """Run a scenario; optionally write results under ``out_dir``.  Returns the summary."""
    if fmt not in ("csv", "jsonl"):
        raise ScenarioError(f"unknown format {fmt!r}")
    if sc.kind == "runs" and sc.scheduler.startswith("exhaustive"):
        sc = Scenario(**{**sc.to_dict(), "kind": "explore"})
    if sc.kind == "runs":
        results = run_matrix(sc, keep_traces=(fmt == "jsonl" and out_dir is not None))
        rows = [r["row"] for r in results]
        summary = {
            "scenario": sc.name,
            "kind": sc.kind,
            "verdict": checkers.PASS if all(r["verdict"] == checkers.PASS for r in rows) else checkers.FAIL,
            "summary": summarize_rows(rows),
        }
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{sc.name}.csv").write_text(rows_to_csv(rows))
            (out / f"{sc.name}-summary.csv").write_text(rows_to_csv(summary["summary"]))
            (out / f"{sc.name}-reports.json").write_text(
                json.dumps([r["report"] for r in results], indent=1, sort_keys=True, default=str))
            if fmt == "jsonl":
                tdir = out / f"{sc.name}-traces"
                tdir.mkdir(exist_ok=True)
                for r in results:
                    row = r["row"]
                    fname = f"{row['topology'].replace(':', '_').replace(',', '_').replace('=', '')}-s{row['seed']}.jsonl"
                    (tdir / fname).write_text(r["trace"])
        summary["rows"] = rows
        return summary
    runner = {"anon-partition": anon_partition, "kd-partition": kd_partition,
              "time-bound": time_bound, "explore": explore}[sc.kind]
    result = runner(sc)
    traces = result.pop("traces", {})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{sc.name}-report.json").write_text(json.dumps(result, indent=1, sort_keys=True, default=str))
        if fmt == "jsonl":
            for label, tr in traces.items():
                (out / f"{sc.name}-{label}.jsonl").write_text(tr.to_jsonl())
        elif "rows" in result:
            (out / f"{sc.name}.csv").write_text(rows_to_csv(result["rows"]))
    return result


def sweep(sc: Scenario, seeds: list, out_dir=None, fmt: str = "csv") -> dict:
    return run_scenario(Scenario(**{**sc.to_dict(), "seeds": list(seeds)}), out_dir, fmt)
