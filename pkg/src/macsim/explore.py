"""Bounded exhaustive exploration over valid steps.

A valid step is either

* a receive of ``u``'s current message at ``v``, offered only when every
  non-crashed neighbour of ``u`` smaller than ``v`` already has it (so each
  pending broadcast contributes exactly one receive candidate), or
* the ack to ``u``, offered once every non-crashed neighbour has received,

plus, while crash budget remains, crashing any live node.  Each step moves
the virtual clock forward one tick.  Ack timing is unconstrained here, so
the explorer runs with a very large ``f_ack``.

Identical configurations reached along different paths are explored once;
per-configuration results are combined bottom-up, so counts refer to
complete executions, not to distinct configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import SimConfig, Simulation, digest
from .topology import Topology

EXPLORE_F_ACK = 10**9


@dataclass(frozen=True)
class Step:
    kind: str  # "receive" | "ack" | "crash"
    node: int
    sender: Optional[int] = None

    def __str__(self) -> str:
        if self.kind == "receive":
            return f"recv({self.node}<-{self.sender})"
        return f"{self.kind}({self.node})"


def valid_steps(sim: Simulation, crash_budget: int = 0) -> list:
    steps = []
    for u in sorted(sim.pending):
        inst = sim.pending[u]
        if inst.pending_receivers:
            steps.append(Step("receive", min(inst.pending_receivers), u))
        else:
            steps.append(Step("ack", u, u))
    if crash_budget > 0:
        steps += [Step("crash", u) for u in sim.alive]
    return steps


def apply_step(sim: Simulation, step: Step) -> None:
    sim.now += 1
    if step.kind == "receive":
        sim.deliver(step.node, step.sender)
    elif step.kind == "ack":
        sim.ack(step.node)
    else:
        sim.apply_crash(step.node)


def _config_key(sim: Simulation, crashes_left: int, depth_left: int):
    pending = tuple(sorted(
        (u, inst.seq, inst.payload, frozenset(inst.pending_receivers)) for u, inst in sim.pending.items()
    ))
    states = tuple(sim.nodes[u].state_key() for u in sim.topology.nodes)
    decisions = tuple(sorted((u, d.value) for u, d in sim.decisions.items()))
    key = (states, pending, frozenset(sim.crashed), decisions, crashes_left, depth_left)
    try:
        hash(key)
    except TypeError:
        return digest(key)
    return key


@dataclass
class Outcome:
    """Aggregate over every execution extending one configuration."""

    complete: int = 0
    truncated: int = 0
    agreement_violations: int = 0
    validity_violations: int = 0
    nonterminating: int = 0
    values: frozenset = frozenset()
    witness: Optional[list] = None  # steps to the first violating leaf

    def add(self, other: "Outcome", step: Step) -> None:
        self.complete += other.complete
        self.truncated += other.truncated
        self.agreement_violations += other.agreement_violations
        self.validity_violations += other.validity_violations
        self.nonterminating += other.nonterminating
        self.values = self.values | other.values
        if self.witness is None and other.witness is not None:
            self.witness = [step] + other.witness


@dataclass
class ExplorationResult:
    outcome: Outcome
    states: int
    partial: bool
    bivalent_states: int
    univalent_states: int
    initial_values: dict
    traces: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        o = self.outcome
        return o.agreement_violations + o.validity_violations

    def to_dict(self) -> dict:
        o = self.outcome
        return {
            "complete_executions": o.complete,
            "truncated_executions": o.truncated,
            "agreement_violations": o.agreement_violations,
            "validity_violations": o.validity_violations,
            "nonterminating_executions": o.nonterminating,
            "reachable_decisions": sorted(o.values),
            "initial_bivalent": o.values == {0, 1},
            "configurations": self.states,
            "bivalent_configurations": self.bivalent_states,
            "univalent_configurations": self.univalent_states,
            "partial": self.partial,
            "witness": None if o.witness is None else [str(s) for s in o.witness],
        }


def _leaf(sim: Simulation, truncated: bool) -> Outcome:
    out = Outcome()
    values = {d.value for d in sim.decisions.values()}
    out.values = frozenset(values)
    if truncated:
        out.truncated = 1
    else:
        out.complete = 1
        if not sim.all_decided:
            out.nonterminating = 1
    inputs = {p.initial_value for p in sim.nodes.values()}
    if len(values) > 1:
        out.agreement_violations = 1
    if not values <= inputs:
        out.validity_violations = 1
    if out.agreement_violations or out.validity_violations:
        out.witness = []
    return out


def enumerate_valid_executions(
    topology: Topology,
    protocol_factory: Callable,
    crash_budget: int = 0,
    depth: int = 64,
    *,
    anonymous: bool = False,
    memoize: bool = True,
    max_states: int = 200_000,
    collect_traces: int = 0,
) -> ExplorationResult:
    """Explore every valid-step interleaving up to ``depth`` steps.

    With ``collect_traces > 0`` memoisation is switched off and up to that
    many leaf traces are kept, one per distinct execution.
    """
    if topology.n > 4:
        raise ValueError("exhaustive exploration is limited to n <= 4")
    if collect_traces:
        memoize = False
    root = Simulation(topology, protocol_factory, SimConfig(f_ack=EXPLORE_F_ACK),
                      anonymous=anonymous, record_hashes=False, protocol_name="explore")
    root.scheduler_name = "exhaustive"
    root.start()
    memo: dict = {}
    traces: list = []
    budget = {"states": 0, "partial": False}

    def leaf(sim: Simulation, truncated: bool) -> Outcome:
        if collect_traces and len(traces) < collect_traces:
            traces.append(sim.trace())
        return _leaf(sim, truncated)

    def visit(sim: Simulation, crashes_left: int, depth_left: int) -> Outcome:
        if sim.done:
            return leaf(sim, truncated=False)
        steps = valid_steps(sim, crashes_left)
        if not sim.pending:
            # crashing nodes in a quiescent configuration changes nothing observable
            return leaf(sim, truncated=False)
        if depth_left == 0:
            return leaf(sim, truncated=True)
        key = _config_key(sim, crashes_left, depth_left) if memoize else None
        if key is not None and key in memo:
            return memo[key]
        if budget["states"] >= max_states:
            budget["partial"] = True
            return leaf(sim, truncated=True)
        budget["states"] += 1
        out = Outcome()
        for step in steps:
            child = sim.fork(keep_history=bool(collect_traces))
            apply_step(child, step)
            out.add(visit(child, crashes_left - (step.kind == "crash"), depth_left - 1), step)
        if key is not None:
            memo[key] = out
        return out

    outcome = visit(root, crash_budget, depth)
    biv = sum(1 for o in memo.values() if o.values == {0, 1})
    uni = sum(1 for o in memo.values() if len(o.values) == 1)
    return ExplorationResult(
        outcome=outcome,
        states=budget["states"],
        partial=budget["partial"],
        bivalent_states=biv,
        univalent_states=uni,
        initial_values={u: p.initial_value for u, p in root.nodes.items()},
        traces=traces,
    )


def replay(topology: Topology, protocol_factory: Callable, steps: list, *, anonymous: bool = False):
    """Re-run a step list (e.g. a violation witness) and return its trace."""
    sim = Simulation(topology, protocol_factory, SimConfig(f_ack=EXPLORE_F_ACK),
                     anonymous=anonymous, protocol_name="replay")
    sim.scheduler_name = "exhaustive"
    sim.start()
    for step in steps:
        apply_step(sim, step)
    return sim.trace()
