"""Trace validators and metrics.

Every function here is a pure function of an :class:`ExecutionTrace`.  A
failing check always names a concrete witness (steps, nodes, values).
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .core import ACK, BROADCAST, CRASH, NOTE, RECEIVE, START, VIOLATION, ExecutionTrace, hash_at_time

PASS, FAIL, INAPPLICABLE = "pass", "fail", "inapplicable"


@dataclass
class CheckResult:
    name: str
    verdict: str
    witness: Optional[dict] = None
    metrics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict != FAIL

    def to_dict(self) -> dict:
        out = {"name": self.name, "verdict": self.verdict}
        if self.witness is not None:
            out["witness"] = self.witness
        if self.metrics:
            out["metrics"] = self.metrics
        return out


def _pass(name: str, **metrics) -> CheckResult:
    return CheckResult(name, PASS, None, metrics)


def _fail(name: str, witness: dict, **metrics) -> CheckResult:
    return CheckResult(name, FAIL, witness, metrics)


@dataclass
class CheckReport:
    results: list = field(default_factory=list)

    def add(self, result: CheckResult) -> CheckResult:
        self.results.append(result)
        return result

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    @property
    def verdict(self) -> str:
        return PASS if self.ok else FAIL

    def failures(self) -> list:
        return [r for r in self.results if not r.ok]

    def metrics(self) -> dict:
        out = {}
        for r in self.results:
            out.update(r.metrics)
        return out

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "checks": [r.to_dict() for r in self.results]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=str)


# ----- consensus properties --------------------------------------------------


def check_agreement(trace: ExecutionTrace) -> CheckResult:
    for e in trace.events_of(VIOLATION):
        if e.data.get("kind") == "re-decide":
            return _fail("agreement", {"step": e.step, "node": e.node, "redecided": e.data["value"]})
    seen: dict = {}
    for u, d in sorted(trace.decisions.items()):
        for v, (w, dw) in seen.items():
            if v != d.value:
                return _fail("agreement", {"nodes": [w, u], "values": [v, d.value], "steps": [dw.step, d.step]})
        seen.setdefault(d.value, (u, d))
    return _pass("agreement")


def check_validity(trace: ExecutionTrace) -> CheckResult:
    inputs = set(trace.initial_values.values())
    for u, d in sorted(trace.decisions.items()):
        if d.value not in inputs:
            return _fail("validity", {"node": u, "value": d.value, "step": d.step, "inputs": sorted(inputs)})
    return _pass("validity")


def check_termination(trace: ExecutionTrace, bound: Optional[int] = None) -> CheckResult:
    if trace.aborted:
        return _fail("termination", {"aborted": trace.aborted})
    alive = [u for u in trace.topology.nodes if u not in trace.crashed]
    missing = [u for u in alive if u not in trace.decisions]
    if missing:
        return _fail("termination", {"undecided": missing, "end_time": trace.end_time})
    t = max((trace.decisions[u].time for u in alive), default=0)
    if bound is not None and t > bound:
        last = max(alive, key=lambda u: trace.decisions[u].time)
        return _fail("termination", {"node": last, "time": t, "bound": bound}, decision_time=t)
    return _pass("termination", decision_time=t)


# ----- model contract -----------------------------------------------------


def check_broadcast_contract(trace: ExecutionTrace) -> CheckResult:
    """f_ack bound, receive windows, at-most-once delivery, one pending per node, fairness."""
    f_ack = trace.config.f_ack
    recv_steps = defaultdict(list)
    ack_step = {}
    for e in trace.events:
        if e.kind == RECEIVE:
            recv_steps[(e.sender, e.seq, e.node)].append(e)
        elif e.kind == ACK:
            ack_step[(e.sender, e.seq)] = e
    for key, evs in recv_steps.items():
        if len(evs) > 1:
            return _fail("broadcast-contract", {"duplicate-receive": list(key), "steps": [e.step for e in evs]})
    max_delay = 0
    busy_until: dict = {}
    for inst in sorted(trace.instances, key=lambda i: (i.sender, i.seq)):
        key = inst.key
        prev = busy_until.get(inst.sender)
        if prev is not None and (prev is True or inst.issue_time < prev):
            return _fail("broadcast-contract", {"overlapping": list(key), "issue": inst.issue_time})
        if inst.ack_time is not None:
            max_delay = max(max_delay, inst.ack_time - inst.issue_time)
            if inst.ack_time - inst.release_time > f_ack:
                return _fail("broadcast-contract", {"late-ack": list(key), "issue": inst.issue_time,
                                                    "release": inst.release_time, "ack": inst.ack_time})
            ack_ev = ack_step[key]
            for v, t in inst.receivers.items():
                ev = recv_steps[(inst.sender, inst.seq, v)][0]
                if not (inst.issue_time < t <= inst.ack_time) or ev.step > ack_ev.step:
                    return _fail("broadcast-contract", {"receive-outside-window": list(key), "node": v,
                                                        "time": t, "step": ev.step})
            busy_until[inst.sender] = inst.ack_time
        elif inst.crashed:
            busy_until[inst.sender] = True
        else:
            busy_until[inst.sender] = True
            if trace.end_time - inst.release_time > f_ack:
                return _fail("broadcast-contract", {"unfinished": list(key), "issue": inst.issue_time,
                                                    "end_time": trace.end_time})
    return _pass("broadcast-contract", effective_f_ack=max_delay)


def check_message_size(trace: ExecutionTrace, cap: Optional[int] = None,
                       exact: Optional[int] = None) -> CheckResult:
    cap = trace.config.id_capacity if cap is None else cap
    worst = 0
    for e in trace.events_of(BROADCAST, VIOLATION):
        if e.kind == VIOLATION and e.data.get("kind") != "message-size":
            continue
        ids = e.data["ids"]
        worst = max(worst, ids)
        if ids > cap:
            return _fail("message-size", {"step": e.step, "node": e.node, "ids": ids, "cap": cap}, max_ids=ids)
        if exact is not None and ids != exact:
            return _fail("message-size", {"step": e.step, "node": e.node, "ids": ids, "expected": exact},
                         max_ids=worst)
    return _pass("message-size", max_ids=worst)


# ----- wPAXOS specific --------------------------------------------------------


def max_tag(trace: ExecutionTrace) -> int:
    return max((e.data["number"][0] for e in trace.notes("proposal")), default=0)


def check_tag_bound(trace: ExecutionTrace, ceiling: Optional[int] = None) -> CheckResult:
    ceiling = trace.topology.n ** 3 if ceiling is None else ceiling
    worst = 0
    for e in trace.notes("proposal"):
        tag = e.data["number"][0]
        worst = max(worst, tag)
        if tag > ceiling:
            return _fail("tag-bound", {"step": e.step, "node": e.node, "tag": tag, "ceiling": ceiling}, max_tag=tag)
    return _pass("tag-bound", max_tag=worst, tag_ceiling=ceiling)


def measure_times(trace: ExecutionTrace) -> CheckResult:
    f_ack = trace.config.f_ack
    D = trace.topology.diameter
    t = trace.decision_time()
    changes = [e.time for e in trace.notes("change")]
    metrics = {
        "decision_time": t,
        "decision_time_fack": None if t is None else t / f_ack,
        "decision_time_dfack": None if t is None else t / (D * f_ack),
        "gst": max(changes) if changes else None,
        "events": len(trace.events),
    }
    if t is None:
        return CheckResult("times", FAIL, {"undecided": True, "end_time": trace.end_time}, metrics)
    return CheckResult("times", PASS, None, metrics)


def check_decide_flood(trace: ExecutionTrace) -> CheckResult:
    """No node ever receives a flooded decision that differs from its own."""
    for e in trace.notes("decide-conflict"):
        return _fail("decide-flood", {"step": e.step, "node": e.node, "held": e.data["held"],
                                      "received": e.data["received"], "from": e.data["sender"]})
    return _pass("decide-flood")


def _scheduled_groups(trace: ExecutionTrace) -> Iterable[list]:
    """Split the event log into message steps: a scheduled event plus what it caused."""
    group: list = []
    for e in trace.events:
        if e.kind in (RECEIVE, ACK, CRASH, START) and group:
            yield group
            group = []
        group.append(e)
    if group:
        yield group


def _rank_prior(prior) -> tuple:
    return (-1, -1) if prior is None else (prior[0], prior[1])


def audit_counts(trace: ExecutionTrace) -> CheckResult:
    """Response-counting audit for wPAXOS.

    For every positive proposition p and step s,

        Q(p,s) = sum over nodes v of q(p,v,s), where q(p,v,s) is
          the count held in v's response queue, plus
          the count in v's broadcasts still on their way to their destination, plus
          1 if v will generate an affirmative response to p later on,

    and c(p,s) is what p's originator has counted so far.  The audit checks
    Q + c <= a(p) after every message step, that no single step raises
    Q + c, and that the largest prior proposal still carried for p never
    disappears unless the step dropped material for p.
    """
    name = "count-audit"
    responders = defaultdict(set)
    future_priors = defaultdict(dict)
    any_bundle = False
    for e in trace.events:
        if e.kind == NOTE and e.data["kind"] == "respond" and e.data["positive"]:
            p = tuple(e.data["prop"])
            if e.node in responders[p]:
                return _fail(name, {"double-respond": list(p), "node": e.node, "step": e.step})
            responders[p].add(e.node)
            future_priors[p][e.node] = e.data["prior"]
        elif e.kind == BROADCAST:
            if not hasattr(e.payload, "response"):
                return CheckResult(name, INAPPLICABLE, None, {})
            any_bundle = True
    if not any_bundle and not responders:
        return CheckResult(name, INAPPLICABLE, None, {})
    a = {p: len(vs) for p, vs in responders.items()}

    future = {p: set(vs) for p, vs in responders.items()}
    queued = defaultdict(dict)        # p -> v -> (count, prior)
    flight = defaultdict(dict)        # p -> (sender, seq, dest) -> (count, prior)
    counted = defaultdict(int)
    counted_prior = {}

    def total(p) -> int:
        return (len(future[p]) + sum(c for c, _ in queued[p].values())
                + sum(c for c, _ in flight[p].values()) + counted[p])

    def live_prior(p) -> tuple:
        best = _rank_prior(counted_prior.get(p))
        for v in future[p]:
            best = max(best, _rank_prior(future_priors[p][v]))
        for _, pr in queued[p].values():
            best = max(best, _rank_prior(pr))
        for _, pr in flight[p].values():
            best = max(best, _rank_prior(pr))
        return best

    counted_members = defaultdict(set)

    def provenance(p, count, prior, members, step):
        members = set(members)
        if not members:
            return None
        if count != len(members):
            return {"proposition": list(p), "step": step, "count": count, "acceptors": sorted(members)}
        want = max((_rank_prior(future_priors[p].get(m)) for m in members), default=(-1, -1))
        if _rank_prior(prior) != want:
            return {"proposition": list(p), "step": step, "prior": prior,
                    "expected_prior": [future_priors[p][m] for m in sorted(members)
                                       if _rank_prior(future_priors[p].get(m)) == want][0]}
        return None

    worst = 0
    last_prior = {p: live_prior(p) for p in a}
    last_total = {p: total(p) for p in a}
    for group in _scheduled_groups(trace):
        touched, dropped = set(), set()
        for e in group:
            if e.kind == RECEIVE:
                r = getattr(e.payload, "response", None)
                if r is not None and r.positive and r.dest == e.node:
                    p = r.key
                    if flight[p].pop((e.sender, e.seq, e.node), None) is not None:
                        touched.add(p)
            elif e.kind == BROADCAST:
                r = e.payload.response
                if r is not None and r.positive:
                    p = r.key
                    bad = provenance(p, r.count, prior_tuple(r.prior), getattr(r, "members", ()), e.step)
                    if bad:
                        return _fail(name, bad)
                    flight[p][(e.node, e.seq, r.dest)] = (r.count, prior_tuple(r.prior))
                    touched.add(p)
            elif e.kind == NOTE:
                kind, d = e.data["kind"], e.data
                if kind == "respond" and d["positive"]:
                    p = tuple(d["prop"])
                    future[p].discard(e.node)
                    touched.add(p)
                elif kind == "rqueue":
                    p = tuple(d["prop"])
                    bad = provenance(p, d["count"], d["prior"], d.get("members", ()), e.step)
                    if bad:
                        return _fail(name, bad)
                    if d["count"]:
                        queued[p][e.node] = (d["count"], d["prior"])
                    else:
                        queued[p].pop(e.node, None)
                    touched.add(p)
                elif kind == "count":
                    p = tuple(d["prop"])
                    members = set(d.get("members", ()))
                    bad = provenance(p, d["k"], d["prior"], members, e.step)
                    if bad:
                        return _fail(name, bad)
                    if members & counted_members[p]:
                        return _fail(name, {"proposition": list(p), "step": e.step,
                                            "counted-twice": sorted(members & counted_members[p])})
                    counted_members[p] |= members
                    counted[p] += d["k"]
                    if _rank_prior(d["prior"]) > _rank_prior(counted_prior.get(p)):
                        counted_prior[p] = d["prior"]
                    touched.add(p)
                elif kind == "drop":
                    dropped.add(tuple(d["prop"]))
        step = group[0].step
        for p in sorted(touched):
            if p not in a:
                return _fail(name, {"unknown-proposition": list(p), "step": step})
            t = total(p)
            worst = max(worst, counted[p])
            if t > a[p]:
                return _fail(name, {"proposition": list(p), "step": step, "Q_plus_c": t, "a": a[p],
                                    "c": counted[p]})
            if t > last_total[p]:
                return _fail(name, {"proposition": list(p), "step": step, "increase": [last_total[p], t]})
            last_total[p] = t
            pr = live_prior(p)
            if pr < last_prior[p] and p not in dropped:
                return _fail(name, {"proposition": list(p), "step": step, "lost-prior": list(last_prior[p]),
                                    "now": list(pr)})
            last_prior[p] = pr
    for p in a:
        if counted[p] > a[p]:
            return _fail(name, {"proposition": list(p), "c": counted[p], "a": a[p]})
    return _pass(name, propositions=len(a), max_count=worst)


def prior_tuple(prior) -> Optional[list]:
    if prior is None:
        return None
    return [prior[0].tag, prior[0].node, prior[1]]


def tree_matches_bfs(topology, nodes: dict, leader: int) -> Optional[dict]:
    """None if every node's dist to ``leader`` equals the BFS distance, else a witness."""
    truth = topology.distances_from(leader)
    for u, proto in sorted(nodes.items()):
        if proto.dist.get(leader) != truth[u]:
            return {"node": u, "dist": proto.dist.get(leader), "bfs": truth[u]}
        parent = proto.parent.get(leader)
        if u != leader and (parent not in topology.neighbors(u) or truth[parent] != truth[u] - 1):
            return {"node": u, "parent": parent}
    return None


# ----- indistinguishability and causality -----------------------------------


def check_indistinguishable(trace_x: ExecutionTrace, trace_y: ExecutionTrace, mapping: dict, t: int,
                            name: str = "indistinguishable") -> CheckResult:
    """``mapping`` sends nodes of X to a node or a collection of nodes of Y.

    Compares state digests after every round r = 0..t (one round per time
    unit under lock-step schedulers).
    """
    pairs = 0
    for u, targets in sorted(mapping.items()):
        if isinstance(targets, int):
            targets = (targets,)
        for w in targets:
            for r in range(t + 1):
                hx = hash_at_time(trace_x, u, r)
                hy = hash_at_time(trace_y, w, r)
                if hx != hy:
                    return _fail(name, {"x_node": u, "y_node": w, "round": r, "x_hash": hx, "y_hash": hy})
                pairs += 1
    return _pass(name, compared=pairs, rounds=t)


def causal_knowledge(trace: ExecutionTrace) -> dict:
    """node -> origin -> earliest time the node's causal past contains origin."""
    known = {u: {u: 0} for u in trace.topology.nodes}
    carried = {}
    for e in trace.events:
        if e.kind == BROADCAST:
            carried[(e.node, e.seq)] = dict(known[e.node])
        elif e.kind == RECEIVE:
            mine = known[e.node]
            for origin in carried.get((e.sender, e.seq), ()):
                if origin not in mine:
                    mine[origin] = e.time
    return known


def check_causal_horizon(trace: ExecutionTrace, endpoint: int, far: Iterable[int], bound: int) -> CheckResult:
    """The endpoint must not hear from any node in ``far`` before time ``bound``."""
    far = set(far)
    heard = causal_knowledge(trace)[endpoint]
    first = min((t for v, t in heard.items() if v in far), default=None)
    if first is not None and first < bound:
        who = min(v for v, t in heard.items() if v in far and t == first)
        return _fail("causal-horizon", {"endpoint": endpoint, "heard_from": who, "time": first, "bound": bound},
                     earliest=first)
    return _pass("causal-horizon", earliest=first, bound=bound)


def line_halves(topology, endpoint: int) -> list:
    """Nodes farther than half the diameter from ``endpoint``."""
    dist = topology.distances_from(endpoint)
    return sorted(v for v, h in dist.items() if 2 * h > topology.diameter)


# ----- bundles ------------------------------------------------------------


def standard_report(trace: ExecutionTrace, *, termination_bound: Optional[int] = None,
                    exact_ids: Optional[int] = None, wpaxos: bool = False) -> CheckReport:
    rep = CheckReport()
    rep.add(check_agreement(trace))
    rep.add(check_validity(trace))
    rep.add(check_termination(trace, termination_bound))
    rep.add(check_broadcast_contract(trace))
    rep.add(check_message_size(trace, exact=exact_ids))
    if wpaxos:
        rep.add(audit_counts(trace))
        rep.add(check_decide_flood(trace))
        rep.add(check_tag_bound(trace))
    rep.add(measure_times(trace))
    return rep
