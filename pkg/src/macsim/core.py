"""Deterministic event engine for the abstract MAC layer.

Nodes communicate only through acknowledged local broadcast.  A broadcast
is received by every live neighbour at some virtual time after it was
issued, and the sender gets an ack once all of them have it.  The timing
of every receive and ack is chosen by a scheduler (see
:mod:`macsim.schedulers`) and must respect the ``f_ack`` bound.  Local
computation takes zero time.

The engine records everything into an :class:`ExecutionTrace`, which is the
only input the checkers ever look at.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Optional

from .topology import Topology

# event kinds; the first three are scheduled, the rest are derived
RECEIVE = "receive"
ACK = "ack"
CRASH = "crash"
START = "start"
BROADCAST = "broadcast"
DISCARD = "discard"
DECIDE = "decide"
NOTE = "note"
VIOLATION = "violation"

KIND_RANK = {RECEIVE: 0, ACK: 1, CRASH: 2}


class SimulationError(Exception):
    """Base class for engine errors."""


class SchedulerContractError(SimulationError):
    """A scheduler asked for something the model forbids."""


class ProtocolMisuse(SimulationError):
    """A protocol state machine was driven in a way it does not allow."""


class AnonymityError(SimulationError):
    """An anonymous protocol tried to read its node id."""


class _Abort(Exception):
    pass


@dataclass(frozen=True)
class CrashSpec:
    node: int
    time: int
    partial: frozenset = frozenset()


@dataclass
class SimConfig:
    f_ack: int = 1
    id_capacity: int = 12
    crash_plan: tuple = ()

    def __post_init__(self):
        if self.f_ack < 1:
            raise ValueError("f_ack must be >= 1")
        if self.id_capacity < 1:
            raise ValueError("id_capacity must be >= 1")
        self.crash_plan = tuple(
            c if isinstance(c, CrashSpec) else CrashSpec(c[0], c[1], frozenset(c[2]))
            for c in self.crash_plan
        )

    def to_dict(self) -> dict:
        return {
            "f_ack": self.f_ack,
            "id_capacity": self.id_capacity,
            "crash_plan": [[c.node, c.time, sorted(c.partial)] for c in self.crash_plan],
        }


@dataclass
class BroadcastInstance:
    sender: int
    seq: int
    payload: Any
    issue_time: int
    pending_receivers: set
    receivers: dict = field(default_factory=dict)  # node -> receive time
    ack_time: Optional[int] = None
    # start of the f_ack window; schedulers that withhold a message move it
    release_time: Optional[int] = None
    crashed: bool = False

    def __post_init__(self):
        if self.release_time is None:
            self.release_time = self.issue_time

    @property
    def key(self) -> tuple:
        return (self.sender, self.seq)


@dataclass(frozen=True)
class SimEvent:
    step: int
    time: int
    kind: str
    node: int
    sender: Optional[int] = None
    seq: Optional[int] = None
    payload: Any = None
    data: Any = None

    def to_json(self) -> dict:
        out = {
            "step": self.step,
            "time": self.time,
            "kind": self.kind,
            "node": self.node,
            "sender": self.sender,
            "seq": self.seq,
            "payload_summary": summarize(self.payload),
        }
        if self.data is not None:
            out["data"] = canonical(self.data)
        return out


@dataclass(frozen=True)
class Decision:
    value: int
    time: int
    step: int


def canonical(obj: Any) -> Any:
    """Turn ``obj`` into nested lists/tuples with a stable ordering."""
    if isinstance(obj, dict):
        return [[canonical(k), canonical(v)] for k, v in sorted(obj.items(), key=lambda kv: repr(canonical(kv[0])))]
    if isinstance(obj, (set, frozenset)):
        return sorted((canonical(x) for x in obj), key=repr)
    if isinstance(obj, (list, tuple)):
        return [canonical(x) for x in obj]
    if hasattr(obj, "state_key"):
        return canonical(obj.state_key())
    if hasattr(obj, "__dataclass_fields__"):
        return [type(obj).__name__] + [canonical(getattr(obj, f)) for f in obj.__dataclass_fields__]
    if obj is None or isinstance(obj, (int, str, bool, float)):
        return obj
    return repr(obj)


def summarize(payload: Any) -> Optional[str]:
    if payload is None:
        return None
    if hasattr(payload, "summary"):
        return payload.summary()
    return json.dumps(canonical(payload), separators=(",", ":"))


def digest(obj: Any) -> str:
    raw = json.dumps(canonical(obj), separators=(",", ":"), default=repr)
    return hashlib.sha256(raw.encode()).hexdigest()[:20]


def id_count(payload: Any) -> int:
    fn = getattr(payload, "id_count", None)
    return fn() if fn is not None else 0


class Protocol:
    """Per-node deterministic state machine driven by engine callbacks."""

    initial_value: Optional[int] = None

    def on_start(self, ctx: "NodeContext") -> None:
        pass

    def on_receive(self, ctx: "NodeContext", sender: Optional[int], payload: Any) -> None:
        pass

    def on_ack(self, ctx: "NodeContext") -> None:
        pass

    def state_key(self) -> Any:
        raise NotImplementedError

    def clone(self) -> "Protocol":
        return copy.deepcopy(self)


class NodeContext:
    """What a protocol may see and do.  Deliberately no clock and no ``n``."""

    __slots__ = ("_sim", "_node")

    def __init__(self, sim: "Simulation", node: int):
        self._sim = sim
        self._node = node

    @property
    def node_id(self) -> int:
        if self._sim.anonymous:
            raise AnonymityError("protocol read its id in anonymous mode")
        return self._node

    def broadcast(self, payload: Any) -> bool:
        return self._sim.issue_broadcast(self._node, payload)

    def decide(self, value: int) -> None:
        self._sim._decide(self._node, value)

    def note(self, kind: str, **data: Any) -> None:
        self._sim._record(NOTE, self._node, data={"kind": kind, **data})


ProtocolFactory = Callable[[int], Protocol]


@dataclass
class ExecutionTrace:
    config: SimConfig
    topology: Topology
    protocol: str
    scheduler: str
    anonymous: bool
    events: list
    instances: list
    decisions: dict
    hashes: dict
    initial_values: dict
    crashed: frozenset
    terminated: bool
    horizon_hit: bool
    aborted: Optional[str]
    end_time: int

    def to_jsonl(self) -> str:
        header = {
            "config": self.config.to_dict(),
            "topology": {"n": self.topology.n, "diameter": self.topology.diameter, "name": self.topology.name},
            "protocol": self.protocol,
            "scheduler": self.scheduler,
            "anonymous": self.anonymous,
            "terminated": self.terminated,
            "aborted": self.aborted,
            "end_time": self.end_time,
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps(e.to_json(), sort_keys=True) for e in self.events]
        return "\n".join(lines) + "\n"

    def trace_hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def events_of(self, *kinds: str) -> Iterable[SimEvent]:
        return (e for e in self.events if e.kind in kinds)

    def notes(self, kind: Optional[str] = None) -> Iterable[SimEvent]:
        for e in self.events:
            if e.kind == NOTE and (kind is None or e.data["kind"] == kind):
                yield e

    def decision_time(self) -> Optional[int]:
        if not self.terminated:
            return None
        return max((d.time for d in self.decisions.values()), default=0)


def node_state_hash(trace: ExecutionTrace, node: int, step_index: int) -> str:
    """Digest of ``node``'s state right after trace step ``step_index``."""
    seq = trace.hashes[node]
    if not seq or step_index < 0:
        raise IndexError("step before the node was initialised")
    found = None
    for step, _time, dig in seq:
        if step > step_index:
            break
        found = dig
    if found is None:
        raise IndexError("step before the node was initialised")
    return found


def hash_at_time(trace: ExecutionTrace, node: int, time: int) -> str:
    """Digest of ``node``'s state after all events at virtual time <= ``time``."""
    found = None
    for _step, t, dig in trace.hashes[node]:
        if t > time:
            break
        found = dig
    if found is None:
        raise IndexError(f"node {node} has no state at time {time}")
    return found


@dataclass(frozen=True)
class Batch:
    """Events a scheduler wants applied at one virtual time.

    ``receives`` holds (target, sender) pairs, ``acks`` holds senders.
    ``released`` lists senders whose withheld message is being let go; their
    f_ack window restarts one tick before ``time``.
    """

    time: int
    receives: tuple = ()
    acks: tuple = ()
    released: tuple = ()


class Simulation:
    """One run of a protocol over a topology.  Not thread-safe; one owner at a time."""

    def __init__(
        self,
        topology: Topology,
        protocol_factory: ProtocolFactory,
        config: Optional[SimConfig] = None,
        *,
        anonymous: bool = False,
        record_hashes: bool = True,
        protocol_name: str = "",
        stop_when_decided: bool = True,
    ):
        if not topology.is_connected():
            raise ValueError("topology must be connected")
        self.topology = topology
        self.config = config or SimConfig()
        self.anonymous = anonymous
        self.record_hashes = record_hashes
        self.protocol_name = protocol_name
        # False keeps running after universal decision, until quiescence
        self.stop_when_decided = stop_when_decided
        self.scheduler_name = ""
        self.now = 0
        self.nodes = {u: protocol_factory(u) for u in topology.nodes}
        self._ctx = {u: NodeContext(self, u) for u in topology.nodes}
        self.pending: dict = {}
        self.crashed: set = set()
        self.next_seq = {u: 0 for u in topology.nodes}
        self.events: list = []
        self.instances: list = []
        self.decisions: dict = {}
        self.hashes = {u: [] for u in topology.nodes}
        self._last_hash: dict = {}
        self.aborted: Optional[str] = None
        self.horizon_hit = False
        self.started = False
        self._crashes = sorted(self.config.crash_plan, key=lambda c: (c.time, c.node))

    # ----- recording -------------------------------------------------------

    def _record(self, kind, node, sender=None, seq=None, payload=None, data=None) -> SimEvent:
        ev = SimEvent(len(self.events), self.now, kind, node, sender, seq, payload, data)
        self.events.append(ev)
        return ev

    def _snapshot(self, node: int) -> None:
        if not self.record_hashes:
            return
        proto = self.nodes[node]
        key = proto.state_key()
        dig = digest(key if self.anonymous else (node, key))
        if self._last_hash.get(node) != dig:
            self._last_hash[node] = dig
            self.hashes[node].append((len(self.events) - 1, self.now, dig))

    def _decide(self, node: int, value: int) -> None:
        if node in self.decisions:
            if self.decisions[node].value != value:
                self._record(VIOLATION, node, data={"kind": "re-decide", "value": value})
            return
        ev = self._record(DECIDE, node, data={"value": value})
        self.decisions[node] = Decision(value, self.now, ev.step)

    # ----- model operations -------------------------------------------------

    def start(self) -> None:
        if self.started:
            raise ProtocolMisuse("simulation already started")
        self.started = True
        try:
            for u in self.topology.nodes:
                self._record(START, u)
                self.nodes[u].on_start(self._ctx[u])
                self._snapshot(u)
        except _Abort:
            pass

    def issue_broadcast(self, node: int, payload: Any) -> bool:
        if node in self.crashed:
            self._record(DISCARD, node, payload=payload, data={"reason": "crashed"})
            return False
        if node in self.pending:
            self._record(DISCARD, node, payload=payload, data={"reason": "pending"})
            return False
        ids = id_count(payload)
        if ids > self.config.id_capacity:
            self._record(VIOLATION, node, payload=payload,
                         data={"kind": "message-size", "ids": ids, "cap": self.config.id_capacity})
            self.aborted = "message-size"
            raise _Abort()
        seq = self.next_seq[node]
        self.next_seq[node] += 1
        receivers = {v for v in self.topology.neighbors(node) if v not in self.crashed}
        inst = BroadcastInstance(node, seq, payload, self.now, receivers)
        self.pending[node] = inst
        self.instances.append(inst)
        self._record(BROADCAST, node, sender=node, seq=seq, payload=payload, data={"ids": ids})
        return True

    def deliver(self, target: int, sender: int) -> None:
        inst = self.pending.get(sender)
        if inst is None:
            raise SchedulerContractError(f"no pending broadcast from {sender}")
        if target not in inst.pending_receivers:
            raise SchedulerContractError(f"{target} is not awaiting broadcast {inst.key}")
        if self.now <= inst.issue_time:
            raise SchedulerContractError(f"receive of {inst.key} not after its issue time")
        inst.pending_receivers.discard(target)
        inst.receivers[target] = self.now
        self._record(RECEIVE, target, sender=sender, seq=inst.seq, payload=inst.payload)
        if target in self.crashed:
            return
        self.nodes[target].on_receive(self._ctx[target], None if self.anonymous else sender, inst.payload)
        self._snapshot(target)

    def ack(self, sender: int) -> None:
        inst = self.pending.get(sender)
        if inst is None:
            raise SchedulerContractError(f"no pending broadcast from {sender}")
        if inst.pending_receivers:
            raise SchedulerContractError(
                f"ack for {inst.key} before {sorted(inst.pending_receivers)} received it")
        if self.now - inst.release_time > self.config.f_ack:
            raise SchedulerContractError(
                f"ack for {inst.key} at {self.now} exceeds f_ack={self.config.f_ack} "
                f"from {inst.release_time}")
        inst.ack_time = self.now
        del self.pending[sender]
        self._record(ACK, sender, sender=sender, seq=inst.seq)
        self.nodes[sender].on_ack(self._ctx[sender])
        self._snapshot(sender)

    def apply_crash(self, node: int, partial: Iterable[int] = ()) -> None:
        if node in self.crashed:
            return
        inst = self.pending.pop(node, None)
        if inst is not None:
            inst.crashed = True
            if self.now > inst.issue_time:
                for v in sorted(set(partial) & inst.pending_receivers):
                    inst.pending_receivers.discard(v)
                    inst.receivers[v] = self.now
                    self._record(RECEIVE, v, sender=node, seq=inst.seq, payload=inst.payload)
                    if v not in self.crashed:
                        self.nodes[v].on_receive(self._ctx[v], None if self.anonymous else node, inst.payload)
                        self._snapshot(v)
            inst.pending_receivers.clear()
        self.crashed.add(node)
        for other in self.pending.values():
            other.pending_receivers.discard(node)
        self._record(CRASH, node, data={"partial": sorted(partial)})

    def apply_batch(self, batch: Batch) -> None:
        if batch.time < self.now:
            raise SchedulerContractError("batch scheduled in the past")
        self.now = batch.time
        for s in batch.released:
            if s in self.pending:
                self.pending[s].release_time = max(self.pending[s].release_time, batch.time - 1)
        items = [((KIND_RANK[RECEIVE], t, self.pending[s].seq if s in self.pending else -1, s), RECEIVE, t, s)
                 for t, s in batch.receives]
        items += [((KIND_RANK[ACK], s, self.pending[s].seq if s in self.pending else -1, s), ACK, s, s)
                  for s in batch.acks]
        items.sort()
        for _key, kind, node, sender in items:
            if self.done:
                return
            if kind == RECEIVE:
                self.deliver(node, sender)
            else:
                self.ack(sender)

    def fork(self, keep_history: bool = True) -> "Simulation":
        """Independent copy of this run, used by the exhaustive explorer."""
        other = copy.copy(self)
        other.nodes = {u: p.clone() for u, p in self.nodes.items()}
        other._ctx = {u: NodeContext(other, u) for u in self.topology.nodes}
        other.pending = {
            u: replace(inst, pending_receivers=set(inst.pending_receivers), receivers=dict(inst.receivers))
            for u, inst in self.pending.items()
        }
        other.crashed = set(self.crashed)
        other.next_seq = dict(self.next_seq)
        other.decisions = dict(self.decisions)
        other._crashes = list(self._crashes)
        other._last_hash = dict(self._last_hash)
        if keep_history:
            fresh = {inst.key: inst for inst in other.pending.values()}
            other.events = list(self.events)
            other.instances = [fresh.get(i.key, i) for i in self.instances]
            other.hashes = {u: list(v) for u, v in self.hashes.items()}
        else:
            other.events, other.instances = [], []
            other.hashes = {u: [] for u in self.topology.nodes}
        return other

    # ----- status ---------------------------------------------------------

    @property
    def alive(self) -> list:
        return [u for u in self.topology.nodes if u not in self.crashed]

    @property
    def all_decided(self) -> bool:
        return all(u in self.decisions for u in self.alive)

    @property
    def done(self) -> bool:
        return self.aborted is not None or (self.stop_when_decided and self.all_decided)

    def run(self, scheduler, horizon: int) -> ExecutionTrace:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.scheduler_name = getattr(scheduler, "name", type(scheduler).__name__)
        scheduler.bind(self)
        if not self.started:
            self.start()
        crashes = list(self._crashes)
        try:
            while not self.done:
                batch = scheduler.next_batch(self)
                if crashes and (batch is None or crashes[0].time < batch.time):
                    c = crashes.pop(0)
                    if c.time > horizon:
                        self.horizon_hit = True
                        break
                    self.now = max(self.now, c.time)
                    self.apply_crash(c.node, c.partial)
                    continue
                if batch is None:
                    break
                if batch.time > horizon:
                    self.horizon_hit = True
                    break
                self.apply_batch(batch)
                while crashes and crashes[0].time == self.now and not self.done:
                    c = crashes.pop(0)
                    self.apply_crash(c.node, c.partial)
        except _Abort:
            pass
        return self.trace()

    def trace(self) -> ExecutionTrace:
        return ExecutionTrace(
            config=self.config,
            topology=self.topology,
            protocol=self.protocol_name,
            scheduler=self.scheduler_name,
            anonymous=self.anonymous,
            events=list(self.events),
            instances=list(self.instances),
            decisions=dict(self.decisions),
            hashes={u: list(v) for u, v in self.hashes.items()},
            initial_values={u: p.initial_value for u, p in self.nodes.items()},
            crashed=frozenset(self.crashed),
            terminated=self.aborted is None and self.all_decided,
            horizon_hit=self.horizon_hit,
            aborted=self.aborted,
            end_time=self.now,
        )


def run_simulation(
    topology: Topology,
    protocol_factory: ProtocolFactory,
    scheduler,
    config: Optional[SimConfig] = None,
    horizon: int = 10_000,
    **kwargs,
) -> ExecutionTrace:
    """Run one execution to universal decision, quiescence or ``horizon``."""
    sim = Simulation(topology, protocol_factory, config, **kwargs)
    return sim.run(scheduler, horizon)
