"""Scheduler policies.

A scheduler is asked by the engine for the next :class:`~macsim.core.Batch`
of receives and acks.  All of them keep every ack within ``f_ack`` of the
broadcast's release and ack only after every live neighbour has received.
"""

from __future__ import annotations

import random
from typing import Optional

from .core import Batch, Simulation


class ConfigurationError(ValueError):
    pass


class Scheduler:
    name = "scheduler"

    def bind(self, sim: Simulation) -> None:
        pass

    def next_batch(self, sim: Simulation) -> Optional[Batch]:
        raise NotImplementedError


def lock_step(pending: dict, time: int) -> Batch:
    """Deliver every pending message to every recipient, then ack every sender."""
    receives = tuple((t, s) for s in sorted(pending) for t in sorted(pending[s].pending_receivers))
    return Batch(time, receives, tuple(sorted(pending)))


class LockStepScheduler(Scheduler):
    """Lock-step rounds ``spacing`` time units apart.

    ``spacing=1`` is the synchronous scheduler; ``spacing=f_ack`` is the
    max-delay variant used for the time lower bound.
    """

    def __init__(self, spacing: Optional[int] = 1, name: str = "sync"):
        self.spacing = spacing
        self.name = name
        self.rounds = 0

    def bind(self, sim: Simulation) -> None:
        if self.spacing is None:
            self.spacing = sim.config.f_ack
        if self.spacing > sim.config.f_ack:
            raise ConfigurationError("round spacing exceeds f_ack")

    def next_batch(self, sim: Simulation) -> Optional[Batch]:
        if not sim.pending:
            return None
        self.rounds += 1
        return lock_step(sim.pending, sim.now + self.spacing)


def synchronous_step(pending: dict, now: int) -> Batch:
    return lock_step(pending, now + 1)


def max_delay_step(pending: dict, now: int, f_ack: int) -> Batch:
    return lock_step(pending, now + f_ack)


def SynchronousScheduler() -> LockStepScheduler:
    return LockStepScheduler(1, "sync")


def MaxDelayScheduler() -> LockStepScheduler:
    return LockStepScheduler(None, "maxdelay")


class WithholdingScheduler(Scheduler):
    """Synchronous, except messages from ``sender`` to ``blocked`` are held
    back for the first ``t`` rounds.  After that, plain lock-step.

    The held broadcast cannot be acked until released, so its f_ack window
    is restarted at release.
    """

    def __init__(self, sender: int, blocked, t: int, name: str = "withhold"):
        if t < 0:
            raise ConfigurationError("t must be >= 0")
        self.sender = sender
        self.blocked = frozenset(blocked)
        self.t = t
        self.name = name
        self.round = 0

    def next_batch(self, sim: Simulation) -> Optional[Batch]:
        if not sim.pending:
            return None
        self.round += 1
        time = sim.now + 1
        if self.round > self.t:
            released = (self.sender,) if self.sender in sim.pending else ()
            b = lock_step(sim.pending, time)
            return Batch(b.time, b.receives, b.acks, released)
        receives, acks = [], []
        for s in sorted(sim.pending):
            inst = sim.pending[s]
            targets = sorted(inst.pending_receivers)
            if s == self.sender:
                targets = [v for v in targets if v not in self.blocked]
            receives += [(v, s) for v in targets]
            if len(targets) == len(inst.pending_receivers):
                acks.append(s)
        return Batch(time, tuple(receives), tuple(acks))


def semi_synchronous(topology, t: int) -> WithholdingScheduler:
    """Hold back the L_{D-1} endpoint's messages to both L_D copies for ``t`` rounds."""
    if topology.kind != "kd":
        raise ConfigurationError("semi-synchronous scheduler needs a K_D topology")
    meta = topology.meta
    return WithholdingScheduler(meta["endpoint"], meta["copy1"] + meta["copy2"], t, name=f"semisync:t={t}")


def delayed_bridge(topology, t: int) -> WithholdingScheduler:
    """Hold back everything bridge node q sends for ``t`` rounds."""
    if topology.kind != "netA":
        raise ConfigurationError("delayed-bridge scheduler needs network A")
    q = topology.meta["q"]
    return WithholdingScheduler(q, topology.neighbors(q), t, name=f"bridge:t={t}")


class RandomScheduler(Scheduler):
    """Receive delays uniform in [1, f_ack]; ack uniform between the last receive and f_ack.

    With ``skew`` every sender gets a fixed speed s in [1, f_ack] on first
    use and its receive delays are drawn from [ceil(s/2), s] instead.  Fast
    and slow regions then disagree about which paths are short for a while,
    which is what exercises proposal retries and carried prior values.
    """

    def __init__(self, seed: int, skew: bool = False):
        self.seed = seed
        self.skew = skew
        self.rng = random.Random(seed)
        self.plans: dict = {}
        self.speed: dict = {}
        self.name = f"random:seed={seed}" + (",skew=1" if skew else "")

    def _delay(self, sender: int, f_ack: int) -> int:
        if not self.skew:
            return self.rng.randint(1, f_ack)
        if sender not in self.speed:
            self.speed[sender] = self.rng.randint(1, f_ack)
        s = self.speed[sender]
        return self.rng.randint((s + 1) // 2, s)

    def _plan(self, inst, f_ack: int) -> dict:
        key = inst.key
        plan = self.plans.get(key)
        if plan is None:
            recv = {v: inst.issue_time + self._delay(inst.sender, f_ack) for v in sorted(inst.pending_receivers)}
            last = max(recv.values(), default=inst.issue_time + 1)
            ack = self.rng.randint(last, inst.issue_time + f_ack)
            plan = self.plans[key] = {"recv": recv, "ack": ack}
        return plan

    def next_batch(self, sim: Simulation) -> Optional[Batch]:
        if not sim.pending:
            return None
        f_ack = sim.config.f_ack
        events = []
        for s in sorted(sim.pending):
            inst = sim.pending[s]
            plan = self._plan(inst, f_ack)
            for v in inst.pending_receivers:
                events.append((max(plan["recv"][v], sim.now), "r", v, s))
            events.append((max(plan["ack"], sim.now), "a", s, s))
        time = min(e[0] for e in events)
        receives = tuple((v, s) for t, k, v, s in events if t == time and k == "r")
        acks = tuple(s for t, k, v, s in events if t == time and k == "a")
        return Batch(time, receives, acks)


def parse_scheduler(spec: str, topology=None) -> Scheduler:
    """``sync | semisync:t=<int> | bridge:t=<int> | maxdelay | random:seed=<int>[,skew=1]``"""
    kind, _, rest = spec.partition(":")
    args = {}
    for part in filter(None, rest.split(",")):
        key, _, val = part.partition("=")
        args[key.strip()] = int(val)
    if kind == "sync":
        return SynchronousScheduler()
    if kind == "maxdelay":
        return MaxDelayScheduler()
    if kind == "random":
        return RandomScheduler(args.get("seed", 0), bool(args.get("skew", 0)))
    if kind in ("semisync", "bridge"):
        if topology is None or "t" not in args:
            raise ConfigurationError(f"{kind} needs a topology and t=<int>")
        return semi_synchronous(topology, args["t"]) if kind == "semisync" else delayed_bridge(topology, args["t"])
    if kind == "exhaustive":
        raise ConfigurationError("exhaustive exploration is run through macsim.explore, not as a scheduler")
    raise ConfigurationError(f"unknown scheduler {spec!r}")
