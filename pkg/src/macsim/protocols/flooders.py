"""Counterexample protocols for the knowledge lower bounds, plus a trivial one.

Both flooders keep re-broadcasting the smallest value they know together
with a digest of everything they have heard, and decide that minimum after
a fixed number of their own acks.  Under the synchronous scheduler on a
network of diameter at most ``rounds`` this is correct.  Neither is a
consensus algorithm in general, which is the point: the scenarios show the
partition the lower-bound arguments construct.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

from ..core import NodeContext, Protocol


@dataclass(frozen=True)
class FloodMsg:
    value: int
    view: str
    origin: Optional[int] = None

    def id_count(self) -> int:
        return 0 if self.origin is None else 1

    def summary(self) -> str:
        who = "" if self.origin is None else f"{self.origin}:"
        return f"flood({who}{self.value},{self.view[:8]})"


def _fold(view: str, heard) -> str:
    h = hashlib.sha256(view.encode())
    for item in sorted(heard):
        h.update(repr(item).encode())
    return h.hexdigest()[:16]


class Flooder(Protocol):
    uses_ids = False

    def __init__(self, value: int, rounds: int):
        self.initial_value = value
        self.rounds = rounds
        self.minimum = value
        self.view = f"v{value}" if not self.uses_ids else ""
        self.done_rounds = 0
        self.inbox: list = []
        self.decision: Optional[int] = None
        self.me: Optional[int] = None

    @classmethod
    def factory(cls, values, rounds: int):
        values = dict(enumerate(values)) if not isinstance(values, dict) else values
        return lambda u: cls(values[u], rounds)

    def state_key(self):
        return (self.minimum, self.view, self.done_rounds, tuple(sorted(self.inbox)), self.decision)

    def _message(self) -> FloodMsg:
        return FloodMsg(self.minimum, self.view, self.me)

    def on_start(self, ctx: NodeContext) -> None:
        if self.uses_ids:
            self.me = ctx.node_id
            self.view = f"{self.me}:v{self.initial_value}"
        ctx.broadcast(self._message())

    def on_receive(self, ctx: NodeContext, sender, msg: FloodMsg) -> None:
        self.inbox.append((msg.value, msg.view) if not self.uses_ids else (msg.origin, msg.value, msg.view))

    def on_ack(self, ctx: NodeContext) -> None:
        self.done_rounds += 1
        for item in self.inbox:
            self.minimum = min(self.minimum, item[-2])
        self.view = _fold(self.view, self.inbox)
        self.inbox = []
        if self.done_rounds >= self.rounds and self.decision is None:
            self.decision = self.minimum
            ctx.decide(self.minimum)
        ctx.broadcast(self._message())


class AnonFlooder(Flooder):
    """Never reads its id; messages carry no ids."""


class IdFlooder(Flooder):
    """Same rule, but ids are mixed into every message and view."""

    uses_ids = True


class BroadcastOnce(Protocol):
    """Broadcast the initial value once and decide it at the ack."""

    def __init__(self, value: int):
        self.initial_value = value
        self.decided = False
        self.heard: list = []

    def state_key(self):
        return (self.initial_value, self.decided, tuple(sorted(self.heard)))

    def on_start(self, ctx):
        ctx.broadcast(("value", self.initial_value))

    def on_receive(self, ctx, sender, msg):
        self.heard.append(msg[1])

    def on_ack(self, ctx):
        self.decided = True
        ctx.decide(self.initial_value)
