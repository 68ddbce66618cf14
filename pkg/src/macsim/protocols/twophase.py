"""Two-phase consensus for single-hop networks.

Needs unique ids but not ``n``.  Phase 1 announces the initial value; at
the phase-1 ack a node is *decided(v)* if it saw no sign of the other value
and *bivalent* otherwise.  Phase 2 announces that status.  A bivalent node
then waits for a phase-2 message from every id it has heard of (its
witnesses) and decides 0 if any of them was decided(0), else 1.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ..core import NodeContext, Protocol, ProtocolMisuse

BIVALENT = "bivalent"


class Phase(str, Enum):
    INIT = "init"
    ONE = "one"
    TWO = "two"
    WITNESS = "witness"
    DONE = "done"


@dataclass(frozen=True)
class Phase1:
    id: int
    v: int

    def id_count(self) -> int:
        return 1

    def summary(self) -> str:
        return f"p1({self.id},{self.v})"


@dataclass(frozen=True)
class Phase2:
    id: int
    status: object  # BIVALENT or ("decided", v)

    def id_count(self) -> int:
        return 1

    @property
    def decided_value(self) -> Optional[int]:
        return None if self.status == BIVALENT else self.status[1]

    def summary(self) -> str:
        s = "biv" if self.status == BIVALENT else f"dec{self.status[1]}"
        return f"p2({self.id},{s})"


class TwoPhase(Protocol):
    """One node's state machine.

    ``early_decide`` lets a decided(v) node decide at its phase-2 ack.
    ``scan_r2_only`` restricts the final decided(0) scan to R2; by default
    every phase-2 message held (R1 or R2) counts.
    ``mutation`` seeds bugs for checker coverage: ``"premature-decide"``
    decides the initial value at the phase-1 ack.
    """

    def __init__(self, value: int, *, early_decide: bool = True, scan_r2_only: bool = False,
                 mutation: Optional[str] = None):
        if value not in (0, 1):
            raise ValueError("initial value must be 0 or 1")
        self.initial_value = value
        self.early_decide = early_decide
        self.scan_r2_only = scan_r2_only
        self.mutation = mutation
        self.phase = Phase.INIT
        self.me: Optional[int] = None
        self.R1: set = set()
        self.R2: set = set()
        self.status = None
        self.W: Optional[frozenset] = None
        self.decision: Optional[int] = None

    @classmethod
    def factory(cls, values, **kw):
        values = dict(enumerate(values)) if not isinstance(values, dict) else values
        return lambda u: cls(values[u], **kw)

    def state_key(self):
        return (self.phase.value, self.initial_value, frozenset(self.R1), frozenset(self.R2),
                self.status, self.W, self.decision)

    def clone(self) -> "TwoPhase":
        other = copy.copy(self)
        other.R1 = set(self.R1)
        other.R2 = set(self.R2)
        return other

    def on_start(self, ctx: NodeContext) -> None:
        if self.phase is not Phase.INIT:
            raise ProtocolMisuse("two-phase node initialised twice")
        self.me = ctx.node_id
        own = Phase1(self.me, self.initial_value)
        self.R1 = {own}
        self.phase = Phase.ONE
        ctx.broadcast(own)

    def on_receive(self, ctx: NodeContext, sender, msg) -> None:
        if self.phase is Phase.ONE:
            self.R1.add(msg)
        elif self.phase is Phase.TWO:
            self.R2.add(msg)
        elif self.phase is Phase.WITNESS:
            if isinstance(msg, Phase2):
                self.R2.add(msg)
                self._try_finish(ctx)

    def on_ack(self, ctx: NodeContext) -> None:
        if self.phase is Phase.ONE:
            v = self.initial_value
            conflict = any(
                (isinstance(m, Phase1) and m.v == 1 - v) or (isinstance(m, Phase2) and m.status == BIVALENT)
                for m in self.R1
            )
            self.status = BIVALENT if conflict else ("decided", v)
            if self.mutation == "premature-decide":
                self._decide(ctx, v)
            own = Phase2(self.me, self.status)
            self.phase = Phase.TWO
            ctx.broadcast(own)
            self.R2 = {own}
        elif self.phase is Phase.TWO:
            if self.early_decide and self.status != BIVALENT:
                self._decide(ctx, self.status[1])
                return
            self.W = frozenset(m.id for m in self.R1 | self.R2)
            self.phase = Phase.WITNESS
            self._try_finish(ctx)

    def _try_finish(self, ctx: NodeContext) -> None:
        held = {m.id for m in self.R1 | self.R2 if isinstance(m, Phase2)}
        if not self.W <= held:
            return
        pool = self.R2 if self.scan_r2_only else self.R1 | self.R2
        zero = any(isinstance(m, Phase2) and m.decided_value == 0 for m in pool)
        self._decide(ctx, 0 if zero else 1)

    def _decide(self, ctx: NodeContext, value: int) -> None:
        if self.decision is None:
            self.decision = value
            ctx.decide(value)
        self.phase = Phase.DONE if self.phase in (Phase.TWO, Phase.WITNESS) else self.phase
