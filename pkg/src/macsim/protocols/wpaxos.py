"""wPAXOS: PAXOS proposer/acceptor logic over four support services.

Every node is both proposer and acceptor.  The services are

* leader election: flood the largest id seen (``omega``);
* tree building: Bellman-Ford search messages per root, with the current
  leader's entry always at the front of the queue;
* change: whenever ``omega`` or ``dist[omega]`` changes, stamp the event
  with a Lamport clock and flood it; a node that believes itself leader
  starts a fresh proposal whenever its change queue is replaced;
* broadcast: take one entry from every non-empty queue and send them as a
  single bundle.

Prepare/propose messages are flooded.  Acceptor responses travel up the
leader's shortest-path tree as pseudo-unicasts and are merged into one
counted response whenever two for the same proposition, polarity and
destination meet in a queue.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from ..core import NodeContext, Protocol

PREPARE = "prepare"
PROPOSE = "propose"
INF = float("inf")


@dataclass(frozen=True, order=True)
class ProposalNumber:
    tag: int
    node: int

    def __str__(self) -> str:
        return f"{self.tag}.{self.node}"


def prop_key(kind: str, number: ProposalNumber) -> tuple:
    return (kind, number.tag, number.node)


def prior_key(prior) -> Optional[tuple]:
    return None if prior is None else (prior[0].tag, prior[0].node, prior[1])


@dataclass(frozen=True)
class LeaderMsg:
    leader: int


@dataclass(frozen=True)
class ChangeMsg:
    clock: int
    origin: int

    @property
    def stamp(self) -> tuple:
        return (self.clock, self.origin)


@dataclass(frozen=True)
class SearchMsg:
    root: int
    hops: int


@dataclass(frozen=True)
class ProposerMsg:
    kind: str
    number: ProposalNumber
    value: Optional[int] = None


@dataclass(frozen=True)
class DecideMsg:
    value: int


@dataclass(frozen=True)
class Response:
    kind: str
    number: ProposalNumber
    positive: bool
    count: int = 1
    prior: Optional[tuple] = None  # (ProposalNumber, value), max among merged
    committed: Optional[ProposalNumber] = None  # carried by rejections
    dest: Optional[int] = None
    # audit-only provenance: which acceptors this response stands for.  Not
    # part of the wire format, never read by protocol logic, excluded from
    # equality and from the id count.
    members: frozenset = field(default=frozenset(), compare=False, repr=False)

    @property
    def proposer(self) -> int:
        return self.number.node

    @property
    def key(self) -> tuple:
        return prop_key(self.kind, self.number)

    @property
    def merge_key(self) -> tuple:
        return (self.kind, self.number, self.positive, self.dest)

    def id_count(self) -> int:
        return 2 + (self.prior is not None) + (self.committed is not None)


def _max_prior(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a if a[0] >= b[0] else b


def _max_opt(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return max(a, b)


def aggregate(a: Response, b: Response, mutation: Optional[str] = None) -> Response:
    """Merge two responses to the same proposition, polarity and destination."""
    if a.merge_key != b.merge_key:
        raise ValueError("responses with different keys cannot be merged")
    count = a.count + b.count
    prior = _max_prior(a.prior, b.prior)
    if mutation == "double-count":
        count += b.count
    elif mutation == "drop-merge-max":
        prior = a.prior
    return replace(a, count=count, prior=prior, committed=_max_opt(a.committed, b.committed),
                   members=a.members | b.members)


@dataclass(frozen=True)
class Bundle:
    """One wire message: at most one entry from each queue."""

    sender: int
    clock: int
    decide: Optional[DecideMsg] = None
    leader: Optional[LeaderMsg] = None
    change: Optional[ChangeMsg] = None
    search: Optional[SearchMsg] = None
    proposer: Optional[ProposerMsg] = None
    response: Optional[Response] = None

    def components(self) -> list:
        return [name for name in ("decide", "leader", "change", "search", "proposer", "response")
                if getattr(self, name) is not None]

    def id_count(self) -> int:
        ids = 1  # sender
        ids += self.leader is not None
        ids += self.change is not None
        ids += self.search is not None
        ids += self.proposer is not None
        if self.response is not None:
            ids += self.response.id_count()
        return ids

    def summary(self) -> str:
        parts = []
        if self.decide:
            parts.append(f"decide({self.decide.value})")
        if self.leader:
            parts.append(f"leader({self.leader.leader})")
        if self.change:
            parts.append(f"change({self.change.clock}.{self.change.origin})")
        if self.search:
            parts.append(f"search({self.search.root},{self.search.hops})")
        if self.proposer:
            p = self.proposer
            parts.append(f"{p.kind}({p.number}{'' if p.value is None else ',' + str(p.value)})")
        if self.response:
            r = self.response
            sign = "+" if r.positive else "-"
            parts.append(f"resp({r.kind},{r.number},{sign}{r.count},->{r.dest})")
        return f"{self.sender}@{self.clock}[" + " ".join(parts) + "]"


IDLE, PREPARING, PROPOSING, DECIDED = "idle", "preparing", "proposing", "decided"


class WPaxos(Protocol):
    def __init__(self, value: int, n: int, *, mutation: Optional[str] = None):
        if value not in (0, 1):
            raise ValueError("initial value must be 0 or 1")
        if n < 1:
            raise ValueError("n must be >= 1")
        self.initial_value = value
        self.n = n
        self.majority = n // 2 + 1
        self.mutation = mutation
        self.me: Optional[int] = None
        # leader election
        self.omega: Optional[int] = None
        self.leader_q: Optional[LeaderMsg] = None
        # tree building
        self.dist: dict = {}
        self.parent: dict = {}
        self.tree_q: list = []
        # change
        self.clock = 0
        self.last_change: Optional[tuple] = None
        self.change_q: Optional[ChangeMsg] = None
        # proposer
        self.max_tag = 0
        self.number: Optional[ProposalNumber] = None
        self.phase = IDLE
        self.value: Optional[int] = None
        self.pos = 0
        self.neg = 0
        self.prior_best = None
        self.committed_best: Optional[ProposalNumber] = None
        self.retries_left = 0
        # acceptor
        self.promised: Optional[ProposalNumber] = None
        self.accepted: Optional[tuple] = None
        # dissemination
        self.seen: set = set()
        self.best_from: dict = {}
        self.flood_q: list = []
        self.resp_q: list = []
        self.decide_q: Optional[DecideMsg] = None
        self.decision: Optional[int] = None
        self.sending = False

    @classmethod
    def factory(cls, values, n: Optional[int] = None, **kw):
        values = dict(enumerate(values)) if not isinstance(values, dict) else values
        size = len(values) if n is None else n
        return lambda u: cls(values[u], size, **kw)

    def state_key(self):
        return (
            self.omega, self.leader_q, sorted(self.dist.items()), sorted(self.parent.items()),
            tuple(self.tree_q), self.clock, self.last_change, self.change_q,
            self.max_tag, self.number, self.phase, self.value, self.pos, self.neg, self.prior_best,
            self.committed_best, self.retries_left, self.promised, self.accepted,
            tuple(self.flood_q), tuple(self.resp_q), self.decide_q, self.decision, self.sending,
        )

    # ----- engine callbacks -------------------------------------------------

    def on_start(self, ctx: NodeContext) -> None:
        self.me = ctx.node_id
        self.omega = self.me
        self.leader_q = LeaderMsg(self.me)
        self.dist = {self.me: 0}
        self.parent = {self.me: self.me}
        self.tree_q = [SearchMsg(self.me, 1)]
        # initialising omega and dist counts as the first change
        self._on_change(ctx)
        self._pump(ctx)

    def on_receive(self, ctx: NodeContext, sender, b: Bundle) -> None:
        self.clock = max(self.clock, b.clock) + 1
        if b.decide is not None:
            if self.decision is not None and b.decide.value != self.decision:
                ctx.note("decide-conflict", held=self.decision, received=b.decide.value, sender=b.sender)
            self._decide(ctx, b.decide.value)
        changed = False
        if b.leader is not None:
            changed |= self._leader_receive(ctx, b.leader.leader)
        if b.search is not None:
            changed |= self._tree_receive(b.search, sender)
        if changed:
            self._on_change(ctx)
        if b.change is not None:
            self._change_receive(ctx, b.change)
        if b.proposer is not None:
            self._flood_receive(ctx, b.proposer)
        if b.response is not None and b.response.dest == self.me:
            self._response_receive(ctx, b.response)
        self._pump(ctx)

    def on_ack(self, ctx: NodeContext) -> None:
        self.sending = False
        self.clock += 1
        self._pump(ctx)

    # ----- leader election --------------------------------------------------

    def _leader_receive(self, ctx: NodeContext, leader: int) -> bool:
        if leader <= self.omega:
            return False
        self.omega = leader
        self.leader_q = LeaderMsg(leader)
        self._front_leader_search()
        self.flood_q = [m for m in self.flood_q if m.number.node == leader]
        self._purge_responses(ctx, lambda r: r.proposer != leader)
        if self.phase in (PREPARING, PROPOSING):
            self.phase = IDLE
        ctx.note("leader", omega=leader)
        return True

    # ----- tree building --------------------------------------------------

    def _tree_receive(self, msg: SearchMsg, sender) -> bool:
        if msg.hops >= self.dist.get(msg.root, INF):
            return False
        self.dist[msg.root] = msg.hops
        self.parent[msg.root] = sender
        self._tree_update_q(SearchMsg(msg.root, msg.hops + 1))
        return msg.root == self.omega

    def _tree_update_q(self, msg: SearchMsg) -> None:
        self.tree_q = [m for m in self.tree_q if not (m.root == msg.root and m.hops > msg.hops)]
        self.tree_q.append(msg)
        self._front_leader_search()

    def _front_leader_search(self) -> None:
        for i, m in enumerate(self.tree_q):
            if m.root == self.omega:
                if i:
                    self.tree_q.insert(0, self.tree_q.pop(i))
                return

    # ----- change service --------------------------------------------------

    def _on_change(self, ctx: NodeContext) -> None:
        self.clock += 1
        self.last_change = (self.clock, self.me)
        ctx.note("change", stamp=list(self.last_change), omega=self.omega,
                 dist=self.dist.get(self.omega))
        self._change_update_q(ctx, ChangeMsg(self.clock, self.me))

    def _change_receive(self, ctx: NodeContext, msg: ChangeMsg) -> None:
        if self.last_change is not None and msg.stamp <= self.last_change:
            return
        self.last_change = msg.stamp
        self._change_update_q(ctx, msg)

    def _change_update_q(self, ctx: NodeContext, msg: ChangeMsg) -> None:
        self.change_q = msg
        if self.omega == self.me:
            self.generate_new_proposal(ctx)

    # ----- proposer ---------------------------------------------------------

    def generate_new_proposal(self, ctx: NodeContext) -> None:
        if self.decision is not None:
            return
        self.retries_left = 1
        self._start_prepare(ctx)

    def _start_prepare(self, ctx: NodeContext) -> None:
        self.max_tag += 1
        self.number = ProposalNumber(self.max_tag, self.me)
        self.phase = PREPARING
        self._reset_counts()
        ctx.note("proposal", number=[self.number.tag, self.number.node])
        self._flood_receive(ctx, ProposerMsg(PREPARE, self.number))

    def _start_propose(self, ctx: NodeContext, value: int) -> None:
        self.phase = PROPOSING
        self.value = value
        self._reset_counts()
        self._flood_receive(ctx, ProposerMsg(PROPOSE, self.number, value))

    def _reset_counts(self) -> None:
        self.pos = self.neg = 0
        self.prior_best = None
        self.committed_best = None

    def _see(self, number: Optional[ProposalNumber]) -> None:
        if number is not None and number.tag > self.max_tag:
            self.max_tag = number.tag

    def _count(self, ctx: NodeContext, r: Response) -> None:
        if r.positive:
            ctx.note("count", prop=r.key, k=r.count, prior=prior_key(r.prior), members=sorted(r.members))
        self._see(r.number)
        self._see(r.committed)
        if r.prior is not None:
            self._see(r.prior[0])
        want = PREPARE if self.phase == PREPARING else PROPOSE if self.phase == PROPOSING else None
        if want is None or r.kind != want or r.number != self.number:
            return
        if r.positive:
            self.pos += r.count
            self.prior_best = _max_prior(self.prior_best, r.prior)
        else:
            self.neg += r.count
            self.committed_best = _max_opt(self.committed_best, r.committed)
        if self.pos >= self.majority:
            if self.phase == PREPARING:
                value = self.prior_best[1] if self.prior_best is not None else self.initial_value
                self._start_propose(ctx, value)
            else:
                self._decide(ctx, self.value)
        elif self.neg > self.n - self.majority:
            learned = self.committed_best is not None and self.committed_best > self.number
            if learned and self.omega == self.me and self.retries_left > 0:
                self.retries_left -= 1
                self._start_prepare(ctx)
            else:
                self.phase = IDLE

    def _decide(self, ctx: NodeContext, value: int) -> None:
        if self.decision is not None:
            return
        self.decision = value
        self.phase = DECIDED
        self.decide_q = DecideMsg(value)
        ctx.decide(value)

    # ----- flooding and acceptor ---------------------------------------------

    def _flood_receive(self, ctx: NodeContext, msg: ProposerMsg) -> None:
        self._see(msg.number)
        key = (msg.kind, msg.number)
        if key in self.seen:
            return
        self.seen.add(key)
        proposer = msg.number.node
        self._raise_best(ctx, proposer, msg.number)
        if proposer == self.omega and msg.number >= self.best_from[proposer]:
            self.flood_q = [m for m in self.flood_q if m.number >= msg.number] + [msg]
        self._accept(ctx, msg)

    def _raise_best(self, ctx: NodeContext, proposer: int, number: ProposalNumber) -> None:
        if number > self.best_from.get(proposer, number) or proposer not in self.best_from:
            self.best_from[proposer] = number
            if proposer == self.omega:
                self.flood_q = [m for m in self.flood_q if m.number >= number]
                self._purge_responses(ctx, lambda r: r.proposer == proposer and r.number < number)

    def _accept(self, ctx: NodeContext, msg: ProposerMsg) -> None:
        if msg.kind == PREPARE:
            ok = self.promised is None or msg.number > self.promised
            if ok:
                self.promised = msg.number
                r = Response(PREPARE, msg.number, True, 1, prior=self.accepted)
            else:
                r = Response(PREPARE, msg.number, False, 1, committed=self.promised)
        else:
            ok = self.promised is None or msg.number >= self.promised
            if ok:
                self.promised = msg.number
                self.accepted = (msg.number, msg.value)
                r = Response(PROPOSE, msg.number, True, 1)
            else:
                r = Response(PROPOSE, msg.number, False, 1, committed=self.promised)
        ctx.note("respond", prop=r.key, positive=ok, prior=prior_key(r.prior))
        r = replace(r, members=frozenset({self.me}))
        if msg.number.node == self.me:
            self._count(ctx, r)
        else:
            self._enqueue_response(ctx, r)

    def _response_receive(self, ctx: NodeContext, r: Response) -> None:
        if r.proposer == self.me:
            self._count(ctx, r)
        else:
            self._raise_best(ctx, r.proposer, r.number)
            self._enqueue_response(ctx, r)

    def _enqueue_response(self, ctx: NodeContext, r: Response) -> None:
        proposer = r.proposer
        if proposer != self.omega or r.number < self.best_from.get(proposer, r.number):
            if r.positive:
                ctx.note("drop", prop=r.key, k=r.count)
            return
        r = replace(r, dest=self.parent.get(proposer))
        for i, e in enumerate(self.resp_q):
            if e.merge_key == r.merge_key:
                self.resp_q[i] = aggregate(e, r, self.mutation)
                break
        else:
            self.resp_q.append(r)
        self._note_queue(ctx, r.key)

    def _purge_responses(self, ctx: NodeContext, doomed) -> None:
        keep, gone = [], []
        for r in self.resp_q:
            (gone if doomed(r) else keep).append(r)
        if not gone:
            return
        self.resp_q = keep
        for r in gone:
            if r.positive:
                ctx.note("drop", prop=r.key, k=r.count)
        for key in sorted({r.key for r in gone}):
            self._note_queue(ctx, key)

    def _note_queue(self, ctx: NodeContext, key: tuple) -> None:
        total, prior, members = 0, None, set()
        for r in self.resp_q:
            if r.positive and r.key == key:
                total += r.count
                prior = _max_prior(prior, r.prior)
                members |= r.members
        ctx.note("rqueue", prop=key, count=total, prior=prior_key(prior), members=sorted(members))

    # ----- broadcast service --------------------------------------------

    def _pump(self, ctx: NodeContext) -> None:
        if self.sending:
            return
        response = None
        for i, r in enumerate(self.resp_q):
            dest = r.dest if r.dest is not None else self.parent.get(r.proposer)
            if dest is not None:
                response = replace(self.resp_q.pop(i), dest=dest)
                break
        b = Bundle(
            self.me,
            self.clock,
            decide=self.decide_q,
            leader=self.leader_q,
            change=self.change_q,
            search=self.tree_q.pop(0) if self.tree_q else None,
            proposer=self.flood_q.pop(0) if self.flood_q else None,
            response=response,
        )
        if not b.components():
            return
        self.decide_q = self.leader_q = self.change_q = None
        self.sending = ctx.broadcast(b)
        if response is not None:
            self._note_queue(ctx, response.key)
