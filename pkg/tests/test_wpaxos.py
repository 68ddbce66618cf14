import pytest
from hypothesis import given, settings, strategies as st

from macsim import checkers
from macsim.core import SimConfig, Simulation, run_simulation
from macsim.protocols import WPaxos
from macsim.protocols.wpaxos import (PREPARE, PROPOSE, Bundle, ChangeMsg, DecideMsg, LeaderMsg, ProposalNumber,
                                     ProposerMsg, Response, SearchMsg, aggregate)
from macsim.schedulers import MaxDelayScheduler, RandomScheduler, SynchronousScheduler
from macsim.topology import Topology, build_clique, build_kd, build_line, build_random_connected

PN = ProposalNumber


def started(stub_ctx, me, n=8, value=0):
    node, ctx = WPaxos(value, n), stub_ctx(me)
    node.on_start(ctx)
    ctx.sent.clear()
    ctx.notes.clear()
    return node, ctx


def test_larger_leader_adopted(stub_ctx):
    node, ctx = started(stub_ctx, 3)
    node.on_receive(ctx, 7, Bundle(7, 0, leader=LeaderMsg(7)))
    assert node.omega == 7 and node.leader_q == LeaderMsg(7)


def test_smaller_leader_ignored(stub_ctx):
    node, ctx = started(stub_ctx, 3)
    node.on_receive(ctx, 7, Bundle(7, 0, leader=LeaderMsg(7)))
    node.on_receive(ctx, 1, Bundle(1, 0, leader=LeaderMsg(3)))
    assert node.omega == 7


def test_stale_search_ignored(stub_ctx):
    node, ctx = started(stub_ctx, 3)
    node.on_receive(ctx, 5, Bundle(5, 0, search=SearchMsg(9, 2)))
    assert node.dist[9] == 2 and node.parent[9] == 5
    node.on_receive(ctx, 6, Bundle(6, 0, search=SearchMsg(9, 5)))
    assert node.dist[9] == 2 and node.parent[9] == 5


def test_non_leader_forwards_change_without_proposing(stub_ctx):
    node, ctx = started(stub_ctx, 3)
    node.on_receive(ctx, 7, Bundle(7, 0, leader=LeaderMsg(7)))
    ctx.notes.clear()
    node.on_receive(ctx, 7, Bundle(7, 50, change=ChangeMsg(50, 7)))
    assert node.sending and node.change_q == ChangeMsg(50, 7)
    assert not [k for k, _ in ctx.notes if k == "proposal"]


def test_leader_change_starts_prepare_above_max_seen(stub_ctx):
    node, ctx = started(stub_ctx, 9)
    node.on_receive(ctx, 2, Bundle(2, 0, proposer=ProposerMsg(PREPARE, PN(5, 2))))
    ctx.notes.clear()
    node.on_receive(ctx, 2, Bundle(2, 100, change=ChangeMsg(100, 2)))
    props = [d["number"] for k, d in ctx.notes if k == "proposal"]
    assert props == [[6, 9]]


def test_stale_change_dropped(stub_ctx):
    node, ctx = started(stub_ctx, 9)
    node.on_receive(ctx, 2, Bundle(2, 100, change=ChangeMsg(100, 2)))
    ctx.notes.clear()
    node.on_receive(ctx, 2, Bundle(2, 0, change=ChangeMsg(3, 2)))
    assert node.last_change == (100, 2)
    assert not [k for k, _ in ctx.notes if k == "proposal"]


def test_bundle_components_and_ids():
    only = Bundle(1, 0, leader=LeaderMsg(4))
    assert only.components() == ["leader"]
    full = Bundle(1, 0, decide=DecideMsg(1), leader=LeaderMsg(4), change=ChangeMsg(3, 2), search=SearchMsg(4, 2),
                  proposer=ProposerMsg(PROPOSE, PN(3, 4), 1),
                  response=Response(PREPARE, PN(3, 4), True, 3, prior=(PN(2, 1), 0), committed=PN(2, 2), dest=5))
    assert len(full.components()) == 6
    assert full.id_count() <= 12


def test_idle_node_sends_nothing(stub_ctx):
    node, ctx = WPaxos(0, 2), stub_ctx(0)
    node.on_start(ctx)
    while node.sending:
        node.on_ack(ctx)
    before = len(ctx.sent)
    node.on_ack(ctx)
    assert len(ctx.sent) == before and not node.sending


def test_single_node_decides_immediately():
    topo = Topology({0: set()})
    tr = run_simulation(topo, WPaxos.factory([1]), SynchronousScheduler())
    assert tr.decisions[0].value == 1 and tr.decisions[0].time == 0


def test_majority():
    assert WPaxos(0, 5).majority == 3
    assert WPaxos(0, 4).majority == 3
    assert WPaxos(0, 1).majority == 1


def test_higher_prepare_gets_promise_with_accepted(stub_ctx):
    node, ctx = started(stub_ctx, 1)
    node.promised = PN(2, 5)
    node.accepted = (PN(2, 5), 1)
    node.on_receive(ctx, 4, Bundle(4, 0, proposer=ProposerMsg(PREPARE, PN(3, 4))))
    resp = [d for k, d in ctx.notes if k == "respond"]
    assert resp == [{"prop": ("prepare", 3, 4), "positive": True, "prior": (2, 5, 1)}]
    assert node.promised == PN(3, 4)


def test_lower_prepare_rejected_with_committed(stub_ctx):
    node, ctx = started(stub_ctx, 1)
    node.omega = 5
    node.parent[5] = 0
    node.promised = PN(3, 4)
    node.sending = True
    node.on_receive(ctx, 5, Bundle(5, 0, proposer=ProposerMsg(PREPARE, PN(2, 5))))
    r = [r for r in node.resp_q if r.number == PN(2, 5)][0]
    assert not r.positive and r.committed == PN(3, 4) and r.dest == 0


def test_merge_counts_and_prior():
    a = Response(PREPARE, PN(4, 9), True, 2, prior=(PN(1, 7), 0), dest=3, members=frozenset({1, 2}))
    b = Response(PREPARE, PN(4, 9), True, 3, prior=(PN(2, 4), 1), dest=3, members=frozenset({5, 6, 7}))
    m = aggregate(a, b)
    assert m.count == 5 and m.prior == (PN(2, 4), 1) and m.members == {1, 2, 5, 6, 7}
    assert aggregate(b, a).prior == (PN(2, 4), 1)
    assert aggregate(a, b, "double-count").count == 8
    assert aggregate(a, b, "drop-merge-max").prior == (PN(1, 7), 0)


def test_positive_and_negative_not_merged(stub_ctx):
    with pytest.raises(ValueError):
        aggregate(Response(PREPARE, PN(1, 9), True, dest=2), Response(PREPARE, PN(1, 9), False, dest=2))
    node, ctx = started(stub_ctx, 1)
    node.omega, node.parent[9] = 9, 2
    node.best_from[9] = PN(1, 9)
    node._enqueue_response(ctx, Response(PREPARE, PN(1, 9), True))
    node._enqueue_response(ctx, Response(PREPARE, PN(1, 9), False, committed=PN(3, 3)))
    node._enqueue_response(ctx, Response(PREPARE, PN(1, 9), True))
    assert sorted((r.positive, r.count) for r in node.resp_q) == [(False, 1), (True, 2)]


def test_duplicate_decide_idempotent(stub_ctx):
    node, ctx = started(stub_ctx, 1)
    node.on_receive(ctx, 2, Bundle(2, 0, decide=DecideMsg(1)))
    node.on_receive(ctx, 2, Bundle(2, 0, decide=DecideMsg(1)))
    node.on_receive(ctx, 2, Bundle(2, 0, decide=DecideMsg(0)))
    assert ctx.decided == [1] and node.decision == 1


def test_clique3_leader_decides_after_one_round_trip_pair():
    tr = run_simulation(build_clique(3), WPaxos.factory([0, 1, 1]), SynchronousScheduler())
    props = [e for e in tr.notes("proposal") if e.node == 2]
    assert tr.decisions[2].time <= props[-1].time + 4
    assert {d.value for d in tr.decisions.values()} <= {0, 1}


def test_dist_converges_on_line():
    line = build_line(3)
    sim = Simulation(line, WPaxos.factory([0, 1, 0, 1]), stop_when_decided=False)
    sim.run(SynchronousScheduler(), 10_000)
    assert [sim.nodes[u].dist[3] for u in line.nodes] == [3, 2, 1, 0]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10**6), st.integers(1, 6))
def test_leader_and_tree_converge(n, seed, f_ack):
    topo = build_random_connected(n, seed)
    sim = Simulation(topo, WPaxos.factory([u % 2 for u in topo.nodes]), SimConfig(f_ack=f_ack), stop_when_decided=False)
    sim.run(RandomScheduler(seed), 10**6)
    assert {p.omega for p in sim.nodes.values()} == {n - 1}
    assert checkers.tree_matches_bfs(topo, sim.nodes, n - 1) is None


def test_acceptor_promises_never_decrease():
    for seed in range(30):
        topo = build_random_connected(9, seed)
        tr = run_simulation(topo, WPaxos.factory([u % 2 for u in topo.nodes]), RandomScheduler(seed, skew=True),
                            SimConfig(f_ack=5))
        last = {}
        for e in tr.notes("respond"):
            kind, tag, node = e.data["prop"]
            if e.data["positive"]:
                cur = (tag, node)
                assert cur >= last.get(e.node, cur)
                last[e.node] = cur


@pytest.mark.parametrize("topo", [build_line(6), build_kd(4), build_clique(5)], ids=["line6", "kd4", "clique5"])
def test_decide_spreads_within_diameter_rounds(topo):
    for f_ack in (1, 4):
        tr = run_simulation(topo, WPaxos.factory([u % 2 for u in topo.nodes]), MaxDelayScheduler(), SimConfig(f_ack=f_ack))
        times = [d.time for d in tr.decisions.values()]
        assert max(times) - min(times) <= topo.diameter * f_ack + f_ack


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10**6), st.integers(1, 8), st.booleans(), st.data())
def test_safety_and_audit_random(n, seed, f_ack, skew, data):
    topo = build_random_connected(n, seed, data.draw(st.integers(0, n)))
    vals = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    tr = run_simulation(topo, WPaxos.factory(vals), RandomScheduler(seed, skew), SimConfig(f_ack=f_ack))
    rep = checkers.standard_report(tr, wpaxos=True)
    assert rep.ok, rep.to_dict()


def test_double_count_mutation_caught_by_audit():
    caught = 0
    for seed in range(20):
        topo = build_random_connected(12, seed)
        tr = run_simulation(topo, WPaxos.factory([u % 2 for u in topo.nodes], mutation="double-count"),
                            RandomScheduler(seed), SimConfig(f_ack=4))
        caught += not checkers.audit_counts(tr).ok
    assert caught > 0


def test_drop_merge_max_mutation_caught_by_audit():
    from macsim.schedulers import WithholdingScheduler
    topo = build_random_connected(8, 1, 1)
    vals = {u: u % 2 for u in topo.nodes}
    sched = lambda: WithholdingScheduler(7, topo.neighbors(7), 8)
    good = run_simulation(topo, WPaxos.factory(vals), sched())
    bad = run_simulation(topo, WPaxos.factory(vals, mutation="drop-merge-max"), sched())
    assert checkers.audit_counts(good).ok
    assert not checkers.audit_counts(bad).ok
