import pytest
from hypothesis import given, settings, strategies as st

from macsim import checkers
from macsim.core import ProtocolMisuse, SimConfig, Simulation, run_simulation
from macsim.explore import Step, apply_step
from macsim.protocols import TwoPhase
from macsim.protocols.twophase import BIVALENT, Phase1, Phase2
from macsim.schedulers import RandomScheduler, SynchronousScheduler
from macsim.topology import build_clique


@pytest.mark.parametrize("v", [0, 1])
def test_start_announces_value(stub_ctx, v):
    node, ctx = TwoPhase(v), stub_ctx(4)
    node.on_start(ctx)
    assert ctx.sent == [Phase1(4, v)]
    assert node.R1 == {Phase1(4, v)}


def test_double_start_is_misuse(stub_ctx):
    node, ctx = TwoPhase(0), stub_ctx(0)
    node.on_start(ctx)
    with pytest.raises(ProtocolMisuse):
        node.on_start(ctx)


def test_bad_value():
    with pytest.raises(ValueError):
        TwoPhase(2)


def test_status_and_witnesses_by_hand(stub_ctx):
    node, ctx = TwoPhase(0, early_decide=False), stub_ctx(0)
    node.on_start(ctx)
    node.on_receive(ctx, 1, Phase1(1, 1))
    node.on_ack(ctx)
    assert node.status == BIVALENT and ctx.sent[-1] == Phase2(0, BIVALENT)
    node.on_ack(ctx)
    assert node.W == frozenset({0, 1}) and not ctx.decided
    node.on_receive(ctx, 1, Phase2(1, ("decided", 0)))
    assert ctx.decided == [0]


def test_n2_synchronous_both_bivalent_decide_one():
    sim = Simulation(build_clique(2), TwoPhase.factory([0, 1]))
    tr = sim.run(SynchronousScheduler(), 100)
    assert all(p.status == BIVALENT for p in sim.nodes.values())
    assert all(p.W == frozenset({0, 1}) for p in sim.nodes.values())
    assert {d.value for d in tr.decisions.values()} == {1}


@pytest.mark.parametrize("seed", range(20))
def test_lone_zero_finishing_first_forces_zero(seed):
    topo = build_clique(3)
    sim = Simulation(topo, TwoPhase.factory([0, 1, 1]), SimConfig(f_ack=10**6))
    sim.start()
    for step in (Step("receive", 1, 0), Step("receive", 2, 0), Step("ack", 0, 0)):
        apply_step(sim, step)
    assert sim.nodes[0].status == ("decided", 0)
    tr = sim.run(RandomScheduler(seed), 10**7)
    assert tr.terminated
    assert {d.value for d in tr.decisions.values()} == {0}


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6), st.integers(1, 12), st.booleans())
def test_uniform_inputs_decide_that_value(n, seed, f_ack, one):
    tr = run_simulation(build_clique(n), TwoPhase.factory([int(one)] * n), RandomScheduler(seed), SimConfig(f_ack=f_ack))
    assert tr.terminated and {d.value for d in tr.decisions.values()} == {int(one)}


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6), st.integers(1, 12), st.data())
def test_agreement_validity_termination_random(n, seed, f_ack, data):
    vals = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    early = data.draw(st.booleans())
    tr = run_simulation(build_clique(n), TwoPhase.factory(vals, early_decide=early), RandomScheduler(seed, skew=seed % 2 == 1),
                        SimConfig(f_ack=f_ack))
    rep = checkers.standard_report(tr, termination_bound=2 * f_ack + 2 * f_ack, exact_ids=1)
    assert rep.ok, rep.to_dict()


def test_premature_decide_mutation_breaks_agreement():
    tr = run_simulation(build_clique(3), TwoPhase.factory([0, 1, 1], mutation="premature-decide"), SynchronousScheduler())
    assert not checkers.check_agreement(tr).ok


def test_clone_is_deep_enough(stub_ctx):
    node = TwoPhase(1)
    node.on_start(stub_ctx(0))
    other = node.clone()
    other.R1.add(Phase1(3, 0))
    assert Phase1(3, 0) not in node.R1
