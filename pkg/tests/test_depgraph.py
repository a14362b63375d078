from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vlabkit.depgraph import (
    STANDARD_RULES,
    DepGraph,
    GraphError,
    RuleKind,
    SizeLimitExceeded,
    build_graph,
    dump,
    max_matching,
    parse_dump,
    random_linearization,
    topological_order,
    validate_dag,
)
from vlabkit.dsl import SkillCall, SkillSequence, parse_program

MAKE_JUICE = 'Open("juicer")\nPlace("apple", {"destination": "juicer"})\nPlace("orange", {"destination": "juicer"})'


def test_make_juice_graph():
    g = build_graph(parse_program(MAKE_JUICE))
    assert g.edges == ((0, 1), (1, 2), (1, 3))


def test_single_and_unrelated_calls():
    assert build_graph(parse_program('Pick("apple")')).edges == ((0, 1),)
    g = build_graph(parse_program('Lift("apple")\nPush("box")'))
    assert g.edges == ((0, 1), (0, 2))


def test_pick_place_chain_and_close_rule():
    g = build_graph(parse_program('Open("drawer")\nPick("cup")\nPlace("drawer")\nClose("drawer")'))
    # Open gates Place, Pick precedes Place, Close follows both (same target, prerequisite)
    assert set(g.edges) == {(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)}


def test_rules_recorded():
    g = build_graph(parse_program('Pick("a")'))
    assert g.rules == tuple(r.kind.value for r in STANDARD_RULES)
    g2 = build_graph(parse_program('Pick("a")'), [r for r in STANDARD_RULES if r.kind is RuleKind.SAME_TARGET])
    assert g2.rules == ("SameTarget",)


def test_validate_dag_examples():
    assert validate_dag(DepGraph((None,), (), validate=False)) is None
    loop = DepGraph((None, SkillCall("Pick", "a")), ((0, 1), (1, 1)), validate=False)
    assert validate_dag(loop).kind == "cycle"
    split = DepGraph((None, SkillCall("Pick", "a"), SkillCall("Pick", "b")), ((0, 1),), validate=False)
    assert validate_dag(split).kind == "reachability"
    with pytest.raises(GraphError):
        DepGraph((None, SkillCall("Pick", "a")), ((0, 1), (1, 0)))


def test_make_juice_matching_cases():
    g = build_graph(parse_program(MAKE_JUICE))
    o, a, b = g.calls[1:]
    assert max_matching(g, build_graph(SkillSequence((o, b, a)))).matched_count == 3
    omitted = build_graph(SkillSequence((a, b)))
    assert max_matching(g, omitted).matched_count == 2
    # requiring matched ancestors makes the gated Places unmatched
    assert max_matching(g, omitted, strict_ancestors=True).matched_count == 0
    assert oracles.pm_oracle(g, omitted, strict_ancestors=True) == 0


def test_matching_respects_reversed_order():
    g = build_graph(parse_program('Pick("apple")\nPlace("basket")'))
    rev = build_graph(parse_program('Place("basket")\nPick("apple")'))
    assert max_matching(g, rev).matched_count == 1


def test_tie_break_is_deterministic():
    ref = build_graph(parse_program('Lift("a")'))
    pred = build_graph(parse_program('Lift("a")\nLift("a")'))
    assert max_matching(ref, pred).pairs == {1: 1}


def test_size_limit():
    calls = tuple(SkillCall("Lift", f"e{i}") for i in range(5))
    g = build_graph(SkillSequence(calls))
    with pytest.raises(SizeLimitExceeded):
        max_matching(g, g, max_nodes=4)


def test_dump_round_trip():
    g = build_graph(parse_program(MAKE_JUICE))
    assert parse_dump(dump(g)) == g


def test_without_nodes_keeps_order():
    g = build_graph(parse_program('Pick("a")\nPlace("b")\nPick("c")'))
    h = g.without_nodes([2])
    assert h.size == 2 and (1, 2) in h.edges


# --- properties -----------------------------------------------------------------------

_calls = st.builds(
    SkillCall,
    st.sampled_from(["Pick", "Place", "Open", "Close", "Press", "Pour", "Insert", "Hang"]),
    st.sampled_from(["apple", "pear", "basket", "juicer"]),
    st.one_of(st.just({}), st.fixed_dictionaries({"destination": st.sampled_from(["basket", "juicer"])})),
)
_seqs = st.lists(_calls, min_size=1, max_size=8).map(lambda c: SkillSequence(tuple(c)))


@settings(max_examples=200, deadline=None)
@given(_seqs)
def test_graph_valid_and_forward(seq):
    g = build_graph(seq)
    assert validate_dag(g) is None
    assert all(u < v for u, v in g.edges)
    assert topological_order(g)[0] == 0


@settings(max_examples=200, deadline=None)
@given(_seqs, st.integers(0, 2**32 - 1))
def test_linearization_invariance(seq, seed):
    g = build_graph(seq)
    lin = build_graph(random_linearization(g, np.random.default_rng(seed)))
    # reordering may add gate edges to the prediction, never remove reference ancestry
    assert max_matching(g, lin).matched_count == len(seq)


@settings(max_examples=200, deadline=None)
@given(_seqs, _seqs)
def test_matching_equals_brute_force(ref, pred):
    g, h = build_graph(ref), build_graph(pred)
    m = max_matching(g, h)
    assert m.matched_count == oracles.pm_oracle(g, h)
    assert oracles.consistent(m.pairs, oracles.closure(g.size + 1, g.edges), oracles.closure(h.size + 1, h.edges))
    assert len(set(m.pairs.values())) == len(m.pairs)


@settings(max_examples=200, deadline=None)
@given(_seqs, st.data())
def test_leaf_deletion(seq, data):
    g = build_graph(seq)
    leaves = g.leaves()
    k = data.draw(st.integers(1, len(leaves)))
    dropped = set(data.draw(st.permutations(leaves))[:k])
    pred = build_graph(SkillSequence(tuple(c for i, c in enumerate(seq.calls, 1) if i not in dropped)))
    assert max_matching(g, pred).matched_count == len(seq) - k
