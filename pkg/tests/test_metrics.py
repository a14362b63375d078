from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vlabkit.depgraph import build_graph
from vlabkit.dsl import SkillCall, SkillSequence, Vector, parse_program
from vlabkit.metrics import (
    EmptyReference,
    InvalidCounts,
    InvalidWeights,
    MetricWeights,
    ProgressInput,
    canonical_param_equal,
    evaluate,
    overall_score,
    param_recall,
    param_recall_counts,
    precise_matching,
    progress_score,
    skill_param_recall,
    skill_param_recall_counts,
    skill_recall,
    skill_recall_counts,
    wrap_angle,
)


def seq(*calls) -> SkillSequence:
    return SkillSequence(tuple(SkillCall(*c) if isinstance(c, tuple) else SkillCall(c, "x") for c in calls))


def test_skill_recall_examples():
    assert skill_recall(seq("Pick", "Place"), seq("Pick", "Press")) == 0.5
    ref = seq("Pick", "Place")
    assert skill_recall(ref, ref) == 1.0
    assert skill_recall(seq("Pick", "Pick", "Place"), seq("Pick", "Place", "Place")) == pytest.approx(2 / 3, abs=0)


def test_param_recall_examples():
    ref = seq(("Place", "basket", {"pose": Vector((0.6, 0.4, 0.15))}))
    extra = seq(("Place", "basket", {"pose": Vector((0.6, 0.4, 0.15)), "extra": "x"}))
    assert param_recall(ref, ref) == 1.0
    assert param_recall(ref, extra) == 1.0
    off = seq(("Place", "basket", {"pose": Vector((0.601, 0.4, 0.15))}))
    # the target entry still matches, the pose entry does not
    assert param_recall_counts(ref, off) == (1, 2)


def test_skill_param_recall_examples():
    ref = seq(("Pick", "apple", {"g": "close"}), ("Place", "basket", {"g": "open"}))
    assert skill_param_recall(ref, ref) == 1.0
    wrong_target = seq(("Pick", "apple", {"g": "close"}), ("Place", "bowl", {"g": "open"}))
    assert skill_param_recall(ref, wrong_target) == 0.5
    wrong_params = seq(("Pick", "apple", {"g": "open"}), ("Place", "basket", {"g": "close"}))
    assert skill_param_recall(ref, wrong_params) == 0.0


def test_canonical_param_equal_examples():
    assert canonical_param_equal(Vector((math.pi, 0, 0), True), Vector((-math.pi, 0, 0), True))
    assert canonical_param_equal("close", "Close ")
    assert not canonical_param_equal(0.6, 0.6000019)
    assert canonical_param_equal(0.6, 0.6000009)
    # positions are not angle-wrapped
    assert not canonical_param_equal(Vector((math.pi, 0, 0)), Vector((-math.pi, 0, 0)))
    assert not canonical_param_equal("1", 1.0)


def test_wrap_angle_range():
    for a in (-3 * math.pi, -math.pi, 0.0, math.pi, 5.0, 7 * math.pi):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_precise_matching_examples():
    ref = parse_program('Open("juicer")\nPlace("apple", {"destination": "juicer"})\nPlace("orange", {"destination": "juicer"})')
    g = build_graph(ref)
    assert precise_matching(g, g) == 1.0
    four = seq(("Pick", "a"), ("Place", "b"), ("Pick", "c"), ("Place", "d"))
    g4 = build_graph(four)
    leaf = g4.leaves()[0]
    trimmed = build_graph(SkillSequence(tuple(c for i, c in enumerate(four.calls, 1) if i != leaf)))
    assert precise_matching(g4, trimmed) == 0.75
    assert oracles.pm_oracle(g4, trimmed) == 3


def test_overall_score_examples():
    assert overall_score(1, 1, 1, 1, MetricWeights(0.1, 0.2, 0.3, 0.4)) == pytest.approx(1.0)
    assert overall_score(1, 0, 0, 0) == 0.25
    assert overall_score(0.3, 0.9, 0.1, 0.5, MetricWeights(1, 0, 0, 0)) == 0.3


def test_weights_validation():
    with pytest.raises(InvalidWeights):
        MetricWeights(0.5, 0.5, 0.5, 0.5)
    with pytest.raises(InvalidWeights):
        MetricWeights(-0.1, 0.4, 0.4, 0.3)
    with pytest.raises(InvalidWeights):
        MetricWeights.parse("0.5,0.5")
    assert MetricWeights.parse("0.4, 0.2, 0.2, 0.2").w1 == 0.4


def test_progress_score_examples():
    assert progress_score(ProgressInput(2, 2, 4, 4)) == 1.0
    assert progress_score(ProgressInput(2, 1, 4, 2, 0.2)) == pytest.approx(0.5, abs=1e-15)
    assert progress_score(ProgressInput(2, 0, 4, 0)) == 0.0
    with pytest.raises(InvalidCounts):
        ProgressInput(2, 3, 4, 0)
    with pytest.raises(InvalidCounts):
        ProgressInput(0, 0, 4, 0)


def test_empty_reference_rejected():
    with pytest.raises(EmptyReference):
        skill_recall(SkillSequence(()), seq("Pick"))


def test_evaluate_report_counts():
    ref = parse_program('Pick("apple")\nPlace("basket")')
    r = evaluate(ref, ref)
    assert (r.sr, r.pr, r.spr, r.pm, r.total) == (1.0, 1.0, 1.0, 1.0, 1.0)
    empty = evaluate(ref, SkillSequence(()))
    assert (empty.sr, empty.pr, empty.spr, empty.pm, empty.total) == (0.0, 0.0, 0.0, 0.0, 0.0)
    for k, (num, den) in r.counts.items():
        assert getattr(r, k) == num / den


# --- properties -------------------------------------------------------------------------

_calls = st.builds(
    SkillCall,
    st.sampled_from(["Pick", "Place", "Open"]),
    st.sampled_from(["a", "b", "c"]),
    st.dictionaries(st.sampled_from(["k1", "k2"]), st.sampled_from([0.0, 1.0, "x"]), max_size=2),
)
_seqs = st.lists(_calls, max_size=5).map(lambda c: SkillSequence(tuple(c)))
_nonempty = st.lists(_calls, min_size=1, max_size=5).map(lambda c: SkillSequence(tuple(c)))


@settings(max_examples=400)
@given(_nonempty, _seqs)
def test_recall_metrics_match_oracle(ref, pred):
    assert skill_recall_counts(ref, pred) == oracles.sr_oracle(ref, pred)
    assert param_recall_counts(ref, pred) == oracles.pr_oracle(ref, pred)
    assert skill_param_recall_counts(ref, pred) == oracles.spr_oracle(ref, pred)


@settings(max_examples=300)
@given(_nonempty, _seqs)
def test_metrics_bounded_and_spr_le_sr(ref, pred):
    r = evaluate(ref, pred)
    for v in (r.sr, r.pr, r.spr, r.pm, r.total):
        assert 0.0 <= v <= 1.0
    assert r.spr <= r.sr


@given(_nonempty)
def test_identity_and_empty(ref):
    assert evaluate(ref, ref).total == pytest.approx(1.0)
    assert evaluate(ref, SkillSequence(())).total == 0.0


_unit = st.floats(0, 1)


@given(_unit, _unit, _unit, _unit, _unit, st.integers(0, 3))
def test_overall_monotone(sr, pr, spr, pm, bump, which):
    base = [sr, pr, spr, pm]
    raised = list(base)
    raised[which] = max(raised[which], bump)
    assert overall_score(*raised) >= overall_score(*base) - 1e-15


@given(st.integers(1, 30), st.integers(1, 30), st.data(), st.floats(0, 1))
def test_progress_monotone_and_affine(N, M, data, alpha):
    n = data.draw(st.integers(0, N - 1))
    m = data.draw(st.integers(0, M))
    a = progress_score(ProgressInput(N, n, M, m, alpha))
    b = progress_score(ProgressInput(N, n + 1, M, m, alpha))
    assert b >= a
    assert b - a == pytest.approx(alpha / N, abs=1e-12)
