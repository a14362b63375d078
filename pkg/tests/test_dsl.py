from __future__ import annotations

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlabkit.dsl import (
    BASE_SKILLS,
    DslSyntaxError,
    DuplicateParam,
    ParseError,
    SkillCall,
    SkillSequence,
    UnknownSkill,
    Vector,
    canonical_string,
    extract_from_noisy,
    load_registry,
    parse_program,
)

PICK_PLACE = (
    'Pick("Apple", {"gripper_state": "close", "orientation": [pi, 0, 0]})\n'
    'Place("Basket", {"pose": [0.6, 0.4, 0.15], "gripper_state": "open"})'
)


def test_pick_place_program_parses():
    seq = parse_program(PICK_PLACE)
    assert [c.skill for c in seq] == ["Pick", "Place"]
    pick = seq[0]
    assert pick.target == "Apple"
    assert pick.params["orientation"] == Vector((math.pi, 0.0, 0.0), angular=True)
    assert pick.params["gripper_state"] == "close"
    assert seq[1].params["pose"] == Vector((0.6, 0.4, 0.15))


def test_empty_program():
    assert parse_program("") == SkillSequence(())
    assert parse_program("  \n# just a comment\n") == SkillSequence(())


def test_duplicate_param():
    with pytest.raises(DuplicateParam) as exc:
        parse_program('Pick("Apple", {"x": 1, "x": 2})')
    assert exc.value.key == "x"


def test_unknown_skill_and_syntax_error_position():
    with pytest.raises(UnknownSkill):
        parse_program('Fly("Apple")')
    with pytest.raises(DslSyntaxError) as exc:
        parse_program('Pick("Apple")\nPlace("Basket", {"pose": [1 2]})')
    assert exc.value.line == 2


def test_case_insensitive_skill_names_canonicalize():
    assert parse_program('pick("a") PLACE("b")').skills() == ["Pick", "Place"]


def test_pi_forms_and_precision():
    seq = parse_program('Twist("knob", {"angle": -pi/4, "o": [pi/2, -pi, np.pi], "v": 0.123456789012})')
    p = seq[0].params
    assert p["angle"] == pytest.approx(-math.pi / 4, abs=0)
    assert p["o"].values == (math.pi / 2, -math.pi, math.pi)
    assert p["v"] == 0.123456789012


def test_target_required():
    with pytest.raises(ParseError):
        parse_program('Pick("")')
    with pytest.raises(ValueError):
        SkillCall("Pick", "")


def test_extract_examples():
    seq, diags = extract_from_noisy('Sure! Here is the plan:\n```\nPick("Apple")\n```')
    assert seq.calls == (SkillCall("Pick", "Apple"),) and diags == []
    seq, diags = extract_from_noisy("I cannot help with that.")
    assert len(seq) == 0 and diags == []
    seq, diags = extract_from_noisy('Pick("Apple") garbage Place("Basket")')
    assert seq.skills() == ["Pick", "Place"] and len(diags) == 1
    assert diags[0].span == (len('Pick("Apple")'), len('Pick("Apple") garbage '))


def test_extract_skips_broken_anchor():
    seq, diags = extract_from_noisy('Pick("Apple", {oops}) then Pick("Pear")')
    assert seq.calls == (SkillCall("Pick", "Pear"),)
    assert len(diags) == 1


def test_canonical_render_sorted_and_lines():
    text = canonical_string(parse_program(PICK_PLACE))
    lines = text.split("\n")
    assert len(lines) == 2
    assert lines[1].index('"gripper_state"') < lines[1].index('"pose"')
    assert canonical_string(SkillSequence(())) == ""


def test_registry_extension(tmp_path):
    cfg = tmp_path / "skills.json"
    cfg.write_text(json.dumps({"skills": [{"name": "Stir", "params": {"speed": "number"}}]}))
    with pytest.raises(UnknownSkill):
        parse_program('Stir("pot")')
    reg = load_registry(cfg)
    assert parse_program('stir("pot", {"speed": 2})', reg).skills() == ["Stir"]


# --- properties ----------------------------------------------------------------------

_names = st.text(st.sampled_from(list("abzAZ09 _-#'\"\\/\n\té中")), min_size=1, max_size=8).filter(
    lambda s: s.strip() != ""
)
_number = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6)
_value = st.one_of(
    _number.map(float),
    _names,
    st.lists(_number, min_size=1, max_size=4).map(lambda v: Vector(tuple(v))),
    st.tuples(_number, _number, _number).map(lambda v: Vector(v, angular=True)),
)


@st.composite
def calls(draw):
    params = draw(st.dictionaries(st.sampled_from(["pose", "speed", "gripper_state", "k1", "k2"]), _value, max_size=3))
    # angular vectors live under angle keys, plain vectors elsewhere
    fixed = {}
    for k, v in params.items():
        if isinstance(v, Vector) and v.angular:
            fixed["orientation"] = v
        else:
            fixed[k] = v
    return SkillCall(draw(st.sampled_from(BASE_SKILLS)), draw(_names), fixed)


sequences = st.lists(calls(), max_size=5).map(lambda cs: SkillSequence(tuple(cs)))


@settings(max_examples=300)
@given(sequences)
def test_round_trip(seq):
    text = canonical_string(seq)
    assert parse_program(text) == seq
    assert canonical_string(parse_program(text)) == text


@settings(max_examples=300)
@given(sequences)
def test_extract_is_conservative_on_clean_input(seq):
    got, diags = extract_from_noisy(canonical_string(seq))
    assert got.calls == seq.calls
    assert diags == []


@settings(max_examples=500)
@given(st.binary(max_size=200))
def test_never_crashes_on_bytes(data):
    text = data.decode("utf-8", errors="replace")
    try:
        parse_program(text)
    except ParseError:
        pass
    extract_from_noisy(text)


@settings(max_examples=500)
@given(st.data())
def test_mutated_programs_never_crash(data):
    src = bytearray(PICK_PLACE.encode())
    for _ in range(data.draw(st.integers(1, 6))):
        i = data.draw(st.integers(0, len(src) - 1))
        op = data.draw(st.sampled_from(["set", "del", "ins"]))
        b = data.draw(st.integers(0, 255))
        if op == "set":
            src[i] = b
        elif op == "del":
            del src[i]
        else:
            src.insert(i, b)
    text = bytes(src).decode("utf-8", errors="replace")
    try:
        a = canonical_string(parse_program(text))
    except ParseError as exc:
        a = repr(exc)
    try:
        b2 = canonical_string(parse_program(text))
    except ParseError as exc:
        b2 = repr(exc)
    assert a == b2
    extract_from_noisy(text)
