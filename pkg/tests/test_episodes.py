from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlabkit.episodes import (
    CorruptLine,
    EpisodeRecord,
    InvariantViolation,
    Observation,
    SchemaVersionMismatch,
    Step,
    check_invariants,
    episode_path,
    read_episode,
    validate_dataset,
    write_episode,
    write_manifest,
)

DT = 0.1


def make_record(positions, success=True, instance_id="ep", task_id="T") -> EpisodeRecord:
    steps = []
    for i, q in enumerate(positions):
        vel = [0.0] * len(q) if i == 0 else [(a - b) / DT for a, b in zip(q, positions[i - 1])]
        obs = Observation(tuple(q), tuple(vel), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0), False)
        last = i == len(positions) - 1
        steps.append(Step(tuple(q) + (0.0,), obs, 1.0 if last and success else 0.0, last))
    return EpisodeRecord(("do it",), tuple(steps), DT, {"task_id": task_id, "instance_id": instance_id})


def ramp(n: int, dof: int = 2):
    return [[0.01 * i] * dof for i in range(n)]


def test_terminal_mid_sequence_rejected(tmp_path):
    rec = make_record(ramp(4))
    steps = list(rec.steps)
    steps[1] = Step(steps[1].action, steps[1].observation, 0.0, True)
    bad = EpisodeRecord(rec.instructions, tuple(steps), DT, rec.metadata)
    assert check_invariants(bad)
    with pytest.raises(InvariantViolation):
        write_episode(bad, tmp_path)
    assert not list(tmp_path.rglob("*.jsonl"))


def test_invariant_rules():
    assert check_invariants(make_record(ramp(3))) == []
    rec = make_record(ramp(3))
    s = rec.steps[1]
    wrong_vel = Observation(s.observation.joint_positions, (9.0, 9.0), (0, 0, 0), (1, 0, 0, 0), False)
    steps = (rec.steps[0], Step(s.action, wrong_vel), rec.steps[2])
    assert any("velocities" in p for p in check_invariants(EpisodeRecord((), steps, DT)))
    steps = (rec.steps[0], Step(s.action, s.observation, 0.5), rec.steps[2])
    assert any("reward" in p for p in check_invariants(EpisodeRecord((), steps, DT)))
    assert check_invariants(EpisodeRecord((), (), DT))


def test_round_trip_and_line_count(tmp_path):
    rec = make_record(ramp(100))
    path = write_episode(rec, tmp_path)
    assert path == episode_path(rec, tmp_path)
    assert len(path.read_text().splitlines()) == 101
    assert read_episode(path) == rec


def test_truncated_file(tmp_path):
    path = write_episode(make_record(ramp(10)), tmp_path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptLine):
        read_episode(path)


def test_missing_steps_detected(tmp_path):
    path = write_episode(make_record(ramp(10)), tmp_path)
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:-1]))
    with pytest.raises(CorruptLine):
        read_episode(path)


def test_schema_version_mismatch(tmp_path):
    path = write_episode(make_record(ramp(3)), tmp_path)
    lines = path.read_text().splitlines(keepends=True)
    header = json.loads(lines[0])
    header["schema"] = "vlab-episode/99"
    path.write_text(json.dumps(header) + "\n" + "".join(lines[1:]))
    with pytest.raises(SchemaVersionMismatch):
        read_episode(path)


def test_dataset_with_one_corrupt_file(tmp_path):
    paths = [write_episode(make_record(ramp(5), instance_id=f"ep{i}"), tmp_path) for i in range(10)]
    paths[3].write_text(paths[3].read_text()[:40])
    manifest, violations = validate_dataset(tmp_path)
    assert len(violations) == 1 and "ep3" in violations[0]
    assert manifest.episode_count == 9 and manifest.per_task == {"T": 9}


def test_empty_dataset(tmp_path):
    manifest, violations = validate_dataset(tmp_path)
    assert manifest.episode_count == 0 and violations == []


def test_manifest_checksum_mismatch(tmp_path):
    path = write_episode(make_record(ramp(5)), tmp_path)
    write_manifest(tmp_path)
    assert validate_dataset(tmp_path)[1] == []
    path.write_bytes(path.read_bytes().replace(b'"do it"', b'"do  x"'))
    _, violations = validate_dataset(tmp_path)
    assert any("checksum mismatch" in v for v in violations)
    path.unlink()
    _, violations = validate_dataset(tmp_path)
    assert any("missing" in v for v in violations)


_coord = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(_coord, min_size=2, max_size=2), min_size=1, max_size=20), st.booleans())
def test_round_trip_property(tmp_path_factory, positions, success):
    rec = make_record(positions, success)
    d = tmp_path_factory.mktemp("ep")
    assert read_episode(write_episode(rec, d)) == rec
