from __future__ import annotations

import json

import numpy as np
import pytest

from vlabkit.depgraph import validate_dag
from vlabkit.geometry import box_cloud, min_distance
from vlabkit.scenario import (
    PLACEMENT_GAP,
    MissingAsset,
    RandomizationSpec,
    SchemaError,
    fixture_path,
    ground_truth_graph,
    instance_digest,
    load_instance,
    load_scenario,
    parse_template,
    randomize,
    save_instance,
)

FIXTURES = ("select_fruit", "make_juice", "select_toy")


def _minimal(tmp_path, **extra) -> dict:
    box_cloud((0, 0, 0), (0.04, 0.04, 0.04), 0.01).save(tmp_path / "cube.pclb")
    doc = {
        "schema": "vlab-scenario/1",
        "task_id": "Mini",
        "dimension": "Semantic",
        "entities": [
            {"entity_id": "cube", "category": "cube", "cloud": "cube.pclb", "position": [0.5, 0, 0.02],
             "grasp_points": [{"position": [0, 0, 0], "orientation": [0, 1, 0, 0]}]}
        ],
        "targets": ["cube"],
        "substeps": [{"predicate": "held", "args": ["cube"]}],
        "reference": 'Pick("cube")',
        "instructions": [{"text": "Pick up the cube.", "style": "direct"}],
    }
    doc.update(extra)
    return doc


def test_minimal_template_loads(tmp_path):
    t = parse_template(_minimal(tmp_path), tmp_path)
    assert t.task_id == "Mini" and len(t.entities) == 1
    inst = randomize(t, RandomizationSpec.fixed(), 0)
    assert inst.N == 1 and inst.M == 1


def test_missing_cloud(tmp_path):
    doc = _minimal(tmp_path)
    doc["entities"][0]["cloud"] = "nowhere.pclb"
    with pytest.raises(MissingAsset):
        parse_template(doc, tmp_path)
    with pytest.raises(MissingAsset):
        load_scenario(tmp_path / "absent.json")


def test_schema_errors_carry_pointer(tmp_path):
    doc = _minimal(tmp_path)
    del doc["targets"]
    with pytest.raises(SchemaError):
        parse_template(doc, tmp_path)
    doc = _minimal(tmp_path, targets=["ghost"])
    with pytest.raises(SchemaError) as exc:
        parse_template(doc, tmp_path)
    assert exc.value.pointer == "/targets/0"
    doc = _minimal(tmp_path, reference='Pick("ghost")')
    with pytest.raises(SchemaError):
        parse_template(doc, tmp_path)


def test_select_fruit_contents():
    t = load_scenario(fixture_path("select_fruit"))
    cats = {e.category for e in t.entities}
    assert {"apple", "orange", "banana", "pear"} <= cats
    assert t.receptacles == ("basket",)
    inst = randomize(t, seed=0)
    assert sum(e.role == "receptacle" for e in inst.entities) == 1


def test_fixed_spec_reproduces_template():
    t = load_scenario(fixture_path("make_juice"))
    inst = randomize(t, RandomizationSpec.fixed(), 5)
    for tmpl, placed in zip(t.entities, inst.entities):
        assert np.allclose(placed.pose.position, tmpl.position)
        assert placed.scale == 1.0
    assert inst.lighting == 1.0


@pytest.mark.parametrize("name", FIXTURES)
def test_same_seed_same_digest(name):
    t = load_scenario(fixture_path(name))
    assert instance_digest(randomize(t, seed=7)) == instance_digest(randomize(t, seed=7))


@pytest.mark.parametrize("name", FIXTURES)
def test_placements_keep_gap(name):
    t = load_scenario(fixture_path(name))
    for seed in range(5):
        inst = randomize(t, seed=seed)
        ents = inst.entities
        for i in range(len(ents)):
            for j in range(i + 1, len(ents)):
                assert min_distance(ents[i].cloud, ents[j].cloud) >= PLACEMENT_GAP


@pytest.mark.parametrize("name", FIXTURES)
def test_ground_truth_graphs_valid(name):
    inst = randomize(load_scenario(fixture_path(name)), seed=0)
    g = ground_truth_graph(inst)
    assert validate_dag(g) is None
    assert ground_truth_graph(inst) is g


def test_make_juice_graph_size():
    inst = randomize(load_scenario(fixture_path("make_juice")), seed=0)
    assert ground_truth_graph(inst).size == 3


def test_instance_round_trip(tmp_path):
    inst = randomize(load_scenario(fixture_path("select_fruit")), seed=11)
    path = save_instance(inst, tmp_path / "i")
    again = load_instance(path)
    assert instance_digest(again) == instance_digest(inst)
    assert json.loads(path.read_text())["N"] == inst.N


def test_load_instance_errors(tmp_path):
    with pytest.raises(MissingAsset):
        load_instance(tmp_path / "none")
    (tmp_path / "instance.json").write_text('{"schema": "other"}')
    with pytest.raises(SchemaError):
        load_instance(tmp_path)


def test_spec_rejects_inverted_range():
    with pytest.raises(ValueError):
        RandomizationSpec(yaw_range=(0.2, 0.1))
