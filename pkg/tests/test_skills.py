from __future__ import annotations

import numpy as np
import pytest

from vlabkit.dsl import SkillCall, Vector
from vlabkit.geometry import PointCloud, Pose, Quaternion, box_cloud
from vlabkit.planner.grasp import default_gripper_cloud
from vlabkit.planner.kinematics import default_chain, forward_kinematics
from vlabkit.planner.rrt import PlanningWorld
from vlabkit.planner.skills import (
    CLOSED,
    OPEN,
    EntityPrior,
    MissingPrior,
    RobotState,
    SkillExecutionError,
    TrajectoryStep,
    execute_skill,
)

DOWN = Quaternion(0.0, 1.0, 0.0, 0.0)
GRASP = Pose((0.5, 0.0, 0.1), DOWN)


@pytest.fixture(scope="module")
def scene():
    chain = default_chain()
    cube = EntityPrior("cube", box_cloud((0.5, 0.0, 0.1), (0.04, 0.04, 0.04), 0.01), GRASP)
    basket = EntityPrior("basket", PointCloud(), None, Pose((0.45, 0.3, 0.15)))
    world = PlanningWorld(PointCloud(), default_gripper_cloud())
    return chain, {"cube": cube, "basket": basket}, world


def _tool(chain, step) -> Pose:
    return forward_kinematics(chain, step.config)


def _first_closing(steps):
    return next(i for i, s in enumerate(steps) if s.gripper == CLOSED)


@pytest.fixture(scope="module")
def picked(scene):
    chain, priors, world = scene
    res = execute_skill(SkillCall("Pick", "cube"), priors, world, chain, RobotState(chain.ready), seed=0)
    return res


def test_pick_closes_at_grasp(scene, picked):
    chain, _, _ = scene
    steps = picked.trajectory.steps
    k = _first_closing(steps)
    at = _tool(chain, steps[k])
    assert np.linalg.norm(np.subtract(at.position, GRASP.position)) <= 1e-3
    assert steps[-1].gripper == CLOSED
    assert picked.state.held == "cube" and picked.state.gripper == CLOSED
    picked.trajectory.check(chain, chain.ready)


def test_pick_carries_cloud(scene, picked):
    _, priors, _ = scene
    lifted = picked.priors["cube"].cloud.points[:, 2].mean() - priors["cube"].cloud.points[:, 2].mean()
    assert lifted == pytest.approx(0.1, abs=2e-3)


def test_place_at_explicit_pose(scene, picked):
    chain, _, world = scene
    call = SkillCall("Place", "basket", {"pose": Vector((0.6, 0.4, 0.15))})
    res = execute_skill(call, picked.priors, world, chain, picked.state, seed=1)
    steps = res.trajectory.steps
    release = next(i for i, s in enumerate(steps) if s.gripper == OPEN)
    assert np.linalg.norm(np.subtract(_tool(chain, steps[release]).position, (0.6, 0.4, 0.15))) <= 1e-3
    assert res.state.held is None
    res.trajectory.check(chain, picked.state.q)


def test_missing_prior(scene):
    chain, priors, world = scene
    with pytest.raises(MissingPrior):
        execute_skill(SkillCall("Pick", "ghost"), priors, world, chain, RobotState(chain.ready))
    with pytest.raises(MissingPrior):
        execute_skill(SkillCall("Place", "cube"), priors, world, chain, RobotState(chain.ready))


def test_unreachable_target_fails_cleanly(scene):
    chain, _, world = scene
    far = {"rock": EntityPrior("rock", PointCloud(), Pose((3.0, 0.0, 0.1), DOWN))}
    with pytest.raises(SkillExecutionError) as exc:
        execute_skill(SkillCall("Pick", "rock"), far, world, chain, RobotState(chain.ready))
    assert exc.value.skill == "Pick"


def test_gripper_command_range():
    with pytest.raises(ValueError):
        TrajectoryStep((0.0,), 1.5)
