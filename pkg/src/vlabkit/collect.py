"""Demonstration collection: run a task instance's reference through the planner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsl import SkillCall, SkillSequence
from .episodes import EpisodeRecord, Observation, Step
from .geometry import Pose
from .harness import execute_symbolic
from .metrics import progress_score
from .planner.grasp import default_gripper_cloud
from .planner.kinematics import KinematicChain, default_chain
from .planner.rrt import PlanningWorld
from .planner.skills import EntityPrior, RobotState, SkillConfig, SkillExecutionError, execute_skill
from .depgraph import DESTINATION_KEYS
from .scenario import TaskInstance


def instance_priors(instance: TaskInstance) -> dict[str, EntityPrior]:
    return {
        e.entity_id: EntityPrior(e.entity_id, e.cloud, e.grasp_points[0] if e.grasp_points else None, e.place_point)
        for e in instance.entities
    }


def instance_world(instance: TaskInstance, clearance: float = 0.01) -> PlanningWorld:
    return PlanningWorld(instance.environment, default_gripper_cloud(), clearance)


def resolve_names(seq: SkillSequence, instance: TaskInstance) -> SkillSequence:
    """Rewrite call targets and destination params to the instance's entity ids."""
    calls = []
    for c in seq.calls:
        params = dict(c.params)
        for key in DESTINATION_KEYS:
            v = params.get(key)
            if isinstance(v, str) and instance.resolve(v):
                params[key] = instance.resolve(v)
        calls.append(SkillCall(c.skill, instance.resolve(c.target) or c.target, params))
    return SkillSequence(tuple(calls), seq.origin)


@dataclass
class CollectResult:
    record: EpisodeRecord
    executed: int  # skills completed before termination
    failure: SkillExecutionError | None


def collect_episode(
    instance: TaskInstance,
    seed: int = 0,
    chain: KinematicChain | None = None,
    sequence: SkillSequence | None = None,
    config: SkillConfig = SkillConfig(),
) -> CollectResult:
    """Plan the (reference) sequence skill by skill and package it as an episode.

    A failing skill ends the episode early; the record then carries the
    failure in its metadata and a zero terminal reward.
    """
    chain = chain or default_chain()
    seq = resolve_names(sequence if sequence is not None else instance.reference, instance)
    world = instance_world(instance)
    priors = instance_priors(instance)
    start = chain.ready if chain.ready is not None else tuple(np.clip(0.0, chain.lower, chain.upper))
    state = RobotState(start)
    configs = [np.asarray(start, dtype=float)]
    grippers = [state.gripper]
    seeds = np.random.default_rng(seed).integers(2**31, size=max(1, len(seq.calls)))
    failure = None
    executed = 0
    for k, call in enumerate(seq.calls):
        try:
            res = execute_skill(call, priors, world, chain, state, int(seeds[k]), config)
        except SkillExecutionError as exc:
            failure = exc
            break
        configs.extend(np.asarray(s.config) for s in res.trajectory.steps)
        grippers.extend(s.gripper for s in res.trajectory.steps)
        state, priors = res.state, res.priors
        executed += 1
    done = SkillSequence(seq.calls[:executed])
    success = failure is None and progress_score(execute_symbolic(instance, done)) == 1.0
    record = build_record(instance, chain, configs, grippers, config.dt, success, seed, failure)
    return CollectResult(record, executed, failure)


def build_record(instance, chain, configs, grippers, dt, success, seed, failure=None) -> EpisodeRecord:
    """Observation at each visited configuration, action = the next command."""
    qs = np.asarray(configs, dtype=float)
    tfs = chain.fk_batch(qs)
    n = max(1, len(qs) - 1)
    steps = []
    for i in range(n):
        q = qs[i]
        vel = np.zeros_like(q) if i == 0 else (q - qs[i - 1]) / dt
        nxt = min(i + 1, len(qs) - 1)
        pose = Pose.from_matrix(tfs[i])
        obs = Observation(
            tuple(q.tolist()),
            tuple(vel.tolist()),
            pose.position,
            pose.orientation.as_tuple(),
            bool(grippers[i] >= 0.5),
        )
        last = i == n - 1
        steps.append(Step(tuple(qs[nxt].tolist()) + (float(grippers[nxt]),), obs, 1.0 if last and success else 0.0, last))
    meta = {
        "task_id": instance.task_id,
        "instance_id": instance.instance_id,
        "seed": seed,
        "dimension": instance.dimension,
        "success": success,
    }
    if failure is not None:
        meta["failed_skill"] = failure.skill
        meta["failure"] = str(failure)
    return EpisodeRecord(tuple(t for t, _ in instance.instructions), tuple(steps), dt, meta)
