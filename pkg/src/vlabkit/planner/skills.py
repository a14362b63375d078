"""Expansion of DSL skill calls into joint trajectories.

Each skill becomes a short list of Cartesian legs and gripper actions. A
leg is solved by IK for its goal, planned with RRT, smoothed through a
Catmull-Rom/SLERP pose path when that stays collision-free, and finally
resampled so no step exceeds the joint velocity bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ..depgraph import destination, explicit_carried
from ..dsl import SkillCall, Vector
from ..geometry import Pose, PointCloud, Quaternion, merge_clouds, smooth_path
from .grasp import NoValidGrasp, backoff_axis, preparation_pose, sample_grasp_direction
from .kinematics import KinematicChain, LimitViolation, NoConvergence, inverse_kinematics
from .rrt import CollisionChecker, PlanningError, PlanningWorld, rrt_plan

OPEN, CLOSED = 0.0, 1.0


class SkillExecutionError(RuntimeError):
    """A skill could not be executed; the episode terminates early."""

    def __init__(self, skill: str, reason: str, cause: Exception | None = None):
        self.skill = skill
        self.reason = reason
        self.cause = cause
        super().__init__(f"{skill}: {reason}")


class MissingPrior(SkillExecutionError):
    def __init__(self, skill: str, entity: str, kind: str):
        self.entity = entity
        self.kind = kind
        super().__init__(skill, f"no {kind} prior for entity {entity!r}")


class VelocityViolation(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EntityPrior:
    """Scenario knowledge about one entity, all in the world frame."""

    entity_id: str
    cloud: PointCloud = field(default_factory=PointCloud)
    grasp: Pose | None = None
    place: Pose | None = None

    def moved(self, delta: Pose) -> "EntityPrior":
        return EntityPrior(
            self.entity_id,
            PointCloud(delta.apply(self.cloud.points), self.cloud.frame),
            None if self.grasp is None else delta @ self.grasp,
            None if self.place is None else delta @ self.place,
        )


@dataclass(frozen=True)
class TrajectoryStep:
    config: tuple[float, ...]
    gripper: float

    def __post_init__(self):
        object.__setattr__(self, "config", tuple(float(v) for v in self.config))
        if not 0.0 <= self.gripper <= 1.0:
            raise ValueError(f"gripper command {self.gripper} outside [0, 1]")


@dataclass
class Trajectory:
    steps: list[TrajectoryStep] = field(default_factory=list)
    dt: float = 0.1

    def __len__(self) -> int:
        return len(self.steps)

    def configs(self) -> np.ndarray:
        return np.array([s.config for s in self.steps], dtype=float)

    def extend(self, other: "Trajectory") -> None:
        if other.dt != self.dt:
            raise ValueError("cannot join trajectories with different dt")
        self.steps.extend(other.steps)

    def check(self, chain: KinematicChain, start=None) -> None:
        """Raise unless every step is within limits and the velocity bound."""
        bound = chain.max_velocity * self.dt * (1 + 1e-9)
        prev = None if start is None else np.asarray(start, dtype=float)
        for i, step in enumerate(self.steps):
            q = chain.check_limits(step.config)
            if prev is not None and float(np.max(np.abs(q - prev), initial=0.0)) > bound:
                raise VelocityViolation(f"step {i} moves {np.max(np.abs(q - prev)):.4g} rad > {bound:.4g}")
            prev = q


@dataclass(frozen=True)
class RobotState:
    q: tuple[float, ...]
    gripper: float = OPEN
    held: str | None = None
    grasp_tool: Pose | None = None  # tool pose when the held entity was grasped

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))


@dataclass(frozen=True)
class SkillConfig:
    dt: float = 0.1
    prep_distance: float = 0.08
    lift_height: float = 0.1
    approach_height: float = 0.1
    grasp_candidates: int = 16
    pour_height: float = 0.15
    pour_angle: float = math.pi / 2
    twist_angle: float = math.pi
    rotation_substep: float = math.pi / 4
    open_pull: float = 0.1
    press_depth: float = 0.02
    push_distance: float = 0.1
    samples_per_segment: int = 10
    gripper_steps: int = 3
    ik_restarts: int = 8
    max_iterations: int = 20_000
    max_joint_jump: float = 0.5  # rad; larger jumps between smoothed samples reject smoothing


@dataclass
class SkillResult:
    trajectory: Trajectory
    state: RobotState
    priors: dict[str, EntityPrior]


def _vector(call: SkillCall, key: str) -> tuple[float, ...] | None:
    v = call.params.get(key)
    return v.values if isinstance(v, Vector) else None


def _number(call: SkillCall, key: str, default: float) -> float:
    v = call.params.get(key)
    return float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else default


def _explicit_pose(call: SkillCall) -> tuple[np.ndarray | None, Quaternion | None]:
    """Position and orientation overrides carried by ``pose``/``position``/``orientation``."""
    pos = quat = None
    pv = _vector(call, "pose") or _vector(call, "position")
    if pv is not None:
        if len(pv) not in (3, 6, 7):
            raise SkillExecutionError(call.skill, f"pose must have 3, 6 or 7 values, got {len(pv)}")
        pos = np.array(pv[:3])
        if len(pv) == 6:
            quat = Quaternion.from_euler(*pv[3:])
        elif len(pv) == 7:
            quat = Quaternion(*pv[3:])
    ov = _vector(call, "orientation")
    if ov is not None:
        if len(ov) == 3:
            quat = Quaternion.from_euler(*ov)
        elif len(ov) == 4:
            quat = Quaternion(*ov)
        else:
            raise SkillExecutionError(call.skill, "orientation must have 3 (roll, pitch, yaw) or 4 values")
    return pos, quat


def _shift(pose: Pose, offset) -> Pose:
    return Pose(tuple(np.asarray(pose.position) + np.asarray(offset, dtype=float)), pose.orientation)


def _spin(pose: Pose, axis_world, angle: float) -> Pose:
    return Pose(pose.position, Quaternion.from_axis_angle(axis_world, angle) * pose.orientation)


class _Executor:
    def __init__(self, call, priors, world, chain, state, seed, config):
        self.call = call
        self.priors = dict(priors)
        self.world = world
        self.chain = chain
        self.state = state
        self.cfg = config
        self.rng = np.random.default_rng(seed)
        self.q = np.asarray(state.q, dtype=float)
        self.traj = Trajectory([], config.dt)
        self.excluded: set[str] = set()

    # -- priors --------------------------------------------------------------
    def grasp_of(self, entity: str) -> Pose:
        p = self.priors.get(entity)
        if p is None or p.grasp is None:
            raise MissingPrior(self.call.skill, entity, "grasp")
        return p.grasp

    def place_of(self, entity: str) -> Pose:
        p = self.priors.get(entity)
        if p is None or p.place is None:
            raise MissingPrior(self.call.skill, entity, "place")
        return p.place

    # -- world ---------------------------------------------------------------
    def leg_world(self) -> PlanningWorld:
        skip = self.excluded | ({self.state.held} if self.state.held else set())
        clouds = [self.world.obstacles] + [p.cloud for k, p in sorted(self.priors.items()) if k not in skip]
        return PlanningWorld(merge_clouds(clouds), self.world.gripper_cloud, self.world.clearance_radius)

    def tool_pose(self, q=None) -> Pose:
        return Pose.from_matrix(self.chain.fk_matrix(self.q if q is None else q))

    # -- primitives ----------------------------------------------------------
    def emit(self, q_from: np.ndarray, q_to: np.ndarray) -> None:
        v = self.chain.max_velocity * self.cfg.dt
        n = max(1, int(math.ceil(float(np.max(np.abs(q_to - q_from), initial=0.0)) / v - 1e-12)))
        for k in range(1, n + 1):
            q = q_to if k == n else q_from + (q_to - q_from) * (k / n)
            self.traj.steps.append(TrajectoryStep(tuple(q), self.state.gripper))

    def set_gripper(self, value: float) -> None:
        start = self.state.gripper
        if start == value:
            return
        for k in range(1, self.cfg.gripper_steps + 1):
            g = start + (value - start) * k / self.cfg.gripper_steps
            self.traj.steps.append(TrajectoryStep(tuple(self.q), value if k == self.cfg.gripper_steps else g))
        self.state = replace(self.state, gripper=value)

    def solve_ik(self, target: Pose, checker: CollisionChecker) -> np.ndarray:
        seeds = [self.q]
        if self.chain.ready is not None:
            seeds.append(np.asarray(self.chain.ready))
        lo, hi = self.chain.lower, self.chain.upper
        seeds += [self.rng.uniform(lo, hi) for _ in range(self.cfg.ik_restarts)]
        last: Exception | None = None
        for s in seeds:
            try:
                q = inverse_kinematics(self.chain, target, s)
            except NoConvergence as exc:
                last = exc
                continue
            if checker.config_free(q):
                return q
            last = PlanningError("IK solution collides with the environment")
        raise SkillExecutionError(self.call.skill, f"no reachable configuration for {target}", last)

    def escape(self, checker: CollisionChecker) -> None:
        """Back straight up out of contact left behind by the previous skill."""
        here = self.tool_pose()
        for dz in (0.02, 0.04, 0.06, 0.08, 0.1, 0.15):
            try:
                q = inverse_kinematics(self.chain, _shift(here, (0, 0, dz)), self.q)
            except NoConvergence:
                continue
            if checker.config_free(q):
                self.emit(self.q, q)
                self.q = q
                return
        raise SkillExecutionError(self.call.skill, "start configuration is in collision and cannot retreat")

    def smooth(self, path: list[np.ndarray], checker: CollisionChecker) -> list[np.ndarray]:
        if len(path) < 2:
            return path
        poses = [self.tool_pose(q) for q in path]
        samples = smooth_path(poses, self.cfg.samples_per_segment)
        stride = self.cfg.samples_per_segment - 1  # samples[i * stride] is waypoint i
        out = [path[0]]
        try:
            for i in range(len(path) - 1):
                for j in range(1, stride):
                    q = inverse_kinematics(self.chain, samples[i * stride + j], out[-1])
                    if float(np.max(np.abs(q - out[-1]))) > self.cfg.max_joint_jump:
                        return path
                    out.append(q)
                if float(np.max(np.abs(path[i + 1] - out[-1]))) > self.cfg.max_joint_jump:
                    return path
                out.append(path[i + 1])
        except NoConvergence:
            return path
        for a, b in zip(out, out[1:]):
            if not checker.segment_free(a, b):
                return path
        return out

    def move_to(self, target: Pose) -> None:
        world = self.leg_world()
        checker = CollisionChecker(world, self.chain)
        if not checker.config_free(self.q):
            self.escape(checker)
        goal = self.solve_ik(target, checker)
        try:
            path = rrt_plan(
                world, self.chain, self.q, goal, int(self.rng.integers(2**31)),
                max_iterations=self.cfg.max_iterations, checker=checker,
            )
        except PlanningError as exc:
            raise SkillExecutionError(self.call.skill, str(exc), exc) from exc
        path = self.smooth(path, checker)
        for a, b in zip(path, path[1:]):
            self.emit(a, b)
        self.q = path[-1]

    def grasp_pose(self, entity: str) -> Pose:
        base = self.grasp_of(entity)
        pos, quat = _explicit_pose(self.call)
        return Pose(tuple(base.position if pos is None else pos), base.orientation if quat is None else quat)

    def approach(self, grasp: Pose) -> Pose:
        """Sample a clear approach direction, then go to prep and to the grasp."""
        try:
            grasp = sample_grasp_direction(
                self.leg_world(), grasp, self.cfg.grasp_candidates,
                int(self.rng.integers(2**31)), self.cfg.prep_distance,
            )
        except NoValidGrasp as exc:
            raise SkillExecutionError(self.call.skill, str(exc), exc) from exc
        self.move_to(preparation_pose(grasp, self.cfg.prep_distance))
        self.move_to(grasp)
        return grasp

    def carry_update(self) -> None:
        """Move the held entity's cloud and keypoints along with the tool."""
        held = self.state.held
        if held is None or self.state.grasp_tool is None:
            return
        now = self.tool_pose()
        delta = now @ self.state.grasp_tool.inverse()
        if held in self.priors:
            self.priors[held] = self.priors[held].moved(delta)
        self.state = replace(self.state, grasp_tool=now)

    def finish(self) -> SkillResult:
        self.state = replace(self.state, q=tuple(self.q))
        return SkillResult(self.traj, self.state, self.priors)


# -- skill templates -------------------------------------------------------------


def _pick(x: _Executor, target: str | None = None) -> None:
    explicit = target is None
    target = x.call.target if explicit else target
    x.excluded = {target}
    grasp = x.grasp_pose(target) if explicit else x.grasp_of(target)
    x.set_gripper(OPEN)
    x.approach(grasp)
    x.set_gripper(CLOSED)
    x.state = replace(x.state, held=target, grasp_tool=x.tool_pose())
    height = _number(x.call, "height", x.cfg.lift_height)
    x.move_to(_shift(x.tool_pose(), (0, 0, height)))
    x.carry_update()


def _fetch(x: _Executor) -> None:
    """Pick up an explicitly named carried entity that is not yet in hand."""
    carried = explicit_carried(x.call)
    if carried is None or x.state.held == carried:
        return
    if x.state.held is not None:
        raise SkillExecutionError(x.call.skill, f"holding {x.state.held!r}, cannot fetch {carried!r}")
    _pick(x, carried)


def _put(x: _Executor, lower: bool = True) -> None:
    """Shared by Place, Insert and Hang: above the drop point, down, release."""
    dest = destination(x.call)
    _fetch(x)
    x.excluded = {dest} | ({explicit_carried(x.call)} if explicit_carried(x.call) else set())
    pos, quat = _explicit_pose(x.call)
    if pos is None:
        pos = np.asarray(x.place_of(dest).position)
    orient = quat if quat is not None else x.tool_pose().orientation
    spot = Pose(tuple(pos), orient)
    x.move_to(_shift(spot, (0, 0, x.cfg.approach_height)))
    x.carry_update()
    if lower:
        x.move_to(spot)
        x.carry_update()
    x.set_gripper(OPEN)
    held = x.state.held
    x.state = replace(x.state, held=None, grasp_tool=None)
    if held is not None and held in x.priors:
        _settle(x, held, dest if dest in x.priors and dest != held else None)


def _settle(x: _Executor, entity: str, container: str | None) -> None:
    """Drop a released entity straight down onto its support.

    Into a receptacle it comes to rest on the receptacle's floor; anywhere
    else it rests on the highest environment or entity point under it.
    """
    pts = x.priors[entity].cloud.points
    if len(pts) == 0:
        return
    bottom = float(pts[:, 2].min())
    if container is not None and len(x.priors[container].cloud):
        floor = float(x.priors[container].cloud.points[:, 2].min())
    else:
        lo, hi = pts[:, :2].min(axis=0), pts[:, :2].max(axis=0)
        support = [x.world.obstacles.points] + [p.cloud.points for k, p in x.priors.items() if k != entity]
        cand = np.vstack(support)
        under = cand[np.all((cand[:, :2] >= lo) & (cand[:, :2] <= hi), axis=1) & (cand[:, 2] <= bottom + 1e-9)]
        if len(under) == 0:
            return
        floor = float(under[:, 2].max())
    drop = min(0.0, floor - bottom + 0.001)
    x.priors[entity] = x.priors[entity].moved(Pose((0.0, 0.0, drop)))


def _open(x: _Executor) -> None:
    target = x.call.target
    x.excluded = {target}
    x.set_gripper(OPEN)
    grasp = x.approach(x.grasp_pose(target))
    x.set_gripper(CLOSED)
    distance = _number(x.call, "distance", x.cfg.open_pull)
    x.move_to(_shift(grasp, backoff_axis(grasp) * distance))
    x.set_gripper(OPEN)


def _close(x: _Executor) -> None:
    target = x.call.target
    x.excluded = {target}
    grasp = x.approach(x.grasp_pose(target))
    x.move_to(preparation_pose(grasp, x.cfg.prep_distance))


def _press(x: _Executor) -> None:
    target = x.call.target
    x.excluded = {target}
    x.set_gripper(CLOSED)
    grasp = x.approach(x.grasp_pose(target))
    depth = _number(x.call, "depth", x.cfg.press_depth)
    x.move_to(_shift(grasp, -backoff_axis(grasp) * depth))
    x.move_to(preparation_pose(grasp, x.cfg.prep_distance))


def _rotate_in_place(x: _Executor, axis, total: float) -> None:
    n = max(1, int(math.ceil(abs(total) / x.cfg.rotation_substep - 1e-12)))
    base = x.tool_pose()
    for k in range(1, n + 1):
        x.move_to(_spin(base, axis, total * k / n))
        x.carry_update()


def _twist(x: _Executor) -> None:
    target = x.call.target
    x.excluded = {target}
    x.set_gripper(OPEN)
    grasp = x.approach(x.grasp_pose(target))
    x.set_gripper(CLOSED)
    _rotate_in_place(x, -backoff_axis(grasp), _number(x.call, "angle", x.cfg.twist_angle))
    x.set_gripper(OPEN)
    now = x.tool_pose()
    x.move_to(preparation_pose(now, x.cfg.prep_distance))


def _pour(x: _Executor) -> None:
    dest = destination(x.call)
    _fetch(x)
    x.excluded = {dest} | ({explicit_carried(x.call)} if explicit_carried(x.call) else set())
    above = _shift(Pose(x.place_of(dest).position, x.tool_pose().orientation), (0, 0, x.cfg.pour_height))
    x.move_to(above)
    x.carry_update()
    axis = above.orientation.to_matrix()[:, 0]
    angle = _number(x.call, "angle", x.cfg.pour_angle)
    _rotate_in_place(x, axis, angle)
    x.move_to(above)
    x.carry_update()


def _lift(x: _Executor) -> None:
    x.move_to(_shift(x.tool_pose(), (0, 0, _number(x.call, "height", x.cfg.lift_height))))
    x.carry_update()


def _push(x: _Executor) -> None:
    target = x.call.target
    x.excluded = {target}
    x.set_gripper(CLOSED)
    grasp = x.approach(x.grasp_pose(target))
    d = _vector(x.call, "direction")
    direction = np.array(d if d is not None else (1.0, 0.0, 0.0), dtype=float)
    if direction.shape != (3,) or np.linalg.norm(direction) < 1e-12:
        raise SkillExecutionError(x.call.skill, "direction must be a non-zero 3-vector")
    direction /= np.linalg.norm(direction)
    dist = _number(x.call, "distance", x.cfg.push_distance)
    x.move_to(_shift(grasp, direction * dist))
    if target in x.priors:
        x.priors[target] = x.priors[target].moved(Pose(tuple(direction * dist)))
    x.move_to(_shift(x.tool_pose(), (0, 0, x.cfg.prep_distance)))


def _explore(x: _Executor) -> None:
    target = x.call.target
    x.excluded = {target}
    prior = x.priors.get(target)
    if prior is None or (prior.grasp is None and prior.place is None):
        raise MissingPrior(x.call.skill, target, "grasp or place")
    key = prior.grasp or prior.place
    x.move_to(preparation_pose(key, x.cfg.prep_distance))


TEMPLATES = {
    "Pick": _pick,
    "Place": _put,
    "Insert": _put,
    "Hang": _put,
    "Open": _open,
    "Close": _close,
    "Press": _press,
    "Twist": _twist,
    "Pour": _pour,
    "Lift": _lift,
    "Push": _push,
    "Explore": _explore,
}


def execute_skill(
    call: SkillCall,
    priors: Mapping[str, EntityPrior],
    world: PlanningWorld,
    chain: KinematicChain,
    state: RobotState,
    seed: int = 0,
    config: SkillConfig = SkillConfig(),
) -> SkillResult:
    """Expand one skill call into a velocity-bounded trajectory segment.

    The returned trajectory does not repeat the starting configuration.
    Planning and IK failures surface as ``SkillExecutionError`` naming the
    skill, which callers treat as early termination of the episode.
    """
    template = TEMPLATES.get(call.skill)
    if template is None:
        raise SkillExecutionError(call.skill, "skill has no motion template")
    try:
        chain.check_limits(state.q)
    except LimitViolation as exc:
        raise SkillExecutionError(call.skill, str(exc), exc) from exc
    x = _Executor(call, priors, world, chain, state, seed, config)
    template(x)
    return x.finish()
