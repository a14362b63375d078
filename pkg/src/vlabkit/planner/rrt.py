"""Joint-space RRT with certified edge checks against an environment point cloud."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import GridIndex, PointCloud
from .kinematics import KinematicChain

STEP = 0.1
GOAL_BIAS = 0.1
MAX_ITERATIONS = 20_000
_MIN_INTERVAL = 1e-6  # rad; narrower uncertified intervals count as collisions


class PlanningError(RuntimeError):
    pass


class StartInCollision(PlanningError):
    pass


class GoalInCollision(PlanningError):
    pass


class Timeout(PlanningError):
    def __init__(self, max_iterations: int):
        self.max_iterations = max_iterations
        super().__init__(f"RRT found no path within {max_iterations} iterations")


@dataclass(frozen=True, eq=False)
class PlanningWorld:
    obstacles: PointCloud
    gripper_cloud: PointCloud  # tool frame
    clearance_radius: float = 0.01

    def __post_init__(self):
        if not self.clearance_radius > 0:
            raise ValueError("clearance_radius must be positive")


class CollisionChecker:
    """Gripper-cloud versus obstacle-cloud checks for one chain.

    A configuration collides when any gripper point lies within the
    clearance radius of an obstacle point. Edges are certified with
    conservative advancement: gripper points move at most ``L * |dq|_inf``
    for the chain's Lipschitz constant ``L``, so clearance measured at the
    ends of an interval bounds the clearance everywhere inside it.
    """

    def __init__(self, world: PlanningWorld, chain: KinematicChain):
        self.world = world
        self.chain = chain
        self.radius = world.clearance_radius
        self.cap = max(4.0 * self.radius, 0.04)
        self._gripper = np.asarray(world.gripper_cloud.points, dtype=float)
        self._grid = GridIndex(world.obstacles.points, self.cap) if len(world.obstacles) else None
        if self._grid is not None:
            self.cap = min(self.cap, self._grid.cell)
        g_radius = float(np.max(np.linalg.norm(self._gripper, axis=1))) if len(self._gripper) else 0.0
        self.lipschitz = max(chain.lipschitz(g_radius), 1e-9)
        self.checks = 0

    def gripper_points(self, qs) -> np.ndarray:
        """World-frame gripper points, shape (K, m, 3)."""
        ts = self.chain.fk_batch(qs)
        return np.einsum("kij,mj->kmi", ts[:, :3, :3], self._gripper) + ts[:, None, :3, 3]

    def clearance(self, qs) -> np.ndarray:
        """Per-configuration gripper clearance, capped at ``self.cap``."""
        qs = np.asarray(qs, dtype=float).reshape(-1, self.chain.dof)
        self.checks += len(qs)
        if self._grid is None or len(self._gripper) == 0:
            return np.full(len(qs), math.inf)
        pts = self.gripper_points(qs)
        d = self._grid.nearest_within(pts.reshape(-1, 3), self.cap).reshape(len(qs), -1).min(axis=1)
        return np.minimum(d, self.cap)

    def config_free(self, q) -> bool:
        return bool(self.clearance(q)[0] > self.radius)

    def segment_free(self, qa, qb) -> bool:
        """True when every configuration on the straight joint segment is free."""
        qa = np.asarray(qa, dtype=float)
        qb = np.asarray(qb, dtype=float)
        span = float(np.max(np.abs(qb - qa))) if len(qa) else 0.0
        if self._grid is None or len(self._gripper) == 0:
            return True
        if span == 0.0:
            return self.config_free(qa)
        # initial samples: the widest interval that free-space clearance could certify
        width = 2.0 * (self.cap - self.radius) / self.lipschitz
        n = max(1, int(math.ceil(span / min(width, STEP / 2))))
        ts = np.linspace(0.0, 1.0, n + 1)
        d = self.clearance(qa + ts[:, None] * (qb - qa))
        if np.any(d <= self.radius):
            return False
        lo_t, hi_t, lo_d, hi_d = ts[:-1], ts[1:], d[:-1], d[1:]
        while len(lo_t):
            budget = (lo_d - self.radius) / self.lipschitz + (hi_d - self.radius) / self.lipschitz
            open_ = budget <= (hi_t - lo_t) * span
            if not open_.any():
                return True
            lo_t, hi_t, lo_d, hi_d = lo_t[open_], hi_t[open_], lo_d[open_], hi_d[open_]
            if np.any((hi_t - lo_t) * span < _MIN_INTERVAL):
                return False
            mid = 0.5 * (lo_t + hi_t)
            md = self.clearance(qa + mid[:, None] * (qb - qa))
            if np.any(md <= self.radius):
                return False
            lo_t, hi_t = np.concatenate([lo_t, mid]), np.concatenate([mid, hi_t])
            lo_d, hi_d = np.concatenate([lo_d, md]), np.concatenate([md, hi_d])
        return True


def shortcut(path: list[np.ndarray], checker: CollisionChecker) -> list[np.ndarray]:
    """Greedy pass: from each kept node, jump to the farthest directly reachable node."""
    out = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1 and not checker.segment_free(path[i], path[j]):
            j -= 1
        out.append(path[j])
        i = j
    return out


def rrt_plan(
    world: PlanningWorld,
    chain: KinematicChain,
    start,
    goal,
    seed: int,
    *,
    step: float = STEP,
    goal_bias: float = GOAL_BIAS,
    max_iterations: int = MAX_ITERATIONS,
    checker: CollisionChecker | None = None,
) -> list[np.ndarray]:
    """Plan a collision-free joint path from ``start`` to ``goal``.

    Tries the direct segment first, then grows a single tree with goal
    biasing and finishes with a greedy shortcut pass. All randomness comes
    from ``seed``.
    """
    start = chain.check_limits(start).copy()
    goal = chain.check_limits(goal).copy()
    checker = checker or CollisionChecker(world, chain)
    if not checker.config_free(start):
        raise StartInCollision("start configuration collides with the environment")
    if not checker.config_free(goal):
        raise GoalInCollision("goal configuration collides with the environment")
    if np.array_equal(start, goal):
        return [start]
    if checker.segment_free(start, goal):
        return [start, goal]

    rng = np.random.default_rng(seed)
    lo, hi = chain.lower, chain.upper
    nodes = np.empty((min(max_iterations, 4096) + 1, chain.dof))
    nodes[0] = start
    parents = [-1]
    count = 1
    for _ in range(max_iterations):
        sample = goal if rng.random() < goal_bias else rng.uniform(lo, hi)
        dist = np.linalg.norm(nodes[:count] - sample, axis=1)
        near = int(np.argmin(dist))
        if dist[near] < 1e-12:
            continue
        new = sample if dist[near] <= step else nodes[near] + (sample - nodes[near]) * (step / dist[near])
        if not checker.segment_free(nodes[near], new):
            continue
        if count == len(nodes):
            nodes = np.vstack([nodes, np.empty_like(nodes)])
        nodes[count] = new
        parents.append(near)
        count += 1
        if np.linalg.norm(goal - new) <= step and checker.segment_free(new, goal):
            path = [goal]
            k = count - 1
            while k >= 0:
                path.append(nodes[k].copy())
                k = parents[k]
            path.reverse()
            if np.array_equal(path[-2], goal):
                path.pop()
            return shortcut(path, checker)
    raise Timeout(max_iterations)


def interpolate(path, resolution: float) -> np.ndarray:
    """Dense samples along a joint path with max-norm spacing at most ``resolution``."""
    path = [np.asarray(q, dtype=float) for q in path]
    if len(path) == 1:
        return path[0][None, :]
    chunks = []
    for a, b in zip(path, path[1:]):
        n = max(1, int(math.ceil(float(np.max(np.abs(b - a))) / resolution)))
        chunks.append(a + np.linspace(0.0, 1.0, n + 1)[:-1, None] * (b - a))
    chunks.append(path[-1][None, :])
    return np.vstack(chunks)
