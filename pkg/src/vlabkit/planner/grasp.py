"""Approach-direction rejection sampling around an annotated grasp."""

from __future__ import annotations

import numpy as np

from ..geometry import Pose, PointCloud, Quaternion, overlap_count
from .rrt import PlanningError, PlanningWorld

PREP_DISTANCE = 0.08  # back-off from the grasp point along the approach axis
SWEEP_SPACING = 0.01


class NoValidGrasp(PlanningError):
    def __init__(self, candidates: int):
        self.candidates = candidates
        super().__init__(f"all {candidates} approach directions overlap the environment")


def backoff_axis(pose: Pose) -> np.ndarray:
    """Unit vector from the grasp point towards the preparation position (tool -z)."""
    return -pose.orientation.to_matrix()[:, 2]


def preparation_pose(grasp: Pose, distance: float = PREP_DISTANCE) -> Pose:
    return Pose(tuple(np.asarray(grasp.position) + distance * backoff_axis(grasp)), grasp.orientation)


def _rotation_between(u: np.ndarray, v: np.ndarray) -> Quaternion:
    """Smallest rotation taking unit vector u onto unit vector v."""
    c = float(np.clip(np.dot(u, v), -1.0, 1.0))
    axis = np.cross(u, v)
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        if c > 0:
            return Quaternion.identity()
        perp = np.cross(u, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(u, [0.0, 1.0, 0.0])
        return Quaternion.from_axis_angle(perp, np.pi)
    return Quaternion.from_axis_angle(axis / n, float(np.arctan2(n, c)))


def grasp_candidates(grasp: Pose, candidates: int, seed: int) -> list[Pose]:
    """Annotated grasp first, then tilted approaches ordered by tilt angle.

    Tilted back-off directions are drawn uniformly from the hemisphere
    around the annotated back-off axis.
    """
    if candidates < 1:
        raise ValueError("candidates must be >= 1")
    u = backoff_axis(grasp)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(candidates - 1, 3))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    dirs[dirs @ u < 0] *= -1.0
    order = np.argsort(-(dirs @ u), kind="stable")
    out = [grasp]
    for v in dirs[order]:
        q = _rotation_between(u, v) * grasp.orientation
        out.append(Pose(grasp.position, q))
    return out


def approach_sweep(grasp: Pose, distance: float = PREP_DISTANCE, spacing: float = SWEEP_SPACING) -> list[Pose]:
    """Poses from the preparation position to the grasp at ``spacing`` intervals."""
    n = int(np.ceil(distance / spacing - 1e-9))
    u = backoff_axis(grasp)
    p = np.asarray(grasp.position)
    return [Pose(tuple(p + u * distance * (1 - k / n)), grasp.orientation) for k in range(n + 1)]


def sweep_overlap(world: PlanningWorld, grasp: Pose, distance: float = PREP_DISTANCE) -> int:
    """Overlapping gripper points summed over the approach sweep."""
    if len(world.obstacles) == 0 or len(world.gripper_cloud) == 0:
        return 0
    swept = PointCloud(np.vstack([pose.apply(world.gripper_cloud.points) for pose in approach_sweep(grasp, distance)]))
    return overlap_count(swept, world.obstacles, world.clearance_radius)


def sample_grasp_direction(
    world: PlanningWorld, grasp_point: Pose, candidates: int, seed: int, distance: float = PREP_DISTANCE
) -> Pose:
    """First candidate approach whose prep-to-grasp sweep is overlap-free."""
    cands = grasp_candidates(grasp_point, candidates, seed)
    for pose in cands:
        if sweep_overlap(world, pose, distance) == 0:
            return pose
    raise NoValidGrasp(candidates)


def default_gripper_cloud(spacing: float = 0.01) -> PointCloud:
    """Two finger pads ending at the tool point plus a palm bar, tool frame."""
    zs = np.arange(-0.05, 1e-9, spacing)
    xs = np.array([-spacing, 0.0, spacing])
    fingers = [(x, y, z) for y in (-0.04, 0.04) for x in xs for z in zs]
    palm = [(x, y, -0.06) for x in xs for y in np.arange(-0.04, 0.04 + 1e-9, spacing)]
    return PointCloud(np.array(fingers + palm), "tool")
