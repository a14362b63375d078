"""Serial-chain forward kinematics and damped-least-squares inverse kinematics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from ..geometry import Pose, Quaternion

MAX_JOINTS = 16


class LimitViolation(ValueError):
    pass


class NoConvergence(RuntimeError):
    def __init__(self, iterations: int, residual: tuple[float, float]):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"IK did not converge after {iterations} iterations "
            f"(position error {residual[0]:.3g} m, orientation error {residual[1]:.3g} rad)"
        )


@dataclass(frozen=True)
class Joint:
    axis: tuple[float, float, float]
    origin_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation_offset: Quaternion = Quaternion()
    limits: tuple[float, float] = (-math.pi, math.pi)

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        n = float(np.linalg.norm(axis))
        if n < 1e-12:
            raise ValueError("joint axis must be non-zero")
        object.__setattr__(self, "axis", tuple(axis / n))
        object.__setattr__(self, "origin_offset", tuple(float(v) for v in self.origin_offset))
        lo, hi = (float(v) for v in self.limits)
        if not lo < hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got {self.limits}")
        object.__setattr__(self, "limits", (lo, hi))


def _static_transform(j: Joint) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = j.rotation_offset.to_matrix()
    m[:3, 3] = j.origin_offset
    return m


def _axis_rotations(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrices, shape (len(angles), 3, 3)."""
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    s = np.sin(angles)[:, None, None]
    c = np.cos(angles)[:, None, None]
    return np.eye(3) + s * k + (1 - c) * (k @ k)


@dataclass(frozen=True, eq=False)
class KinematicChain:
    joints: tuple[Joint, ...]
    tool_offset: Pose = Pose()
    max_velocity: float = 1.0  # rad/s, per joint
    name: str = "chain"
    ready: tuple[float, ...] | None = None
    _static: np.ndarray = field(init=False, repr=False)
    _axes: np.ndarray = field(init=False, repr=False)
    _tool: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        if len(self.joints) > MAX_JOINTS:
            raise ValueError(f"at most {MAX_JOINTS} joints are supported")
        if not self.max_velocity > 0:
            raise ValueError("max_velocity must be positive")
        object.__setattr__(self, "_static", np.array([_static_transform(j) for j in self.joints]).reshape(-1, 4, 4))
        object.__setattr__(self, "_axes", np.array([j.axis for j in self.joints], dtype=float).reshape(-1, 3))
        object.__setattr__(self, "_tool", self.tool_offset.to_matrix())
        if self.ready is not None:
            object.__setattr__(self, "ready", tuple(float(v) for v in self.ready))
            self.check_limits(self.ready)

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def check_limits(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape != (self.dof,):
            raise LimitViolation(f"expected {self.dof} joint angles, got {q.shape[0]}")
        bad = (q < self.lower) | (q > self.upper) | ~np.isfinite(q)
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            raise LimitViolation(f"joint {i} angle {q[i]:.6g} outside {self.joints[i].limits}")
        return q

    def fk_batch(self, qs) -> np.ndarray:
        """Tool transforms for many configurations, shape (K, 4, 4). No limit check."""
        qs = np.asarray(qs, dtype=float)
        # a joint-less chain has a single empty configuration
        qs = qs.reshape(-1, self.dof) if self.dof else np.zeros((1, 0))
        t = np.broadcast_to(np.eye(4), (len(qs), 4, 4)).copy()
        for i in range(self.dof):
            t = t @ self._static[i]
            r = _axis_rotations(self._axes[i], qs[:, i])
            t[:, :3, :3] = t[:, :3, :3] @ r
        return t @ self._tool

    def fk_matrix(self, q) -> np.ndarray:
        return self.fk_batch(q)[0]

    def lipschitz(self, gripper_radius: float = 0.0) -> float:
        """Bound on tool-point speed per unit of max-norm joint speed.

        Moving joint i by d rad moves a point at most (its distance to joint
        i's origin) * d; that distance is bounded by the link lengths beyond i.
        """
        reach_after = [float(np.linalg.norm(j.origin_offset)) for j in self.joints] + [0.0]
        tail = float(np.linalg.norm(self.tool_offset.position)) + gripper_radius
        total = 0.0
        for i in range(self.dof):
            total += sum(reach_after[i + 1 :]) + tail
        return total

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "max_velocity": self.max_velocity,
            "joints": [
                {
                    "axis": list(j.axis),
                    "origin_offset": list(j.origin_offset),
                    "rotation_offset": list(j.rotation_offset.as_tuple()),
                    "limits": list(j.limits),
                }
                for j in self.joints
            ],
            "tool_offset": self.tool_offset.to_json(),
            **({"ready": list(self.ready)} if self.ready is not None else {}),
        }

    @classmethod
    def from_json(cls, data: dict) -> "KinematicChain":
        joints = tuple(
            Joint(
                tuple(j["axis"]),
                tuple(j.get("origin_offset", (0.0, 0.0, 0.0))),
                Quaternion(*j.get("rotation_offset", (1.0, 0.0, 0.0, 0.0))),
                tuple(j["limits"]),
            )
            for j in data["joints"]
        )
        tool = Pose.from_json(data["tool_offset"]) if "tool_offset" in data else Pose()
        ready = tuple(float(v) for v in data["ready"]) if "ready" in data else None
        return cls(joints, tool, float(data.get("max_velocity", 1.0)), data.get("name", "chain"), ready)


def load_chain(path: str | Path) -> KinematicChain:
    return KinematicChain.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def default_chain() -> KinematicChain:
    """The shipped 7-joint arm (Panda-like geometry)."""
    text = resources.files("vlabkit.data").joinpath("chains/panda.json").read_text(encoding="utf-8")
    return KinematicChain.from_json(json.loads(text))


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    q = chain.check_limits(q)
    return Pose.from_matrix(chain.fk_matrix(q))


def _rot_error(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    """World-frame rotation vector taking ``current`` to ``target``."""
    return Quaternion.from_matrix(target @ current.T).rotvec()


def pose_error(chain: KinematicChain, q, target: Pose) -> tuple[float, float]:
    m = chain.fk_matrix(q)
    t = target.to_matrix()
    return float(np.linalg.norm(t[:3, 3] - m[:3, 3])), float(np.linalg.norm(_rot_error(t[:3, :3], m[:3, :3])))


def numerical_jacobian(chain: KinematicChain, q: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """6 x n central-difference Jacobian (linear rows, then angular rows)."""
    n = chain.dof
    qs = np.repeat(q[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    qs[2 * idx, idx] += h
    qs[2 * idx + 1, idx] -= h
    ts = chain.fk_batch(qs)
    jac = np.empty((6, n))
    for i in range(n):
        tp, tm = ts[2 * i], ts[2 * i + 1]
        jac[:3, i] = (tp[:3, 3] - tm[:3, 3]) / (2 * h)
        jac[3:, i] = _rot_error(tp[:3, :3], tm[:3, :3]) / (2 * h)
    return jac


def inverse_kinematics(
    chain: KinematicChain,
    target: Pose,
    seed,
    *,
    damping: float = 0.05,
    max_iterations: int = 500,
    pos_tol: float = 1e-3,
    rot_tol: float = 1e-2,
    max_step: float = 0.2,
    h: float = 1e-6,
    patience: int = 60,
) -> np.ndarray:
    """Damped least squares from ``seed`` with per-iteration limit clamping.

    Iterates until the pose error is far inside tolerance, or has not
    improved by 1% within ``patience`` iterations, then accepts the best
    iterate if it meets ``pos_tol`` and ``rot_tol``.
    """
    q = chain.check_limits(seed).copy()
    lo, hi = chain.lower, chain.upper
    t = target.to_matrix()
    tight_pos, tight_rot = pos_tol * 1e-3, rot_tol * 1e-3
    best_q, best_err = q.copy(), (math.inf, math.inf)
    lam2 = damping * damping
    mark, mark_it = math.inf, 0  # stagnation reference score and iteration
    for it in range(max_iterations + 1):
        m = chain.fk_matrix(q)
        e = np.concatenate([t[:3, 3] - m[:3, 3], _rot_error(t[:3, :3], m[:3, :3])])
        err = (float(np.linalg.norm(e[:3])), float(np.linalg.norm(e[3:])))
        score = err[0] / pos_tol + err[1] / rot_tol
        if score < best_err[0] / pos_tol + best_err[1] / rot_tol:
            best_q, best_err = q.copy(), err
        if score < 0.99 * mark:
            mark, mark_it = score, it
        if err[0] <= tight_pos and err[1] <= tight_rot:
            break
        if it == max_iterations or it - mark_it >= patience:
            break
        jac = numerical_jacobian(chain, q, h)
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * np.eye(6), e)
        big = float(np.max(np.abs(dq)))
        if big > max_step:
            dq *= max_step / big
        q_next = np.clip(q + dq, lo, hi)
        if np.max(np.abs(q_next - q)) < 1e-12:
            break
        q = q_next
    if best_err[0] <= pos_tol and best_err[1] <= rot_tol:
        return best_q
    raise NoConvergence(it, best_err)


def inverse_kinematics_restarts(
    chain: KinematicChain, target: Pose, seeds: Sequence, restarts: int = 0, rng_seed: int = 0, **kwargs
) -> np.ndarray:
    """Try each seed in order, then ``restarts`` uniform random seeds.

    Raises the last ``NoConvergence`` when every attempt fails.
    """
    rng = np.random.default_rng(rng_seed)
    attempts = [np.asarray(s, dtype=float) for s in seeds]
    attempts += [rng.uniform(chain.lower, chain.upper) for _ in range(restarts)]
    last: NoConvergence | None = None
    for s in attempts:
        try:
            return inverse_kinematics(chain, target, s, **kwargs)
        except NoConvergence as exc:
            last = exc
    if last is None:
        raise ValueError("no seeds given")
    raise last
