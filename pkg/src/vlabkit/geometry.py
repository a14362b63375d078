"""Poses, quaternions, SLERP, Bezier smoothing and point-cloud proximity queries."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ANTIPODAL_EPS = 1e-9


class EmptyCloud(ValueError):
    pass


class TooFewWaypoints(ValueError):
    pass


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z). Normalised on construction."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if not math.isfinite(n) or n < 1e-12:
            raise ValueError(f"cannot normalise quaternion {self.as_tuple()}")
        for name in ("w", "x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)) / n)

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Quaternion":
        ax = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(ax))
        if n < 1e-12:
            return cls.identity()
        ax = ax / n
        s = math.sin(angle / 2.0)
        return cls(math.cos(angle / 2.0), ax[0] * s, ax[1] * s, ax[2] * s)

    @classmethod
    def from_rotvec(cls, v: Sequence[float]) -> "Quaternion":
        angle = float(np.linalg.norm(v))
        return cls.from_axis_angle(v, angle) if angle > 0 else cls.identity()

    @classmethod
    def from_euler(cls, roll: float, pitch: float, yaw: float) -> "Quaternion":
        """Fixed-axis x-y-z angles: R = Rz(yaw) Ry(pitch) Rx(roll)."""
        return (
            cls.from_axis_angle((0, 0, 1), yaw)
            * cls.from_axis_angle((0, 1, 0), pitch)
            * cls.from_axis_angle((1, 0, 0), roll)
        )

    @classmethod
    def from_matrix(cls, m) -> "Quaternion":
        m = np.asarray(m, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = math.sqrt(tr + 1.0) * 2
            return cls(0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            return cls((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            return cls((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        return cls((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())

    def __mul__(self, o: "Quaternion") -> "Quaternion":
        a, b = self, o
        return Quaternion(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate

    def dot(self, o: "Quaternion") -> float:
        return self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z

    def canonical(self) -> "Quaternion":
        """Representative of {q, -q} with w >= 0 (ties broken on x, then y, then z)."""
        for c in self.as_tuple():
            if c > 0:
                return self
            if c < 0:
                return -self
        return self  # pragma: no cover - unit norm rules out all zeros

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.as_tuple()
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def rotate(self, v: Sequence[float]) -> np.ndarray:
        return self.to_matrix() @ np.asarray(v, dtype=float)

    def rotvec(self) -> np.ndarray:
        """Axis * angle with angle in [0, pi]."""
        q = self.canonical()
        s = math.sqrt(q.x * q.x + q.y * q.y + q.z * q.z)
        if s < 1e-15:
            return np.zeros(3)
        angle = 2.0 * math.atan2(s, q.w)
        return np.array([q.x, q.y, q.z]) * (angle / s)

    def angle_to(self, o: "Quaternion") -> float:
        """Rotation angle of ``self^-1 * o`` in [0, pi]."""
        d = self.conjugate() * o
        s = math.sqrt(d.x * d.x + d.y * d.y + d.z * d.z)
        return 2.0 * math.atan2(s, abs(d.w))


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation: Quaternion = Quaternion()

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise ValueError(f"pose position must be 3 finite reals, got {self.position!r}")
        object.__setattr__(self, "position", pos)

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(tuple(m[:3, 3]), Quaternion.from_matrix(m[:3, :3]))

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.orientation.to_matrix()
        m[:3, 3] = self.position
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        pos = np.asarray(self.position) + self.orientation.rotate(other.position)
        return Pose(tuple(pos), self.orientation * other.orientation)

    def inverse(self) -> "Pose":
        inv = self.orientation.conjugate()
        return Pose(tuple(-inv.rotate(self.position)), inv)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return pts @ self.orientation.to_matrix().T + np.asarray(self.position)

    def to_json(self) -> dict:
        return {"position": list(self.position), "orientation": list(self.orientation.as_tuple())}

    @classmethod
    def from_json(cls, data) -> "Pose":
        return cls(tuple(data["position"]), Quaternion(*data.get("orientation", (1.0, 0.0, 0.0, 0.0))))


def slerp(a: Quaternion, b: Quaternion, t: float) -> Quaternion:
    """Constant-angular-velocity interpolation along the shorter arc.

    ``b`` is negated when ``a . b < 0``; after that the two inputs are never
    antipodal, since ``-a`` is the same rotation as ``a``.
    """
    d = a.dot(b)
    if d < 0.0:
        b = -b
        d = -d
    if d > 1.0 - ANTIPODAL_EPS:
        return Quaternion(
            a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)
        )
    theta = math.acos(min(1.0, d))
    s = math.sin(theta)
    ka = math.sin((1.0 - t) * theta) / s
    kb = math.sin(t * theta) / s
    return Quaternion(ka * a.w + kb * b.w, ka * a.x + kb * b.x, ka * a.y + kb * b.y, ka * a.z + kb * b.z)


@dataclass(frozen=True)
class BezierSegment:
    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray

    def evaluate(self, t: float) -> np.ndarray:
        if t == 0.0:
            return np.array(self.p0, dtype=float)
        if t == 1.0:
            return np.array(self.p3, dtype=float)
        u = 1.0 - t
        return u**3 * self.p0 + 3 * u * u * t * self.p1 + 3 * u * t * t * self.p2 + t**3 * self.p3

    def derivative(self, t: float) -> np.ndarray:
        u = 1.0 - t
        return 3 * u * u * (self.p1 - self.p0) + 6 * u * t * (self.p2 - self.p1) + 3 * t * t * (self.p3 - self.p2)


def catmull_rom_segments(points: Sequence[Sequence[float]], tension: float = 0.5) -> list[BezierSegment]:
    """Cubic Bezier segments through every point with shared tangents at joints."""
    pts = [np.asarray(p, dtype=float) for p in points]
    n = len(pts)
    if n < 2:
        raise TooFewWaypoints("need at least two waypoints")
    tangents = []
    for i in range(n):
        if i == 0:
            m = pts[1] - pts[0]
        elif i == n - 1:
            m = pts[-1] - pts[-2]
        else:
            m = tension * (pts[i + 1] - pts[i - 1])
        tangents.append(m)
    return [
        BezierSegment(pts[i], pts[i] + tangents[i] / 3.0, pts[i + 1] - tangents[i + 1] / 3.0, pts[i + 1])
        for i in range(n - 1)
    ]


def smooth_path(waypoints: Sequence[Pose], samples_per_segment: int = 10) -> list[Pose]:
    """Resample waypoints along a C1 piecewise-cubic curve with SLERPed orientations.

    Each segment contributes ``samples_per_segment`` samples including both
    ends; shared joints appear once. Every input waypoint is reproduced.
    """
    if len(waypoints) < 2:
        raise TooFewWaypoints("need at least two waypoints")
    if samples_per_segment < 2:
        raise ValueError("samples_per_segment must be >= 2")
    segs = catmull_rom_segments([w.position for w in waypoints])
    out = [waypoints[0]]
    for i, seg in enumerate(segs):
        qa, qb = waypoints[i].orientation, waypoints[i + 1].orientation
        for k in range(1, samples_per_segment):
            t = k / (samples_per_segment - 1)
            if k == samples_per_segment - 1:
                out.append(waypoints[i + 1])
            else:
                out.append(Pose(tuple(seg.evaluate(t)), slerp(qa, qb, t)))
    return out


# --- point clouds -------------------------------------------------------------

_MAGIC = b"PCLB"


class PointCloud:
    """Immutable (n, 3) array of points in metres, tagged with a frame name."""

    __slots__ = ("points", "frame")

    def __init__(self, points=(), frame: str = "world"):
        pts = np.array(points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        pts.setflags(write=False)
        self.points = pts
        self.frame = frame

    def __len__(self) -> int:
        return len(self.points)

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)}, frame={self.frame!r})"

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.points, other.points)

    __hash__ = None

    def merged(self, *others: "PointCloud") -> "PointCloud":
        return PointCloud(np.vstack([self.points] + [o.points for o in others]), self.frame)

    def to_bytes(self) -> bytes:
        return _MAGIC + struct.pack("<I", len(self)) + self.points.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, frame: str = "world") -> "PointCloud":
        if data[:4] != _MAGIC or len(data) < 8:
            raise ValueError("not a PCLB point cloud")
        (count,) = struct.unpack("<I", data[4:8])
        body = data[8:]
        if len(body) != count * 24:
            raise ValueError(f"PCLB body holds {len(body)} bytes, expected {count * 24}")
        return cls(np.frombuffer(body, dtype="<f8").reshape(count, 3), frame)

    def to_json(self) -> dict:
        return {"frame": self.frame, "points": self.points.tolist()}

    @classmethod
    def from_json(cls, data) -> "PointCloud":
        return cls(data["points"], data.get("frame", "world"))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(json.dumps(self.to_json()), encoding="utf-8")
        else:
            path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: str | Path, frame: str = "world") -> "PointCloud":
        path = Path(path)
        if path.suffix == ".json":
            return cls.from_json(json.loads(path.read_text(encoding="utf-8")))
        return cls.from_bytes(path.read_bytes(), frame)


def transform_cloud(c: PointCloud, pose: Pose, frame: str | None = None) -> PointCloud:
    return PointCloud(pose.apply(c.points), c.frame if frame is None else frame)


_OFFSETS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.int64)
_BIAS = 1 << 20
_SPAN = 1 << 21


class GridIndex:
    """Uniform-grid spatial hash over a fixed point set.

    Queries look only at the 27 cells around each query point, so they are
    exact for any radius up to the cell size.
    """

    def __init__(self, points, cell: float):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if not cell > 0:
            raise ValueError("cell size must be positive")
        if len(pts):
            extent = float(np.max(np.abs(pts)))
            # keep integer cell coordinates inside the packed key range
            cell = max(cell, extent / (_BIAS // 2))
        self.cell = float(cell)
        ijk = np.floor(pts / self.cell).astype(np.int64)
        if len(pts):
            self._lo, self._hi = ijk.min(axis=0) - 1, ijk.max(axis=0) + 1
        keys = self._pack(ijk)
        order = np.argsort(keys, kind="stable")
        self.points = pts[order]
        self.keys, self.starts, self.counts = np.unique(keys[order], return_index=True, return_counts=True)

    @staticmethod
    def _pack(ijk: np.ndarray) -> np.ndarray:
        b = ijk + _BIAS
        return (b[:, 0] * _SPAN + b[:, 1]) * _SPAN + b[:, 2]

    def __len__(self) -> int:
        return len(self.points)

    def _candidates(self, q: np.ndarray):
        """(query index, point index) pairs for points in the 27 neighbouring cells."""
        if len(self.points) == 0 or len(q) == 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        f = np.floor(q / self.cell)
        valid = np.all((f >= self._lo) & (f <= self._hi), axis=1)
        if not valid.any():
            return np.empty(0, np.int64), np.empty(0, np.int64)
        vidx = np.nonzero(valid)[0]
        qijk = f[valid].astype(np.int64)
        qi_all, pj_all = [], []
        nkeys = len(self.keys)
        for off in _OFFSETS:
            keys = self._pack(qijk + off)
            pos = np.searchsorted(self.keys, keys)
            pos_c = np.minimum(pos, nkeys - 1)
            hit = self.keys[pos_c] == keys
            if not hit.any():
                continue
            qi = vidx[hit]
            cells = pos_c[hit]
            cnt = self.counts[cells]
            total = int(cnt.sum())
            within = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            qi_all.append(np.repeat(qi, cnt))
            pj_all.append(np.repeat(self.starts[cells], cnt) + within)
        if not qi_all:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(qi_all), np.concatenate(pj_all)

    def nearest_within(self, queries, cap: float) -> np.ndarray:
        """Distance from each query to its nearest indexed point, or inf beyond ``cap``."""
        if cap > self.cell * (1 + 1e-12):
            raise ValueError("cap exceeds the grid cell size")
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        best = np.full(len(q), np.inf)
        qi, pj = self._candidates(q)
        if len(qi):
            d = np.sqrt(np.sum((q[qi] - self.points[pj]) ** 2, axis=1))
            np.minimum.at(best, qi, d)
        best[best > cap] = np.inf
        return best

    def any_within(self, queries, radius: float) -> np.ndarray:
        """Boolean mask: query has an indexed point at distance <= radius."""
        if radius > self.cell * (1 + 1e-12):
            raise ValueError("radius exceeds the grid cell size")
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        hit = np.zeros(len(q), dtype=bool)
        qi, pj = self._candidates(q)
        if len(qi):
            d2 = np.sum((q[qi] - self.points[pj]) ** 2, axis=1)
            hit[qi[d2 <= radius * radius]] = True
        return hit


def _spacing_estimate(pts: np.ndarray) -> float:
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = np.maximum(hi - lo, 1e-9)
    spacing = float((np.prod(ext) / len(pts)) ** (1.0 / 3.0))
    return max(spacing, 1e-9, float(ext.max()) * 1e-6)


def min_distance(a: PointCloud, b: PointCloud) -> float:
    """Exact minimum distance over all cross pairs."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloud("min_distance needs two non-empty clouds")
    h = _spacing_estimate(b.points)
    while True:
        grid = GridIndex(b.points, h)
        d = grid.nearest_within(a.points, grid.cell)
        if np.isfinite(d).any():
            return float(d.min())
        h = grid.cell * 4.0


def overlap_count(a: PointCloud, b: PointCloud, radius: float) -> int:
    """Number of points of ``a`` within ``radius`` of some point of ``b``."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    if len(a) == 0 or len(b) == 0:
        return 0
    grid = GridIndex(b.points, radius * (1 + 1e-9))
    return int(grid.any_within(a.points, radius).sum())


def box_cloud(center, size, spacing: float, frame: str = "world", hollow: bool = True) -> PointCloud:
    """Axis-aligned box sampled on a regular lattice (surface only when ``hollow``)."""
    center = np.asarray(center, dtype=float)
    size = np.asarray(size, dtype=float)
    axes = [np.linspace(-s / 2, s / 2, max(2, int(round(s / spacing)) + 1)) for s in size]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if hollow:
        on_face = np.zeros(len(grid), dtype=bool)
        for k in range(3):
            on_face |= np.isclose(np.abs(grid[:, k]), size[k] / 2)
        grid = grid[on_face]
    return PointCloud(grid + center, frame)


def sphere_cloud(center, radius: float, count: int, frame: str = "world") -> PointCloud:
    """Fibonacci-lattice points on a sphere surface."""
    i = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * i / count)
    theta = math.pi * (1 + 5**0.5) * i
    pts = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    return PointCloud(pts * radius + np.asarray(center, dtype=float), frame)


def merge_clouds(clouds: Iterable[PointCloud], frame: str = "world") -> PointCloud:
    arrays = [c.points for c in clouds]
    if not arrays:
        return PointCloud((), frame)
    return PointCloud(np.vstack(arrays), frame)
