"""Episode records as JSON-lines files, plus dataset validation."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SCHEMA_VERSION = "vlab-episode/1"
VELOCITY_TOL = 1e-9
MANIFEST_NAME = "manifest.json"


class EpisodeError(ValueError):
    pass


class InvariantViolation(EpisodeError):
    pass


class CorruptLine(EpisodeError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class SchemaVersionMismatch(EpisodeError):
    def __init__(self, found):
        self.found = found
        super().__init__(f"expected schema {SCHEMA_VERSION!r}, found {found!r}")


@dataclass(frozen=True)
class Observation:
    joint_positions: tuple[float, ...]
    joint_velocities: tuple[float, ...]
    ee_position: tuple[float, float, float]
    ee_orientation: tuple[float, float, float, float]  # (w, x, y, z)
    grasp_state: bool
    # multi-view sensor data is not produced here; the field keeps file references when present
    images: tuple[str, ...] = ()

    def to_json(self) -> dict:
        d = {
            "joint_positions": list(self.joint_positions),
            "joint_velocities": list(self.joint_velocities),
            "ee_position": list(self.ee_position),
            "ee_orientation": list(self.ee_orientation),
            "grasp_state": self.grasp_state,
        }
        if self.images:
            d["images"] = list(self.images)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Observation":
        return cls(
            tuple(float(v) for v in d["joint_positions"]),
            tuple(float(v) for v in d["joint_velocities"]),
            tuple(float(v) for v in d["ee_position"]),
            tuple(float(v) for v in d["ee_orientation"]),
            bool(d["grasp_state"]),
            tuple(d.get("images", ())),
        )


@dataclass(frozen=True)
class Step:
    action: tuple[float, ...]  # joint targets followed by the gripper command
    observation: Observation
    reward: float = 0.0
    terminal: bool = False

    def to_json(self) -> dict:
        return {
            "action": list(self.action),
            "observation": self.observation.to_json(),
            "reward": self.reward,
            "terminal": self.terminal,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Step":
        return cls(
            tuple(float(v) for v in d["action"]),
            Observation.from_json(d["observation"]),
            float(d["reward"]),
            bool(d["terminal"]),
        )


@dataclass(frozen=True)
class EpisodeRecord:
    instructions: tuple[str, ...]
    steps: tuple[Step, ...]
    dt: float = 0.1
    metadata: dict[str, Any] = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "instructions": list(self.instructions),
            "dt": self.dt,
            "metadata": self.metadata,
            "num_steps": len(self.steps),
        }


def check_invariants(record: EpisodeRecord) -> list[str]:
    """All invariant violations of ``record`` (empty when valid)."""
    problems = []
    if not record.steps:
        return ["episode has no steps"]
    if not (record.dt > 0 and math.isfinite(record.dt)):
        problems.append(f"dt must be positive, got {record.dt}")
    terminals = [i for i, s in enumerate(record.steps) if s.terminal]
    if terminals != [len(record.steps) - 1]:
        problems.append(f"exactly the last step must be terminal, terminal steps at {terminals}")
    for i, s in enumerate(record.steps):
        if s.reward != 0.0 and not (s.terminal and s.reward == 1.0):
            problems.append(f"step {i}: reward {s.reward} breaks the sparse reward rule")
    dof = len(record.steps[0].observation.joint_positions)
    prev = None
    for i, s in enumerate(record.steps):
        o = s.observation
        if len(o.joint_positions) != dof or len(o.joint_velocities) != dof or len(s.action) != dof + 1:
            problems.append(f"step {i}: inconsistent vector lengths")
            prev = None
            continue
        values = list(o.joint_positions) + list(o.joint_velocities) + list(o.ee_position) + list(o.ee_orientation)
        if not all(math.isfinite(v) for v in values + list(s.action)):
            problems.append(f"step {i}: non-finite value")
        if prev is None:
            expected = [0.0] * dof
        else:
            expected = [(a - b) / record.dt for a, b in zip(o.joint_positions, prev)]
        if any(abs(v - e) > VELOCITY_TOL for v, e in zip(o.joint_velocities, expected)):
            problems.append(f"step {i}: joint velocities differ from position differences / dt")
        prev = o.joint_positions
    return problems


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode_episode(record: EpisodeRecord) -> bytes:
    lines = [_dumps(record.header())] + [_dumps(s.to_json()) for s in record.steps]
    return ("\n".join(lines) + "\n").encode("utf-8")


def episode_path(record: EpisodeRecord, directory: str | Path) -> Path:
    meta = record.metadata
    return Path(directory) / str(meta.get("task_id", "task")) / f"{meta.get('instance_id', 'episode')}.jsonl"


def write_episode(record: EpisodeRecord, directory: str | Path) -> Path:
    """Validate, then atomically write ``<task_id>/<instance_id>.jsonl``."""
    problems = check_invariants(record)
    if problems:
        raise InvariantViolation("; ".join(problems))
    data = encode_episode(record)
    path = episode_path(record, directory)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".jsonl")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_episode(path: str | Path) -> EpisodeRecord:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    else:
        raise CorruptLine(len(lines), "file does not end with a newline (truncated?)")
    if not lines:
        raise CorruptLine(1, "missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptLine(1, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(header, dict):
        raise CorruptLine(1, "header is not an object")
    if header.get("schema") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(header.get("schema"))
    steps = []
    for no, line in enumerate(lines[1:], start=2):
        try:
            steps.append(Step.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptLine(no, f"bad step: {exc}") from exc
    try:
        expected = int(header["num_steps"])
        record = EpisodeRecord(tuple(header["instructions"]), tuple(steps), float(header["dt"]), dict(header["metadata"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptLine(1, f"bad header: {exc}") from exc
    if expected != len(steps):
        raise CorruptLine(len(lines) + 1, f"header announces {expected} steps, file holds {len(steps)}")
    return record


@dataclass
class DatasetManifest:
    episode_count: int
    per_task: dict[str, int]
    schema_version: str
    checksums: dict[str, str]  # relative path -> sha256

    def to_json(self) -> dict:
        return {
            "episode_count": self.episode_count,
            "per_task": dict(sorted(self.per_task.items())),
            "schema_version": self.schema_version,
            "checksums": dict(sorted(self.checksums.items())),
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        return cls(int(d["episode_count"]), dict(d["per_task"]), d["schema_version"], dict(d["checksums"]))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def validate_dataset(directory: str | Path) -> tuple[DatasetManifest, list[str]]:
    """Check every episode file; returns the manifest of valid episodes and all violations.

    When a ``manifest.json`` already exists its checksums are verified too.
    """
    directory = Path(directory)
    violations: list[str] = []
    per_task: dict[str, int] = {}
    checksums: dict[str, str] = {}
    files = sorted(directory.rglob("*.jsonl")) if directory.is_dir() else []
    for f in files:
        if f.name.startswith(".tmp-"):
            continue
        rel = f.relative_to(directory).as_posix()
        try:
            rec = read_episode(f)
        except EpisodeError as exc:
            violations.append(f"{rel}: {exc}")
            continue
        problems = check_invariants(rec)
        if problems:
            violations.extend(f"{rel}: {p}" for p in problems)
            continue
        task = str(rec.metadata.get("task_id", f.parent.name))
        per_task[task] = per_task.get(task, 0) + 1
        checksums[rel] = _sha256(f)
    stored = directory / MANIFEST_NAME
    if stored.is_file():
        try:
            old = DatasetManifest.from_json(json.loads(stored.read_text(encoding="utf-8")))
            for rel, digest in sorted(old.checksums.items()):
                now = checksums.get(rel)
                if now is None and not (directory / rel).is_file():
                    violations.append(f"{rel}: listed in manifest but missing")
                elif now is not None and now != digest:
                    violations.append(f"{rel}: checksum mismatch")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            violations.append(f"{MANIFEST_NAME}: unreadable ({exc})")
    manifest = DatasetManifest(sum(per_task.values()), per_task, SCHEMA_VERSION, checksums)
    return manifest, violations


def write_manifest(directory: str | Path) -> tuple[Path, list[str]]:
    manifest, violations = validate_dataset(directory)
    path = Path(directory) / MANIFEST_NAME
    path.write_text(json.dumps(manifest.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path, violations
