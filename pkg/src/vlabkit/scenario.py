"""Scenario templates, domain randomization and concrete task instances."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .depgraph import STANDARD_RULES, DepGraph, build_graph
from .dsl import ParseError, SkillSequence, canonical_string, parse_program
from .geometry import Pose, PointCloud, Quaternion, box_cloud, min_distance

SCHEMA_VERSION = "vlab-scenario/1"
INSTANCE_VERSION = "vlab-instance/1"
MAX_PLACEMENT_ATTEMPTS = 100
PLACEMENT_GAP = 0.005  # m, minimum cloud-to-cloud distance between placed entities


class Dimension(str, enum.Enum):
    MESH_TEXTURE = "MeshTexture"
    SPATIAL = "Spatial"
    COMMON_SENSE = "CommonSense"
    SEMANTIC = "Semantic"
    PHYSICAL = "Physical"
    REASONING = "Reasoning"


DIMENSIONS = tuple(d.value for d in Dimension)
INSTRUCTION_STYLES = ("direct", "commonsense", "semantic")
PREDICATES = {
    "held": 1, "inside": 2, "on": 2, "open": 1, "closed": 1, "pressed": 1,
    "twisted": 1, "poured": 2, "lifted": 1, "pushed": 1, "explored": 1,
}


class ScenarioError(ValueError):
    pass


class SchemaError(ScenarioError):
    def __init__(self, pointer: str, reason: str):
        self.pointer = pointer
        self.reason = reason
        super().__init__(f"{pointer or '/'}: {reason}")


class MissingAsset(ScenarioError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"asset not found: {self.path}")


class PlacementFailure(ScenarioError):
    def __init__(self, attempts: int):
        self.attempts = attempts
        super().__init__(f"no overlap-free layout after {attempts} attempts")


_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_POSE = {
    "type": "object",
    "required": ["position"],
    "properties": {
        "position": _VEC3,
        "orientation": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
    },
    "additionalProperties": False,
}
_RANGE = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_ENTITY = {
    "type": "object",
    "required": ["entity_id", "category", "cloud"],
    "properties": {
        "entity_id": {"type": "string", "minLength": 1},
        "category": {"type": "string", "minLength": 1},
        "cloud": {"type": "string", "minLength": 1},
        "variants": {"type": "array", "items": {"type": "string"}},
        "position": _VEC3,
        "yaw": {"type": "number"},
        "scale": {"type": "number", "exclusiveMinimum": 0},
        "grid": {"type": "boolean"},
        "gated": {"type": "boolean"},
        "grasp_points": {"type": "array", "items": _POSE},
        "place_point": _POSE,
        "bounding_box": {"type": "array", "items": _VEC3, "minItems": 8, "maxItems": 8},
    },
    "additionalProperties": False,
}
TEMPLATE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "task_id", "dimension", "entities", "targets", "substeps", "instructions"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "task_id": {"type": "string", "minLength": 1},
        "dimension": {"enum": list(DIMENSIONS)},
        "N": {"type": "integer", "minimum": 1},
        "entities": {"type": "array", "items": _ENTITY, "minItems": 1},
        "targets": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "receptacles": {"type": "array", "items": {"type": "string"}},
        "distractors": {
            "type": "object",
            "required": ["pool"],
            "properties": {
                "pool": {"type": "array", "items": _ENTITY},
                "count": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
            },
            "additionalProperties": False,
        },
        "grid": {
            "type": "object",
            "required": ["center", "rows", "cols", "max_distance"],
            "properties": {
                "center": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "rows": {"type": "integer", "minimum": 1},
                "cols": {"type": "integer", "minimum": 1},
                "max_distance": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "substeps": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["predicate", "args"],
                "properties": {
                    "predicate": {"enum": sorted(PREDICATES)},
                    "args": {"type": "array", "items": {"type": "string"}},
                },
                "additionalProperties": False,
            },
        },
        "reference": {"type": "string"},
        "reference_file": {"type": "string"},
        "instructions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["text", "style"],
                "properties": {"text": {"type": "string", "minLength": 1}, "style": {"enum": list(INSTRUCTION_STYLES)}},
                "additionalProperties": False,
            },
        },
        "randomization": {
            "type": "object",
            "properties": {
                "pos_offset_range": _RANGE,
                "yaw_range": _RANGE,
                "scale_range": _RANGE,
                "light_range": _RANGE,
                "distractor_count": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
            },
            "additionalProperties": False,
        },
        "environment": {
            "type": "object",
            "properties": {
                "table": {
                    "type": "object",
                    "required": ["center", "size"],
                    "properties": {"center": _VEC3, "size": _VEC3, "spacing": {"type": "number", "exclusiveMinimum": 0}},
                    "additionalProperties": False,
                },
                "cloud": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "textures": {"type": "array", "items": {"type": "string"}},
    },
    "oneOf": [{"required": ["reference"]}, {"required": ["reference_file"]}],
    "additionalProperties": False,
}


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


@dataclass(frozen=True)
class RandomizationSpec:
    pos_offset_range: tuple[float, float] = (-0.05, 0.05)
    yaw_range: tuple[float, float] = (-math.pi / 10, math.pi / 10)
    scale_range: tuple[float, float] = (0.95, 1.05)
    light_range: tuple[float, float] = (0.8, 1.2)
    distractor_count: tuple[int, int] = (1, 2)

    def __post_init__(self):
        for name in ("pos_offset_range", "yaw_range", "scale_range", "light_range", "distractor_count"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must satisfy lo <= hi, got {(lo, hi)}")
        if self.scale_range[0] <= 0:
            raise ValueError("scale_range must be positive")
        if self.distractor_count[0] < 0:
            raise ValueError("distractor_count must be non-negative")

    def with_overrides(self, overrides: dict) -> "RandomizationSpec":
        kwargs = {k: tuple(v) for k, v in overrides.items()}
        return RandomizationSpec(**{**self.__dict__, **kwargs})

    @classmethod
    def fixed(cls) -> "RandomizationSpec":
        """Zero-width ranges: the template layout is reproduced exactly."""
        return cls((0.0, 0.0), (0.0, 0.0), (1.0, 1.0), (1.0, 1.0), (0, 0))


@dataclass(frozen=True, eq=False)
class EntityTemplate:
    entity_id: str
    category: str
    cloud: PointCloud  # local frame
    variants: tuple[PointCloud, ...] = ()
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    scale: float = 1.0
    grid: bool = False
    gated: bool = False
    grasp_points: tuple[Pose, ...] = ()
    place_point: Pose | None = None
    bounding_box: np.ndarray | None = None  # (8, 3), local frame


@dataclass(frozen=True, eq=False)
class ScenarioTemplate:
    task_id: str
    dimension: str
    entities: tuple[EntityTemplate, ...]
    targets: tuple[str, ...]
    receptacles: tuple[str, ...]
    substeps: tuple[tuple[str, tuple[str, ...]], ...]
    reference: SkillSequence
    instructions: tuple[tuple[str, str], ...]
    randomization: RandomizationSpec = RandomizationSpec()
    distractor_pool: tuple[EntityTemplate, ...] = ()
    grid: dict | None = None
    environment: PointCloud = field(default_factory=PointCloud)
    textures: tuple[str, ...] = ()
    source: str = ""
    n_total: int | None = None  # explicit N; defaults to targets + receptacles


@dataclass(frozen=True, eq=False)
class PlacedEntity:
    entity_id: str
    category: str
    role: str  # target | receptacle | object | distractor
    pose: Pose
    scale: float
    cloud: PointCloud  # world frame
    grasp_points: tuple[Pose, ...] = ()
    place_point: Pose | None = None
    bounding_box: np.ndarray | None = None  # (8, 3), world frame
    gated: bool = False

    def to_json(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "category": self.category,
            "role": self.role,
            "pose": self.pose.to_json(),
            "scale": self.scale,
            "grasp_points": [g.to_json() for g in self.grasp_points],
            "place_point": None if self.place_point is None else self.place_point.to_json(),
            "bounding_box": None if self.bounding_box is None else self.bounding_box.tolist(),
            "gated": self.gated,
        }

    @classmethod
    def from_json(cls, data: dict, cloud: PointCloud) -> "PlacedEntity":
        return cls(
            data["entity_id"],
            data["category"],
            data["role"],
            Pose.from_json(data["pose"]),
            float(data["scale"]),
            cloud,
            tuple(Pose.from_json(g) for g in data["grasp_points"]),
            None if data["place_point"] is None else Pose.from_json(data["place_point"]),
            None if data["bounding_box"] is None else np.array(data["bounding_box"], dtype=float),
            bool(data["gated"]),
        )


@dataclass(eq=False)
class TaskInstance:
    instance_id: str
    task_id: str
    dimension: str
    seed: int
    entities: tuple[PlacedEntity, ...]
    targets: tuple[str, ...]
    receptacles: tuple[str, ...]
    substeps: tuple[tuple[str, tuple[str, ...]], ...]
    reference: SkillSequence
    instructions: tuple[tuple[str, str], ...]
    environment: PointCloud = field(default_factory=PointCloud)
    lighting: float = 1.0
    texture: str | None = None
    n_total: int | None = None
    _graph: DepGraph | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.n_total if self.n_total is not None else len(self.targets) + len(self.receptacles)

    @property
    def M(self) -> int:
        return len(self.substeps)

    def entity(self, name: str) -> PlacedEntity | None:
        key = name.strip().casefold()
        for e in self.entities:
            if e.entity_id.casefold() == key:
                return e
        return None

    def resolve(self, name: str) -> str | None:
        e = self.entity(name)
        return None if e is None else e.entity_id

    def to_json(self) -> dict:
        return {
            "schema": INSTANCE_VERSION,
            "instance_id": self.instance_id,
            "task_id": self.task_id,
            "dimension": self.dimension,
            "seed": self.seed,
            "entities": [e.to_json() for e in self.entities],
            "targets": list(self.targets),
            "receptacles": list(self.receptacles),
            "substeps": [{"predicate": p, "args": list(a)} for p, a in self.substeps],
            "reference": canonical_string(self.reference),
            "instructions": [{"text": t, "style": s} for t, s in self.instructions],
            "lighting": self.lighting,
            "texture": self.texture,
            "N": self.N,
        }


def ground_truth_graph(instance: TaskInstance) -> DepGraph:
    """Dependency graph of the reference sequence, built once per instance."""
    if instance._graph is None:
        instance._graph = build_graph(instance.reference, STANDARD_RULES)
    return instance._graph


# -- loading -------------------------------------------------------------------


def _load_cloud(base: Path, rel: str) -> PointCloud:
    path = (base / rel).resolve()
    if not path.is_file():
        raise MissingAsset(path)
    try:
        return PointCloud.load(path, frame="local")
    except (ValueError, OSError, KeyError) as exc:
        raise SchemaError("", f"unreadable point cloud {path}: {exc}") from exc


def _pose(data: dict) -> Pose:
    return Pose(tuple(data["position"]), Quaternion(*data.get("orientation", (1.0, 0.0, 0.0, 0.0))))


def _entity(data: dict, base: Path) -> EntityTemplate:
    return EntityTemplate(
        data["entity_id"],
        data["category"],
        _load_cloud(base, data["cloud"]),
        tuple(_load_cloud(base, v) for v in data.get("variants", ())),
        tuple(data.get("position", (0.0, 0.0, 0.0))),
        float(data.get("yaw", 0.0)),
        float(data.get("scale", 1.0)),
        bool(data.get("grid", False)),
        bool(data.get("gated", False)),
        tuple(_pose(g) for g in data.get("grasp_points", ())),
        _pose(data["place_point"]) if "place_point" in data else None,
        np.array(data["bounding_box"], dtype=float) if "bounding_box" in data else None,
    )


def _check_semantics(data: dict, ids: list[str], reference: SkillSequence) -> None:
    known = {i.casefold() for i in ids}
    if len(known) != len(ids):
        raise SchemaError("/entities", "entity ids must be unique (case-insensitive)")
    for k, name in enumerate(data["targets"]):
        if name.casefold() not in known:
            raise SchemaError(f"/targets/{k}", f"unknown entity {name!r}")
    for k, name in enumerate(data.get("receptacles", ())):
        if name.casefold() not in known:
            raise SchemaError(f"/receptacles/{k}", f"unknown entity {name!r}")
    for i, ent in enumerate(data["entities"]):
        if ent["entity_id"] in data["targets"] and not ent.get("grasp_points"):
            raise SchemaError(f"/entities/{i}/grasp_points", "graspable targets need at least one grasp point")
        if ent["entity_id"] in data.get("receptacles", ()):
            for key in ("place_point", "bounding_box"):
                if key not in ent:
                    raise SchemaError(f"/entities/{i}", f"receptacle needs {key}")
    for i, step in enumerate(data["substeps"]):
        arity = PREDICATES[step["predicate"]]
        if len(step["args"]) != arity:
            raise SchemaError(f"/substeps/{i}/args", f"{step['predicate']} takes {arity} argument(s)")
        for a in step["args"]:
            if a.casefold() not in known:
                raise SchemaError(f"/substeps/{i}/args", f"unknown entity {a!r}")
    for i, call in enumerate(reference.calls):
        if call.target.casefold() not in known:
            raise SchemaError(f"/reference/{i}", f"call target {call.target!r} is not a scenario entity")


def parse_template(data: Any, base: str | Path = ".") -> ScenarioTemplate:
    """Validate a decoded template document and resolve its assets under ``base``."""
    base = Path(base)
    validator = jsonschema.Draft202012Validator(TEMPLATE_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SchemaError(_pointer(err.absolute_path), err.message)
    if "reference_file" in data:
        ref_path = base / data["reference_file"]
        if not ref_path.is_file():
            raise MissingAsset(ref_path.resolve())
        ref_text = ref_path.read_text(encoding="utf-8")
    else:
        ref_text = data["reference"]
    try:
        reference = parse_program(ref_text)
    except ParseError as exc:
        raise SchemaError("/reference", str(exc)) from exc
    ids = [e["entity_id"] for e in data["entities"]]
    pool = data.get("distractors", {}).get("pool", [])
    _check_semantics(data, ids, reference)
    if {p["entity_id"].casefold() for p in pool} & {i.casefold() for i in ids}:
        raise SchemaError("/distractors/pool", "distractor ids must differ from scenario entity ids")

    spec = RandomizationSpec()
    if "distractors" in data and "count" in data["distractors"]:
        spec = spec.with_overrides({"distractor_count": data["distractors"]["count"]})
    try:
        spec = spec.with_overrides(data.get("randomization", {}))
    except ValueError as exc:
        raise SchemaError("/randomization", str(exc)) from exc

    env = data.get("environment", {})
    clouds = []
    if "table" in env:
        t = env["table"]
        clouds.append(box_cloud(t["center"], t["size"], t.get("spacing", 0.02), hollow=False).points)
    if "cloud" in env:
        clouds.append(_load_cloud(base, env["cloud"]).points)
    environment = PointCloud(np.vstack(clouds) if clouds else (), "world")

    return ScenarioTemplate(
        data["task_id"],
        data["dimension"],
        tuple(_entity(e, base) for e in data["entities"]),
        tuple(data["targets"]),
        tuple(data.get("receptacles", ())),
        tuple((s["predicate"], tuple(s["args"])) for s in data["substeps"]),
        reference,
        tuple((i["text"], i["style"]) for i in data["instructions"]),
        spec,
        tuple(_entity(e, base) for e in pool),
        data.get("grid"),
        environment,
        tuple(data.get("textures", ())),
        str(base),
        data.get("N"),
    )


def load_scenario(path: str | Path) -> ScenarioTemplate:
    path = Path(path)
    if not path.is_file():
        raise MissingAsset(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc
    return parse_template(data, path.parent)


def fixture_path(name: str) -> Path:
    """Path of a shipped scenario fixture, e.g. ``select_fruit``."""
    p = resources.files("vlabkit.data").joinpath("scenarios", f"{name}.json")
    return Path(str(p))


# -- randomization -------------------------------------------------------------


def grid_cells(grid: dict) -> list[tuple[float, float]]:
    """Row-major cell centres of a grid spanning ``max_distance`` on each side."""
    cx, cy = grid["center"]
    span = grid["max_distance"]
    xs = [cx] if grid["cols"] == 1 else list(np.linspace(cx - span / 2, cx + span / 2, grid["cols"]))
    ys = [cy] if grid["rows"] == 1 else list(np.linspace(cy - span / 2, cy + span / 2, grid["rows"]))
    return [(float(x), float(y)) for y in ys for x in xs]


def _uniform(rng: np.random.Generator, r: tuple[float, float]) -> float:
    lo, hi = r
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _place(t: EntityTemplate, role: str, xy: tuple[float, float] | None, rng, spec: RandomizationSpec) -> PlacedEntity:
    dx = _uniform(rng, spec.pos_offset_range)
    dy = _uniform(rng, spec.pos_offset_range)
    dyaw = _uniform(rng, spec.yaw_range)
    s = _uniform(rng, spec.scale_range)
    cloud = t.cloud
    if t.variants:
        pool = (t.cloud,) + t.variants
        cloud = pool[int(rng.integers(len(pool)))]
    x, y = (t.position[0], t.position[1]) if xy is None else xy
    scale = t.scale * s
    pose = Pose((x + dx, y + dy, t.position[2]), Quaternion.from_axis_angle((0, 0, 1), t.yaw + dyaw))

    def to_world(local: Pose) -> Pose:
        return pose @ Pose(tuple(np.asarray(local.position) * scale), local.orientation)

    return PlacedEntity(
        t.entity_id,
        t.category,
        role,
        pose,
        scale,
        PointCloud(pose.apply(cloud.points * scale), "world"),
        tuple(to_world(g) for g in t.grasp_points),
        None if t.place_point is None else to_world(t.place_point),
        None if t.bounding_box is None else pose.apply(t.bounding_box * scale),
        t.gated,
    )


def _overlap_free(entities: list[PlacedEntity], gap: float) -> bool:
    for i in range(len(entities)):
        for j in range(i + 1, len(entities)):
            a, b = entities[i].cloud, entities[j].cloud
            if len(a) and len(b) and min_distance(a, b) <= gap:
                return False
    return True


def randomize(
    template: ScenarioTemplate,
    spec: RandomizationSpec | None = None,
    seed: int = 0,
    gap: float = PLACEMENT_GAP,
) -> TaskInstance:
    """Sample a concrete instance; a pure function of (template, spec, seed)."""
    spec = template.randomization if spec is None else spec
    rng = np.random.default_rng(seed)
    targets = {t.casefold() for t in template.targets}
    receptacles = {r.casefold() for r in template.receptacles}
    lighting = _uniform(rng, spec.light_range)
    texture = template.textures[int(rng.integers(len(template.textures)))] if template.textures else None
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        lo, hi = spec.distractor_count
        n_dis = min(int(rng.integers(lo, hi + 1)), len(template.distractor_pool))
        chosen = sorted(rng.choice(len(template.distractor_pool), n_dis, replace=False).tolist()) if n_dis else []
        members = [(t, None) for t in template.entities] + [(template.distractor_pool[k], "distractor") for k in chosen]
        cells = grid_cells(template.grid) if template.grid else []
        gridded = [i for i, (t, _) in enumerate(members) if t.grid]
        if len(gridded) > len(cells):
            raise ScenarioError(f"{len(gridded)} grid entities but only {len(cells)} grid cells")
        assignment = {}
        if gridded:
            picks = rng.choice(len(cells), len(gridded), replace=False)
            assignment = {i: cells[int(c)] for i, c in zip(gridded, picks)}
        placed = []
        for i, (t, role) in enumerate(members):
            if role is None:
                key = t.entity_id.casefold()
                role = "target" if key in targets else "receptacle" if key in receptacles else "object"
            placed.append(_place(t, role, assignment.get(i), rng, spec))
        if _overlap_free(placed, gap):
            return TaskInstance(
                f"{template.task_id}-{seed}",
                template.task_id,
                template.dimension,
                seed,
                tuple(placed),
                template.targets,
                template.receptacles,
                template.substeps,
                template.reference,
                template.instructions,
                template.environment,
                lighting,
                texture,
                template.n_total,
            )
    raise PlacementFailure(MAX_PLACEMENT_ATTEMPTS)


# -- instance files --------------------------------------------------------------


def save_instance(instance: TaskInstance, directory: str | Path) -> Path:
    """Write ``instance.json`` plus one PCLB cloud per entity; returns the JSON path."""
    directory = Path(directory)
    (directory / "clouds").mkdir(parents=True, exist_ok=True)
    doc = instance.to_json()
    for e, ent_doc in zip(instance.entities, doc["entities"]):
        rel = f"clouds/{e.entity_id}.pclb"
        e.cloud.save(directory / rel)
        ent_doc["cloud"] = rel
    if len(instance.environment):
        instance.environment.save(directory / "clouds" / "_environment.pclb")
        doc["environment"] = "clouds/_environment.pclb"
    path = directory / "instance.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def load_instance(path: str | Path) -> TaskInstance:
    path = Path(path)
    if path.is_dir():
        path = path / "instance.json"
    if not path.is_file():
        raise MissingAsset(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc
    if doc.get("schema") != INSTANCE_VERSION:
        raise SchemaError("/schema", f"expected {INSTANCE_VERSION!r}")
    base = path.parent
    try:
        entities = tuple(
            PlacedEntity.from_json(e, PointCloud(_load_cloud(base, e["cloud"]).points, "world")) for e in doc["entities"]
        )
        env = PointCloud(_load_cloud(base, doc["environment"]).points, "world") if "environment" in doc else PointCloud()
        return TaskInstance(
            doc["instance_id"],
            doc["task_id"],
            doc["dimension"],
            int(doc["seed"]),
            entities,
            tuple(doc["targets"]),
            tuple(doc["receptacles"]),
            tuple((s["predicate"], tuple(s["args"])) for s in doc["substeps"]),
            parse_program(doc["reference"]),
            tuple((i["text"], i["style"]) for i in doc["instructions"]),
            env,
            float(doc["lighting"]),
            doc["texture"],
            int(doc["N"]),
        )
    except (KeyError, TypeError, ParseError) as exc:
        raise SchemaError("", f"malformed instance file: {exc}") from exc


def instance_digest(instance: TaskInstance) -> str:
    """Stable hash over the full serialized instance, clouds included."""
    h = hashlib.sha256(json.dumps(instance.to_json(), sort_keys=True).encode())
    for e in instance.entities:
        h.update(e.cloud.to_bytes())
    h.update(instance.environment.to_bytes())
    return h.hexdigest()
