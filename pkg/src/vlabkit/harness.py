"""Evaluation harness: symbolic execution for Progress Score, batch scoring, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .depgraph import STANDARD_RULES, destination, explicit_carried
from .dsl import SkillCall, SkillSequence, extract_from_noisy
from .metrics import MetricReport, MetricWeights, ProgressInput, evaluate, progress_score
from .scenario import DIMENSIONS, TaskInstance, ground_truth_graph

log = logging.getLogger(__name__)

METRIC_KEYS = ("sr", "pr", "spr", "pm", "total")
_CONTAINER_SKILLS = {"Place": "inside", "Insert": "inside", "Hang": "on"}


class UnknownInstanceId(KeyError):
    pass


# -- symbolic execution ----------------------------------------------------------


@dataclass
class SymbolicState:
    """Abstract world: where each entity is and which appliances are actuated."""

    location: dict[str, tuple[str, str | None]]  # entity -> ("world" | "held" | "inside" | "on", support)
    opened: set[str] = field(default_factory=set)
    pressed: set[str] = field(default_factory=set)
    twisted: set[str] = field(default_factory=set)
    facts: set[tuple[str, ...]] = field(default_factory=set)  # one-shot events: poured, lifted, pushed, explored
    completed: list[bool] = field(default_factory=list)

    @property
    def held(self) -> str | None:
        for e, (kind, _) in self.location.items():
            if kind == "held":
                return e
        return None

    def gate_open(self, entity: str) -> bool:
        return entity in self.opened or entity in self.pressed or entity in self.twisted

    def holds(self, predicate: str, args: Sequence[str]) -> bool:
        loc = self.location
        if predicate == "held":
            return loc.get(args[0], ("", None))[0] == "held"
        if predicate in ("inside", "on"):
            return loc.get(args[0]) == (predicate, args[1])
        if predicate == "open":
            return args[0] in self.opened
        if predicate == "closed":
            return args[0] not in self.opened
        if predicate == "pressed":
            return args[0] in self.pressed
        if predicate == "twisted":
            return args[0] in self.twisted
        return (predicate, *args) in self.facts


class _Inapplicable(Exception):
    pass


def _apply(state: SymbolicState, call: SkillCall, inst: TaskInstance, gated: set[str]) -> None:
    """One transition. Raises ``_Inapplicable`` when the call cannot run."""

    def ent(name: str) -> str:
        r = inst.resolve(name)
        if r is None:
            raise _Inapplicable(f"unknown entity {name!r}")
        return r

    skill = call.skill
    if skill == "Pick":
        x = ent(call.target)
        if state.held is not None:
            raise _Inapplicable("hand is not empty")
        state.location[x] = ("held", None)
    elif skill in _CONTAINER_SKILLS or skill == "Pour":
        dest = ent(destination(call))
        carried_name = explicit_carried(call)
        carried = ent(carried_name) if carried_name else state.held
        if carried is None:
            raise _Inapplicable("nothing to carry")
        if carried == dest:
            # placing the held entity at a free pose
            if state.held != carried:
                raise _Inapplicable("entity is not held")
            state.location[carried] = ("world", None)
            return
        if state.held not in (None, carried):
            raise _Inapplicable("holding a different entity")
        if skill == "Pour":
            if state.held != carried:
                raise _Inapplicable("entity to pour is not held")
            if dest in gated and not state.gate_open(dest):
                return
            state.facts.add(("poured", carried, dest))
            return
        if dest in gated and not state.gate_open(dest):
            return  # gate closed: the action has no effect
        state.location[carried] = (_CONTAINER_SKILLS[skill], dest)
    elif skill == "Open":
        state.opened.add(ent(call.target))
    elif skill == "Close":
        state.opened.discard(ent(call.target))
    elif skill == "Press":
        x = ent(call.target)
        state.pressed.symmetric_difference_update({x})
    elif skill == "Twist":
        state.twisted.add(ent(call.target))
    elif skill == "Lift":
        x = ent(call.target)
        if state.held not in (None, x):
            raise _Inapplicable("holding a different entity")
        state.facts.add(("lifted", x))
    elif skill == "Push":
        x = ent(call.target)
        if state.held is not None:
            raise _Inapplicable("cannot push while holding")
        state.facts.add(("pushed", x))
    elif skill == "Explore":
        state.facts.add(("explored", ent(call.target)))
    else:
        raise _Inapplicable(f"no transition rule for {skill}")


@dataclass
class SymbolicTrace:
    progress: ProgressInput
    executed: int  # calls applied before termination
    stopped_at: int | None  # index of the first inapplicable call, if any
    reason: str | None
    state: SymbolicState


def run_symbolic(instance: TaskInstance, seq: SkillSequence, alpha: float = 0.2) -> SymbolicTrace:
    state = SymbolicState({e.entity_id: ("world", None) for e in instance.entities})
    state.completed = [False] * instance.M
    gated = {e.entity_id for e in instance.entities if e.gated}
    substeps = [(p, tuple(instance.resolve(a) or a for a in args)) for p, args in instance.substeps]
    stopped, reason = None, None
    executed = 0
    for i, call in enumerate(seq.calls):
        try:
            _apply(state, call, instance, gated)
        except _Inapplicable as exc:
            stopped, reason = i, str(exc)
            break
        executed += 1
        for k, (pred, args) in enumerate(substeps):
            if not state.completed[k] and state.holds(pred, args):
                state.completed[k] = True
    selection = {instance.resolve(n) for n in instance.targets + instance.receptacles}
    touched = {a for (pred, args), done in zip(substeps, state.completed) if done for a in args}
    n_correct = min(len(selection & touched), instance.N)
    m_done = sum(state.completed)
    progress = ProgressInput(instance.N, n_correct, instance.M, m_done, alpha)
    return SymbolicTrace(progress, executed, stopped, reason, state)


def execute_symbolic(instance: TaskInstance, seq: SkillSequence, alpha: float = 0.2) -> ProgressInput:
    """Replay ``seq`` on the symbolic surrogate and count selections and completed sub-steps."""
    return run_symbolic(instance, seq, alpha).progress


# -- non-interactive scoring ------------------------------------------------------


@dataclass
class InstanceResult:
    instance_id: str
    dimension: str
    metrics: MetricReport | None = None
    progress: float | None = None
    diagnostics: int = 0
    missing: bool = False

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "dimension": self.dimension,
            "metrics": None if self.metrics is None else self.metrics.to_json(),
            "progress": self.progress,
            "diagnostics": self.diagnostics,
            "missing": self.missing,
        }

    @classmethod
    def from_json(cls, d: dict) -> "InstanceResult":
        return cls(
            d["instance_id"],
            d["dimension"],
            None if d["metrics"] is None else MetricReport.from_json(d["metrics"]),
            d["progress"],
            d["diagnostics"],
            d["missing"],
        )

    def values(self) -> dict[str, float]:
        out = {}
        if self.metrics is not None:
            out.update({k: getattr(self.metrics, k) for k in METRIC_KEYS})
        if self.progress is not None:
            out["ps"] = self.progress
        return out


@dataclass
class EvalReport:
    results: list[InstanceResult]
    dimension_means: dict[str, dict[str, float | None]]
    overall: dict[str, float | None]
    metadata: dict

    def to_json(self) -> dict:
        return {
            "results": [r.to_json() for r in self.results],
            "dimension_means": self.dimension_means,
            "overall": self.overall,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls([InstanceResult.from_json(r) for r in d["results"]], d["dimension_means"], d["overall"], d["metadata"])


def _mean(xs: list[float]) -> float | None:
    return math.fsum(xs) / len(xs) if xs else None


def aggregate(results: list[InstanceResult], metadata: dict) -> EvalReport:
    """Per-dimension and overall arithmetic means of every reported value."""
    keys = [k for k in (*METRIC_KEYS, "ps") if any(k in r.values() for r in results)]
    dims: dict[str, dict[str, float | None]] = {}
    for dim in DIMENSIONS:
        members = [r.values() for r in results if r.dimension == dim]
        dims[dim] = {k: _mean([v[k] for v in members if k in v]) for k in keys}
    overall = {k: _mean([r.values()[k] for r in results if k in r.values()]) for k in keys}
    return EvalReport(results, dims, overall, metadata)


def load_predictions(path: str | Path) -> list[tuple[str, str]]:
    """Read predictions as ordered (instance_id, raw model output) pairs.

    Accepts either an object mapping ids to text or a list of entries
    (which may repeat ids) keyed ``task_id``/``raw_output`` or
    ``instance_id``/``output``.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return []
    data = json.loads(text)
    if isinstance(data, dict):
        return [(str(k), str(v)) for k, v in data.items()]
    if isinstance(data, list):
        out = []
        for i, item in enumerate(data):
            if not isinstance(item, dict):
                raise ValueError(f"prediction entry {i} is not an object")
            iid = item.get("task_id", item.get("instance_id"))
            text = item.get("raw_output", item.get("output"))
            if iid is None or text is None:
                raise ValueError(f"prediction entry {i} needs task_id and raw_output")
            out.append((str(iid), str(text)))
        return out
    raise ValueError("predictions must be a JSON object or list")


def score_noninteractive(
    instances: Iterable[TaskInstance],
    predictions: Mapping[str, str] | Sequence[tuple[str, str]],
    weights: MetricWeights = MetricWeights(),
) -> EvalReport:
    """Score raw model outputs against each instance's reference sequence."""
    by_id = {inst.instance_id: inst for inst in instances}
    pairs = list(predictions.items()) if isinstance(predictions, Mapping) else list(predictions)
    chosen: dict[str, str] = {}
    for iid, text in pairs:
        if iid not in by_id:
            raise UnknownInstanceId(iid)
        if iid in chosen:
            log.warning("duplicate prediction for %s: keeping the last one", iid)
        chosen[iid] = text
    results = []
    for iid in sorted(by_id):
        inst = by_id[iid]
        if iid not in chosen:
            results.append(InstanceResult(iid, inst.dimension, MetricReport.zero(inst.reference, weights), missing=True))
            continue
        seq, diags = extract_from_noisy(chosen[iid])
        report = evaluate(inst.reference, seq, weights, STANDARD_RULES, ground_truth_graph(inst))
        results.append(InstanceResult(iid, inst.dimension, report, diagnostics=len(diags)))
    meta = {"weights": list(weights.as_tuple()), "rules": [r.kind.value for r in STANDARD_RULES], "mode": "noninteractive"}
    return aggregate(results, meta)


def score_interactive(
    instances: Iterable[TaskInstance], sequences: Mapping[str, SkillSequence], alpha: float = 0.2
) -> EvalReport:
    """Progress Score of each instance's sequence under symbolic execution."""
    results = []
    for inst in sorted(instances, key=lambda i: i.instance_id):
        seq = sequences.get(inst.instance_id, SkillSequence(()))
        ps = progress_score(execute_symbolic(inst, seq, alpha))
        results.append(InstanceResult(inst.instance_id, inst.dimension, progress=ps, missing=inst.instance_id not in sequences))
    return aggregate(results, {"alpha": alpha, "mode": "interactive", "seeds": sorted({i.seed for i in instances})})


# -- reports ---------------------------------------------------------------------


def report_csv(report: EvalReport) -> str:
    """Metric rows by dimension columns; blanks where a dimension has no instances."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", *DIMENSIONS])
    # fixed row order, independent of how the report dict was built or re-read
    keys = [k for k in (*METRIC_KEYS, "ps") if k in report.overall]
    for k in keys:
        row = [k]
        for dim in DIMENSIONS:
            v = report.dimension_means[dim].get(k)
            row.append("" if v is None else repr(float(v)))
        w.writerow(row)
    return buf.getvalue()


def emit_report(report: EvalReport, out_dir: str | Path, formats: Sequence[str] = ("json", "csv")) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "json":
            p = out_dir / "report.json"
            p.write_text(json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        elif fmt == "csv":
            p = out_dir / "report.csv"
            p.write_text(report_csv(report), encoding="utf-8")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(p)
    return written


def read_report(path: str | Path) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
