"""Sequence metrics (SR, PR, SPR, PM), their weighted total, and Progress Score."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .dsl import ParamValue, SkillCall, SkillSequence, Vector

ABS_TOL = 1e-6
# pool key under which a call's target joins the parameter entries
TARGET_KEY = "@target"


class EmptyReference(ValueError):
    pass


class InvalidWeights(ValueError):
    pass


class InvalidCounts(ValueError):
    pass


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    r = math.fmod(a + math.pi, 2 * math.pi)
    if r <= 0.0:
        r += 2 * math.pi
    return r - math.pi


def _angle_close(a: float, b: float, tol: float) -> bool:
    return abs(wrap_angle(a - b)) <= tol


def canonical_param_equal(a: ParamValue, b: ParamValue, tol: float = ABS_TOL) -> bool:
    """Equality used by every metric.

    Numbers agree within ``tol``; angle triples are compared on the circle so
    that pi and -pi coincide; strings ignore case and surrounding blanks.
    """
    if isinstance(a, str) or isinstance(b, str):
        return isinstance(a, str) and isinstance(b, str) and a.strip().casefold() == b.strip().casefold()
    if isinstance(a, Vector) or isinstance(b, Vector):
        if not (isinstance(a, Vector) and isinstance(b, Vector)):
            return False
        if a.angular != b.angular or len(a) != len(b):
            return False
        if a.angular:
            return all(_angle_close(x, y, tol) for x, y in zip(a.values, b.values))
        return all(abs(x - y) <= tol for x, y in zip(a.values, b.values))
    if isinstance(a, bool) or isinstance(b, bool):
        return False
    return abs(float(a) - float(b)) <= tol


def targets_equal(a: str, b: str) -> bool:
    return a.strip().casefold() == b.strip().casefold()


def params_equivalent(pa, pb, tol: float = ABS_TOL) -> bool:
    if pa.keys() != pb.keys():
        return False
    return all(canonical_param_equal(pa[k], pb[k], tol) for k in pa)


def calls_equivalent(a: SkillCall, b: SkillCall, tol: float = ABS_TOL) -> bool:
    return a.skill == b.skill and targets_equal(a.target, b.target) and params_equivalent(a.params, b.params, tol)


def multiset_overlap(ref: Sequence, pred: Sequence, eq: Callable[[Any, Any], bool]) -> int:
    """Size of the multiset intersection under ``eq``.

    ``eq`` is a tolerance relation and need not be transitive, so the
    intersection is a maximum bipartite matching (augmenting paths).
    """
    adj = [[j for j, p in enumerate(pred) if eq(r, p)] for r in ref]
    owner: list[int | None] = [None] * len(pred)

    def augment(i: int, seen: list[bool]) -> bool:
        for j in adj[i]:
            if seen[j]:
                continue
            seen[j] = True
            if owner[j] is None or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, [False] * len(pred)) for i in range(len(ref)))


def param_entries(seq: SkillSequence) -> list[tuple[str, ParamValue]]:
    """All (key, value) parameter entries pooled across calls, target included."""
    out: list[tuple[str, ParamValue]] = []
    for call in seq.calls:
        out.append((TARGET_KEY, call.target))
        out.extend(call.params.items())
    return out


def _entry_equal(a, b) -> bool:
    return a[0] == b[0] and canonical_param_equal(a[1], b[1])


def skill_recall_counts(reference: SkillSequence, prediction: SkillSequence) -> tuple[int, int]:
    if not reference.calls:
        raise EmptyReference("reference sequence is empty")
    inter = Counter(reference.skills()) & Counter(prediction.skills())
    return sum(inter.values()), len(reference.calls)


def param_recall_counts(reference: SkillSequence, prediction: SkillSequence) -> tuple[int, int]:
    ref = param_entries(reference)
    if not ref:
        raise EmptyReference("reference has no parameter entries")
    return multiset_overlap(ref, param_entries(prediction), _entry_equal), len(ref)


def skill_param_recall_counts(reference: SkillSequence, prediction: SkillSequence) -> tuple[int, int]:
    if not reference.calls:
        raise EmptyReference("reference sequence is empty")
    return multiset_overlap(reference.calls, prediction.calls, calls_equivalent), len(reference.calls)


def skill_recall(reference: SkillSequence, prediction: SkillSequence) -> float:
    num, den = skill_recall_counts(reference, prediction)
    return num / den


def param_recall(reference: SkillSequence, prediction: SkillSequence) -> float:
    num, den = param_recall_counts(reference, prediction)
    return num / den


def skill_param_recall(reference: SkillSequence, prediction: SkillSequence) -> float:
    num, den = skill_param_recall_counts(reference, prediction)
    return num / den


def precise_matching_counts(reference, prediction, **kwargs) -> tuple[int, int]:
    from .depgraph import max_matching

    total = reference.size
    if total == 0:
        raise EmptyReference("reference graph has no nodes")
    return max_matching(reference, prediction, **kwargs).matched_count, total


def precise_matching(reference, prediction, **kwargs) -> float:
    """Matched reference nodes over all reference nodes (source excluded)."""
    num, den = precise_matching_counts(reference, prediction, **kwargs)
    return num / den


@dataclass(frozen=True)
class MetricWeights:
    w1: float = 0.25
    w2: float = 0.25
    w3: float = 0.25
    w4: float = 0.25

    def __post_init__(self):
        ws = self.as_tuple()
        if any(not math.isfinite(w) or w < 0.0 or w > 1.0 for w in ws):
            raise InvalidWeights(f"weights must lie in [0, 1]: {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise InvalidWeights(f"weights must sum to 1: {ws}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4)

    @classmethod
    def parse(cls, text: str) -> "MetricWeights":
        parts = [p for p in text.split(",") if p.strip()]
        if len(parts) != 4:
            raise InvalidWeights(f"expected four comma-separated weights, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError as exc:
            if isinstance(exc, InvalidWeights):
                raise
            raise InvalidWeights(str(exc)) from exc


def overall_score(sr: float, pr: float, spr: float, pm: float, weights: MetricWeights = MetricWeights()) -> float:
    if not isinstance(weights, MetricWeights):
        raise InvalidWeights("weights must be a MetricWeights instance")
    w1, w2, w3, w4 = weights.as_tuple()
    return w1 * sr + w2 * pr + w3 * spr + w4 * pm


@dataclass
class MetricReport:
    sr: float
    pr: float
    spr: float
    pm: float
    total: float
    counts: dict[str, list[int]] = field(default_factory=dict)
    weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)

    def to_json(self) -> dict[str, Any]:
        return {
            "sr": self.sr,
            "pr": self.pr,
            "spr": self.spr,
            "pm": self.pm,
            "total": self.total,
            "counts": {k: list(v) for k, v in self.counts.items()},
            "weights": list(self.weights),
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "MetricReport":
        return cls(
            data["sr"],
            data["pr"],
            data["spr"],
            data["pm"],
            data["total"],
            {k: list(v) for k, v in data["counts"].items()},
            tuple(data["weights"]),
        )

    @classmethod
    def zero(cls, reference: SkillSequence, weights: MetricWeights) -> "MetricReport":
        n = len(reference.calls)
        counts = {"sr": [0, n], "pr": [0, len(param_entries(reference))], "spr": [0, n], "pm": [0, n]}
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, counts, weights.as_tuple())


def evaluate(
    reference: SkillSequence,
    prediction: SkillSequence,
    weights: MetricWeights = MetricWeights(),
    rules=None,
    reference_graph=None,
) -> MetricReport:
    """Score one prediction against one reference on all four metrics."""
    from .depgraph import STANDARD_RULES, build_graph

    rules = STANDARD_RULES if rules is None else rules
    ref_graph = reference_graph if reference_graph is not None else build_graph(reference, rules)
    pred_graph = build_graph(prediction, rules)
    counts = {
        "sr": list(skill_recall_counts(reference, prediction)),
        "pr": list(param_recall_counts(reference, prediction)),
        "spr": list(skill_param_recall_counts(reference, prediction)),
        "pm": list(precise_matching_counts(ref_graph, pred_graph)),
    }
    sr, pr, spr, pm = (counts[k][0] / counts[k][1] for k in ("sr", "pr", "spr", "pm"))
    return MetricReport(sr, pr, spr, pm, overall_score(sr, pr, spr, pm, weights), counts, weights.as_tuple())


@dataclass(frozen=True)
class ProgressInput:
    N: int
    n_correct: int
    M: int
    m_done: int
    alpha: float = 0.2

    def __post_init__(self):
        for name in ("N", "n_correct", "M", "m_done"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise InvalidCounts(f"{name} must be an integer, got {v!r}")
        if self.N < 1 or self.M < 1:
            raise InvalidCounts("N and M must be at least 1")
        if not 0 <= self.n_correct <= self.N:
            raise InvalidCounts(f"n_correct={self.n_correct} outside [0, {self.N}]")
        if not 0 <= self.m_done <= self.M:
            raise InvalidCounts(f"m_done={self.m_done} outside [0, {self.M}]")
        if not (0.0 <= self.alpha <= 1.0):
            raise InvalidCounts(f"alpha={self.alpha} outside [0, 1]")


def progress_score(inp: ProgressInput) -> float:
    """alpha * n_correct/N + (1 - alpha) * m_done/M."""
    return inp.alpha * (inp.n_correct / inp.N) + (1.0 - inp.alpha) * (inp.m_done / inp.M)
