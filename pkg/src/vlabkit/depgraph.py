"""Dependency DAGs over skill calls and dependency-consistent node matching."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dsl import SkillCall, SkillSequence, parse_program, render_value
from .metrics import calls_equivalent, targets_equal

SOURCE_ID = 0
MAX_REFERENCE_NODES = 64

GATE_SKILLS = frozenset({"Open", "Press", "Twist"})
GATED_SKILLS = frozenset({"Place", "Insert", "Pour"})
CARRY_SKILLS = frozenset({"Place", "Insert", "Hang", "Pour"})
# string params that name a destination explicitly; when present the call's
# target is the carried entity rather than the destination
DESTINATION_KEYS = ("destination", "container", "receptacle")


class RuleKind(str, enum.Enum):
    SAME_TARGET = "SameTarget"
    STATE_GATE = "StateGate"
    PICK_BEFORE_PLACE = "PickBeforePlace"
    PREREQUISITE_OPEN = "PrerequisiteOpen"


@dataclass(frozen=True)
class DependencyRule:
    kind: RuleKind
    description: str


STANDARD_RULES: tuple[DependencyRule, ...] = (
    DependencyRule(RuleKind.SAME_TARGET, "calls on the same target keep their sequence order"),
    DependencyRule(
        RuleKind.STATE_GATE,
        "Open/Press/Twist on an entity precedes Place/Insert/Pour into that entity",
    ),
    DependencyRule(
        RuleKind.PICK_BEFORE_PLACE,
        "a carried entity is picked before it is placed; one gripper means picks and "
        "implicit-carry placements alternate in order",
    ),
    DependencyRule(
        RuleKind.PREREQUISITE_OPEN,
        "Close on an entity follows every Place/Insert/Pour into it",
    ),
)


class GraphError(ValueError):
    pass


class SizeLimitExceeded(ValueError):
    pass


@dataclass(frozen=True)
class DagViolation:
    kind: str  # "ids" | "cycle" | "reachability"
    detail: str


def _destination_param(call: SkillCall) -> str | None:
    for key in DESTINATION_KEYS:
        v = call.params.get(key)
        if isinstance(v, str) and v.strip():
            return v
    return None


def destination(call: SkillCall) -> str:
    """Entity a carry skill puts things into or onto."""
    return _destination_param(call) or call.target


def explicit_carried(call: SkillCall) -> str | None:
    """Entity moved by a carry skill when the destination is given as a param."""
    if call.skill in CARRY_SKILLS and _destination_param(call) is not None:
        return call.target
    return None


@dataclass(frozen=True, eq=False)
class DepGraph:
    """Immutable DAG. ``calls[0]`` is ``None`` (the virtual source)."""

    calls: tuple[SkillCall | None, ...]
    edges: tuple[tuple[int, int], ...]
    rules: tuple[str, ...] = ()
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "calls", tuple(self.calls))
        object.__setattr__(self, "edges", tuple(sorted({(int(u), int(v)) for u, v in self.edges})))
        if self.validate:
            violation = validate_dag(self)
            if violation is not None:
                raise GraphError(f"{violation.kind}: {violation.detail}")

    source_id = SOURCE_ID

    @property
    def size(self) -> int:
        """Number of non-source nodes."""
        return len(self.calls) - 1

    @property
    def nodes(self) -> list[tuple[int, SkillCall | None]]:
        return list(enumerate(self.calls))

    def successors(self) -> list[list[int]]:
        succ: list[list[int]] = [[] for _ in self.calls]
        for u, v in self.edges:
            succ[u].append(v)
        return succ

    def descendants(self) -> list[int]:
        """Bitmask of strict descendants per node (graph must be acyclic)."""
        order = topological_order(self)
        succ = self.successors()
        desc = [0] * len(self.calls)
        for u in reversed(order):
            m = 0
            for v in succ[u]:
                m |= (1 << v) | desc[v]
            desc[u] = m
        return desc

    def leaves(self) -> list[int]:
        out_deg = [0] * len(self.calls)
        for u, _ in self.edges:
            out_deg[u] += 1
        return [i for i in range(1, len(self.calls)) if out_deg[i] == 0]

    def without_nodes(self, removed: Iterable[int]) -> "DepGraph":
        """Drop non-source nodes, keeping the ordering among the survivors."""
        removed = set(removed)
        if SOURCE_ID in removed:
            raise GraphError("cannot remove the source node")
        desc = self.descendants()
        keep = [i for i in range(1, len(self.calls)) if i not in removed]
        new_id = {old: k + 1 for k, old in enumerate(keep)}
        relation = {
            (new_id[a], new_id[b]) for a in keep for b in keep if a != b and desc[a] >> b & 1
        }
        calls = [None] + [self.calls[i] for i in keep]
        return _assemble(calls, relation, self.rules)

    def sequence(self) -> SkillSequence:
        return SkillSequence(tuple(c for c in self.calls[1:]))

    def __eq__(self, other):
        if not isinstance(other, DepGraph):
            return NotImplemented
        return self.edges == other.edges and len(self.calls) == len(other.calls) and all(
            a == b for a, b in zip(self.calls, other.calls)
        )

    __hash__ = None


def topological_order(g: DepGraph) -> list[int]:
    """Kahn's algorithm, smallest ready id first. Raises GraphError on cycles."""
    import heapq

    n = len(g.calls)
    indeg = [0] * n
    succ = g.successors()
    for _, v in g.edges:
        indeg[v] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    if len(order) != n:
        raise GraphError("graph contains a cycle")
    return order


def validate_dag(g: DepGraph) -> DagViolation | None:
    """Check dense ids, acyclicity and reachability from the source.

    Returns the first violation found, or None when the graph is valid.
    """
    n = len(g.calls)
    if n == 0 or g.calls[0] is not None:
        return DagViolation("ids", "node 0 must be the call-less source")
    for i in range(1, n):
        if g.calls[i] is None:
            return DagViolation("ids", f"node {i} has no skill call")
    for u, v in g.edges:
        if not (0 <= u < n and 0 <= v < n):
            return DagViolation("ids", f"edge {u} -> {v} references a missing node")
        if u == v:
            return DagViolation("cycle", f"self-loop on node {u}")
        if v == SOURCE_ID:
            return DagViolation("cycle", f"edge {u} -> {v} enters the source")
    succ = [[] for _ in range(n)]
    for u, v in g.edges:
        succ[u].append(v)
    # iterative three-colour DFS for cycles
    color = [0] * n
    for root in range(n):
        if color[root]:
            continue
        stack = [(root, 0)]
        color[root] = 1
        while stack:
            u, i = stack[-1]
            if i < len(succ[u]):
                stack[-1] = (u, i + 1)
                v = succ[u][i]
                if color[v] == 1:
                    return DagViolation("cycle", f"edge {u} -> {v} closes a cycle")
                if color[v] == 0:
                    color[v] = 1
                    stack.append((v, 0))
            else:
                color[u] = 2
                stack.pop()
    seen = {SOURCE_ID}
    stack = [SOURCE_ID]
    while stack:
        u = stack.pop()
        for v in succ[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    for i in range(n):
        if i not in seen:
            return DagViolation("reachability", f"node {i} is unreachable from the source")
    return None


# --- construction ----------------------------------------------------------


def _rule_pairs(calls: Sequence[SkillCall], kind: RuleKind) -> set[tuple[int, int]]:
    """Ordered index pairs (i, j), i < j, that ``kind`` requires."""
    n = len(calls)
    pairs: set[tuple[int, int]] = set()
    if kind is RuleKind.SAME_TARGET:
        for i in range(n):
            for j in range(i + 1, n):
                if targets_equal(calls[i].target, calls[j].target):
                    pairs.add((i, j))
    elif kind is RuleKind.STATE_GATE:
        for i in range(n):
            if calls[i].skill not in GATE_SKILLS:
                continue
            for j in range(i + 1, n):
                if calls[j].skill in GATED_SKILLS and targets_equal(destination(calls[j]), calls[i].target):
                    pairs.add((i, j))
    elif kind is RuleKind.PREREQUISITE_OPEN:
        for j in range(n):
            if calls[j].skill != "Close":
                continue
            for i in range(j):
                if calls[i].skill in GATED_SKILLS and targets_equal(destination(calls[i]), calls[j].target):
                    pairs.add((i, j))
    elif kind is RuleKind.PICK_BEFORE_PLACE:
        picks = [i for i in range(n) if calls[i].skill == "Pick"]
        pairs.update(zip(picks, picks[1:]))
        for j in range(n):
            if calls[j].skill not in CARRY_SKILLS:
                continue
            carried = explicit_carried(calls[j])
            prior = [i for i in picks if i < j and (carried is None or targets_equal(calls[i].target, carried))]
            if prior:
                pairs.add((prior[-1], j))
            if carried is None:
                later = [k for k in picks if k > j]
                if later:
                    pairs.add((j, later[0]))
    else:  # pragma: no cover
        raise ValueError(kind)
    return pairs


def _assemble(calls: list, relation: set[tuple[int, int]], rules: tuple[str, ...]) -> DepGraph:
    """Transitive reduction of a forward relation plus source edges."""
    n = len(calls)
    succ: list[set[int]] = [set() for _ in range(n)]
    for u, v in relation:
        succ[u].add(v)
    order = topological_order(DepGraph(tuple(calls), tuple(relation), validate=False))
    desc = [0] * n
    for u in reversed(order):
        m = 0
        for v in succ[u]:
            m |= (1 << v) | desc[v]
        desc[u] = m
    edges = []
    for u in range(1, n):
        for v in succ[u]:
            via = 0
            for w in succ[u]:
                if w != v:
                    via |= desc[w]
            if not via >> v & 1:
                edges.append((u, v))
    indeg = [0] * n
    for _, v in edges:
        indeg[v] += 1
    edges.extend((SOURCE_ID, v) for v in range(1, n) if indeg[v] == 0)
    return DepGraph(tuple(calls), tuple(edges), rules)


def build_graph(seq: SkillSequence, rules: Sequence[DependencyRule] = STANDARD_RULES) -> DepGraph:
    """Dependency DAG of ``seq``: node i+1 is call i, node 0 the source.

    An edge u -> v is present when some rule orders call u before call v;
    the result is transitively reduced.
    """
    if not rules:
        raise ValueError("at least one dependency rule is required")
    calls = list(seq.calls)
    relation: set[tuple[int, int]] = set()
    for rule in rules:
        relation |= {(i + 1, j + 1) for i, j in _rule_pairs(calls, RuleKind(rule.kind))}
    return _assemble([None] + calls, relation, tuple(RuleKind(r.kind).value for r in rules))


def random_linearization(g: DepGraph, rng) -> SkillSequence:
    """A uniformly chosen ready node at every step; ``rng`` is a numpy Generator."""
    succ = g.successors()
    indeg = [0] * len(g.calls)
    for _, v in g.edges:
        indeg[v] += 1
    ready = [SOURCE_ID]
    out = []
    while ready:
        u = ready.pop(int(rng.integers(len(ready))))
        if u != SOURCE_ID:
            out.append(g.calls[u])
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return SkillSequence(tuple(out))


# --- matching ----------------------------------------------------------------


@dataclass(frozen=True)
class NodeMatching:
    pairs: dict[int, int]
    matched_count: int


def max_matching(
    reference: DepGraph,
    prediction: DepGraph,
    strict_ancestors: bool = False,
    max_nodes: int = MAX_REFERENCE_NODES,
) -> NodeMatching:
    """Largest label-equal, dependency-consistent injective map reference -> prediction.

    Consistency: whenever matched reference nodes u, v have u as an ancestor
    of v, the image of u must be an ancestor of the image of v. With
    ``strict_ancestors`` a node may only be matched once all of its reference
    ancestors are. Ties go to the lexicographically smallest pair list.
    """
    n = reference.size
    if n > max_nodes:
        raise SizeLimitExceeded(f"reference has {n} nodes, limit is {max_nodes}")
    ref_desc = reference.descendants()
    pred_desc = prediction.descendants()
    ref_anc = [0] * (n + 1)
    for u in range(1, n + 1):
        for v in range(1, n + 1):
            if ref_desc[u] >> v & 1:
                ref_anc[v] |= 1 << u
    related = [(ref_desc[r] | ref_anc[r]) & ~1 for r in range(n + 1)]

    order = [r for r in topological_order(reference) if r != SOURCE_ID]
    cand = [[]] + [
        [p for p in range(1, prediction.size + 1) if calls_equivalent(reference.calls[r], prediction.calls[p])]
        for r in range(1, n + 1)
    ]
    # processed nodes whose image still constrains some later node
    future_mask = [0] * (n + 1)
    for k in range(n - 1, -1, -1):
        future_mask[k] = future_mask[k + 1] | (1 << order[k])
    relevant = [[r for r in order[:k] if related[r] & future_mask[k]] for k in range(n + 1)]
    bound = [0] * (n + 1)
    for k in range(n - 1, -1, -1):
        bound[k] = bound[k + 1] + (1 if cand[order[k]] else 0)

    def options(k: int, used: int, assign: dict[int, int]):
        r = order[k]
        if not strict_ancestors or all(a in assign for a in _bits(ref_anc[r])):
            for p in cand[r]:
                if used >> p & 1:
                    continue
                ok = True
                for r2, p2 in assign.items():
                    if ref_anc[r] >> r2 & 1 and not pred_desc[p2] >> p & 1:
                        ok = False
                        break
                    if ref_desc[r] >> r2 & 1 and not pred_desc[p] >> p2 & 1:
                        ok = False
                        break
                if ok:
                    yield p
        yield None

    memo: dict = {}

    def best(k: int, used: int, assign: dict[int, int]) -> int:
        if k == n:
            return 0
        key = (k, used, tuple(assign.get(r, 0) for r in relevant[k]))
        hit = memo.get(key)
        if hit is not None:
            return hit
        r = order[k]
        top = 0
        for p in options(k, used, assign):
            if p is None:
                val = best(k + 1, used, assign)
            else:
                assign[r] = p
                val = 1 + best(k + 1, used | (1 << p), assign)
                del assign[r]
            if val > top:
                top = val
                if top == bound[k]:
                    break
        memo[key] = top
        return top

    target = best(0, 0, {})
    assign: dict[int, int] = {}
    used = 0
    remaining = target
    for k in range(n):
        r = order[k]
        for p in options(k, used, assign):
            if p is None:
                if best(k + 1, used, assign) == remaining:
                    break
                continue
            assign[r] = p
            if 1 + best(k + 1, used | (1 << p), assign) == remaining:
                used |= 1 << p
                remaining -= 1
                break
            del assign[r]
    return NodeMatching(dict(sorted(assign.items())), len(assign))


def _bits(mask: int):
    i = 0
    while mask:
        if mask & 1:
            yield i
        mask >>= 1
        i += 1


# --- debug dump -------------------------------------------------------------

_NODE_LINE = re.compile(r"^(\d+):\s*(.*)$")
_EDGE_LINE = re.compile(r"^edge:\s*(\d+)\s*->\s*(\d+)\s*$")


def dump(g: DepGraph) -> str:
    """Deterministic text form: ``id: Skill("target"){params}`` and ``edge: u -> v`` lines."""
    lines = []
    if g.rules:
        lines.append("# rules: " + ",".join(g.rules))
    for i, call in enumerate(g.calls):
        if call is None:
            lines.append(f"{i}: <source>")
            continue
        params = ", ".join(
            f"{json.dumps(k, ensure_ascii=False)}: {render_value(call.params[k])}" for k in sorted(call.params)
        )
        lines.append(f"{i}: {call.skill}({json.dumps(call.target, ensure_ascii=False)}){{{params}}}")
    lines.extend(f"edge: {u} -> {v}" for u, v in g.edges)
    return "\n".join(lines) + "\n"


def parse_dump(text: str, validate: bool = False) -> DepGraph:
    """Inverse of :func:`dump`. Validation is off by default so broken graphs can be inspected."""
    nodes: dict[int, SkillCall | None] = {}
    edges = []
    rules: tuple[str, ...] = ()
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# rules:"):
            rules = tuple(r.strip() for r in line[len("# rules:") :].split(",") if r.strip())
            continue
        if line.startswith("#"):
            continue
        m = _EDGE_LINE.match(line)
        if m:
            edges.append((int(m.group(1)), int(m.group(2))))
            continue
        m = _NODE_LINE.match(line)
        if not m:
            raise GraphError(f"unrecognised dump line: {raw!r}")
        node_id, body = int(m.group(1)), m.group(2)
        if body == "<source>":
            nodes[node_id] = None
            continue
        head, sep, params = body.partition("){")
        if not sep or not params.endswith("}"):
            raise GraphError(f"malformed node line: {raw!r}")
        inner = params[:-1].strip()
        program = f"{head}, {{{inner}}})" if inner else f"{head})"
        (call,) = parse_program(program).calls
        nodes[node_id] = call
    if sorted(nodes) != list(range(len(nodes))):
        raise GraphError("node ids are not dense")
    return DepGraph(tuple(nodes[i] for i in range(len(nodes))), tuple(edges), rules, validate=validate)
