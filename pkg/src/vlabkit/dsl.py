"""Skill DSL: registry, parser, noisy-output extractor and canonical renderer.

A program is a sequence of calls of the form::

    Pick("Apple", {"gripper_state": "close", "orientation": [pi, 0, 0]})
    Place("Basket", {"pose": [0.6, 0.4, 0.15], "gripper_state": "open"})

Values are numbers, strings, numeric lists, or the constant ``pi`` (also
``-pi`` and ``pi/k``). ``np.pi``/``math.pi`` are accepted as aliases since
model output is usually written in Python.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Union

BASE_SKILLS = (
    "Pick",
    "Place",
    "Lift",
    "Open",
    "Close",
    "Press",
    "Insert",
    "Pour",
    "Twist",
    "Hang",
    "Push",
    "Explore",
)

# params whose list values are angle triples (radians)
ANGLE_KEYS = frozenset({"orientation", "rotation", "euler", "rpy", "angles", "angle"})


class ParseError(ValueError):
    """Base class for DSL parse failures."""


class DslSyntaxError(ParseError):
    def __init__(self, line: int, col: int, expected: str, found: str = ""):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        msg = f"line {line}, col {col}: expected {expected}"
        if found:
            msg += f", found {found!r}"
        super().__init__(msg)


class UnknownSkill(ParseError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown skill {name!r}")


class DuplicateParam(ParseError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"duplicate parameter {key!r}")


@dataclass(frozen=True)
class Vector:
    """A numeric list parameter. ``angular`` marks radian triples."""

    values: tuple[float, ...]
    angular: bool = False

    def __iter__(self) -> Iterator[float]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)


ParamValue = Union[float, str, Vector]


class Origin(str, enum.Enum):
    REFERENCE = "reference"
    PREDICTION = "prediction"


@dataclass(frozen=True)
class SkillCall:
    skill: str
    target: str
    params: Mapping[str, ParamValue] = field(default_factory=dict)

    def __post_init__(self):
        if not self.target:
            raise ValueError("skill call target must be non-empty")
        object.__setattr__(self, "params", dict(self.params))

    def __str__(self) -> str:
        return render_call(self)


@dataclass(frozen=True)
class SkillSequence:
    calls: tuple[SkillCall, ...] = ()
    origin: Origin = field(default=Origin.REFERENCE, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "calls", tuple(self.calls))

    def __len__(self) -> int:
        return len(self.calls)

    def __iter__(self) -> Iterator[SkillCall]:
        return iter(self.calls)

    def __getitem__(self, i):
        return self.calls[i]

    def skills(self) -> list[str]:
        return [c.skill for c in self.calls]


class SkillRegistry:
    """Closed set of skill names; extended by configuration."""

    def __init__(self, names=BASE_SKILLS, schemas: Mapping[str, Mapping[str, str]] | None = None):
        self._canon = {n.lower(): n for n in names}
        self.schemas = {n: dict(s) for n, s in (schemas or {}).items()}

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._canon.values())

    def canonical(self, name: str) -> str | None:
        return self._canon.get(name.lower())

    def __contains__(self, name: str) -> bool:
        return name.lower() in self._canon

    def extended(self, extra: Mapping[str, Mapping[str, str]]) -> "SkillRegistry":
        schemas = dict(self.schemas)
        schemas.update(extra)
        return SkillRegistry(self.names + tuple(n for n in extra if n not in self), schemas)

    def anchor_pattern(self) -> re.Pattern:
        alts = "|".join(sorted((re.escape(n) for n in self.names), key=len, reverse=True))
        return re.compile(rf"(?<![A-Za-z0-9_.])({alts})\s*\(", re.IGNORECASE)


DEFAULT_REGISTRY = SkillRegistry()


def load_registry(path: str | Path, base: SkillRegistry = DEFAULT_REGISTRY) -> SkillRegistry:
    """Extend ``base`` with the skills listed in a JSON config file.

    Expected shape: ``{"skills": [{"name": "Stir", "params": {"speed": "number"}}]}``.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    extra = {}
    for entry in data.get("skills", []):
        name = entry["name"]
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise ValueError(f"invalid skill name {name!r}")
        extra[name] = entry.get("params", {})
    return base.extended(extra)


# --- lexer/parser ---------------------------------------------------------

_WS = re.compile(r"(?:\s+|#[^\n]*)+")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER = re.compile(r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_PI = re.compile(r"(?:(?:np|numpy|math)\.)?pi(?![A-Za-z0-9_])")


class _Parser:
    def __init__(self, text: str, registry: SkillRegistry, pos: int = 0):
        self.text = text
        self.registry = registry
        self.pos = pos

    def where(self, pos: int | None = None) -> tuple[int, int]:
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def fail(self, expected: str, pos: int | None = None):
        pos = self.pos if pos is None else pos
        line, col = self.where(pos)
        found = self.text[pos : pos + 12] if pos < len(self.text) else "end of input"
        raise DslSyntaxError(line, col, expected, found)

    def skip_ws(self):
        m = _WS.match(self.text, self.pos)
        if m:
            self.pos = m.end()

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos : self.pos + 1]

    def expect(self, ch: str):
        if self.peek() != ch:
            self.fail(repr(ch))
        self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def call(self) -> SkillCall:
        self.skip_ws()
        m = _NAME.match(self.text, self.pos)
        if not m:
            self.fail("skill name")
        skill = self.registry.canonical(m.group())
        if skill is None:
            raise UnknownSkill(m.group())
        self.pos = m.end()
        self.expect("(")
        if self.peek() not in ('"', "'"):
            self.fail("target string")
        target = self.string()
        if not target.strip():
            self.fail("non-empty target", self.pos - 1)
        params: dict[str, ParamValue] = {}
        if self.peek() == ",":
            self.pos += 1
            if self.peek() == "{":
                params = self.dict()
                if self.peek() == ",":
                    self.pos += 1
        self.expect(")")
        return SkillCall(skill, target, params)

    def string(self) -> str:
        quote = self.text[self.pos]
        start = self.pos
        i = start + 1
        n = len(self.text)
        while i < n:
            c = self.text[i]
            if c == "\\":
                i += 2
                continue
            if c == quote:
                break
            i += 1
        else:
            self.fail("closing quote", start)
        body = self.text[start + 1 : i]
        if quote == "'":
            body = _single_to_double(body)
        try:
            value = json.loads('"' + body + '"')
        except (json.JSONDecodeError, RecursionError):
            self.fail("valid string literal", start)
        self.pos = i + 1
        return value

    def dict(self) -> dict[str, ParamValue]:
        self.expect("{")
        out: dict[str, ParamValue] = {}
        while self.peek() != "}":
            key_pos = self.pos
            if self.peek() not in ('"', "'"):
                self.fail("parameter key string or '}'")
            key = self.string()
            if key in out:
                raise DuplicateParam(key)
            self.expect(":")
            out[key] = self.value(key)
            if self.peek() == ",":
                self.pos += 1
            elif self.peek() != "}":
                self.fail("',' or '}'")
            if self.pos == key_pos:  # pragma: no cover - defensive
                self.fail("progress")
        self.pos += 1
        return out

    def value(self, key: str) -> ParamValue:
        c = self.peek()
        if c in ('"', "'"):
            return self.string()
        if c == "[":
            self.pos += 1
            items = [self.number()]
            while self.peek() == ",":
                self.pos += 1
                if self.peek() == "]":
                    break
                items.append(self.number())
            self.expect("]")
            return Vector(tuple(items), angular=key.lower() in ANGLE_KEYS)
        return self.number()

    def number(self) -> float:
        self.skip_ws()
        sign = 1.0
        if self.text.startswith(("-", "+"), self.pos):
            sign = -1.0 if self.text[self.pos] == "-" else 1.0
            self.pos += 1
            self.skip_ws()
        m = _PI.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            value = math.pi
            if self.peek() == "/":
                self.pos += 1
                self.skip_ws()
                d = _NUMBER.match(self.text, self.pos)
                if not d:
                    self.fail("divisor after 'pi/'")
                div = float(d.group())
                if div == 0.0 or not math.isfinite(div):
                    self.fail("non-zero finite divisor")
                self.pos = d.end()
                value /= div
            return sign * value
        m = _NUMBER.match(self.text, self.pos)
        if not m:
            self.fail("number")
        value = float(m.group())
        if not math.isfinite(value):
            self.fail("finite number")
        self.pos = m.end()
        return sign * value


def _single_to_double(body: str) -> str:
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            out.append("'" if nxt == "'" else c + nxt)
            i += 2
            continue
        out.append('\\"' if c == '"' else c)
        i += 1
    return "".join(out)


def parse_program(
    text: str,
    registry: SkillRegistry = DEFAULT_REGISTRY,
    origin: Origin = Origin.REFERENCE,
) -> SkillSequence:
    """Parse a complete DSL program. Raises a ``ParseError`` subclass on bad input."""
    p = _Parser(text, registry)
    calls = []
    while not p.at_end():
        calls.append(p.call())
    return SkillSequence(tuple(calls), origin)


def parse_call_at(text: str, pos: int, registry: SkillRegistry = DEFAULT_REGISTRY) -> tuple[SkillCall, int]:
    """Parse one call starting at ``pos``; returns the call and the end offset."""
    p = _Parser(text, registry, pos)
    call = p.call()
    return call, p.pos


@dataclass(frozen=True)
class Diagnostic:
    span: tuple[int, int]
    reason: str

    def to_json(self) -> dict[str, Any]:
        return {"span": list(self.span), "reason": self.reason}


def extract_from_noisy(
    text: str, registry: SkillRegistry = DEFAULT_REGISTRY
) -> tuple[SkillSequence, list[Diagnostic]]:
    """Pull skill calls out of free-form model output.

    Each occurrence of a registry name followed by ``(`` is an anchor. An
    anchor that parses contributes a call; one that does not is skipped and
    reported, and scanning resumes at the next anchor. Non-blank text
    between two recovered calls is reported as an unparseable span. Prose
    before the first and after the last call is ignored.
    """
    anchors = registry.anchor_pattern()
    calls: list[SkillCall] = []
    diags: list[Diagnostic] = []
    failures: list[tuple[int, int, str]] = []
    last_end: int | None = None
    pos = 0
    while True:
        m = anchors.search(text, pos)
        if m is None:
            break
        try:
            call, end = parse_call_at(text, m.start(), registry)
        except ParseError as exc:
            failures.append((m.start(), m.end(), str(exc)))
            pos = m.end()
            continue
        if last_end is not None and text[last_end : m.start()].strip():
            reason = "; ".join(f[2] for f in failures) or "no skill call in span"
            diags.append(Diagnostic((last_end, m.start()), reason))
        else:
            diags.extend(Diagnostic((s, e), r) for s, e, r in failures)
        failures = []
        calls.append(call)
        last_end = pos = end
    diags.extend(Diagnostic((s, e), r) for s, e, r in failures)
    return SkillSequence(tuple(calls), Origin.PREDICTION), diags


# --- rendering ------------------------------------------------------------


def render_value(value: ParamValue) -> str:
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, Vector):
        return "[" + ", ".join(repr(float(v)) for v in value.values) + "]"
    return repr(float(value))


def render_call(call: SkillCall) -> str:
    head = f"{call.skill}({json.dumps(call.target, ensure_ascii=False)}"
    if not call.params:
        return head + ")"
    body = ", ".join(
        f"{json.dumps(k, ensure_ascii=False)}: {render_value(call.params[k])}" for k in sorted(call.params)
    )
    return head + ", {" + body + "})"


def canonical_string(seq: SkillSequence) -> str:
    """One call per line, params sorted by key. Empty sequence renders as ''."""
    return "\n".join(render_call(c) for c in seq.calls)


def param_to_json(value: ParamValue) -> Any:
    if isinstance(value, Vector):
        return list(value.values)
    return value
