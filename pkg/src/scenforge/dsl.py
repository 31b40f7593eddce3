"""Line-oriented scenario language.

A scenario document names trajectory-library functions, one statement per
line::

    # cut-in on a wet road
    scenario fig1a
    seed 7
    env rain
    ego: forward speed=10
    agent a1: vehicle cut_in target=ego safe_dis=10
    save trajectories out/

Distances are meters, speeds m/s, times seconds and angles radians. Angle
parameters also accept a ``deg`` suffix (``angle=15deg``); the parsed value is
always stored in radians.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable

__all__ = [
    "AgentDecl",
    "DslError",
    "ManeuverCall",
    "ParamSpec",
    "SaveDirective",
    "ScenarioSpec",
    "Signature",
    "lookup",
    "param_value",
    "parse",
    "print_canonical",
    "registry",
]

EGO = "ego"
CATEGORIES = ("vehicle", "pedestrian")
SAVE_KINDS = ("trajectories", "bev", "bundle")
MAX_SEED = 2**64 - 1

# Sentinel default: the trajectory kernel picks the value (placement, speed draw).
AUTO = "auto"


class DslError(ValueError):
    """Parse or validation failure with a 1-based source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f"line {line}, col {col}: " if line else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str  # float | int | angle | point | ref | enum | path
    default: object
    low: float | None = None
    high: float | None = None
    choices: tuple[str, ...] = ()
    unit: str = ""

    def describe(self) -> str:
        if self.kind == "enum":
            dom = "{" + ",".join(self.choices) + "}"
        elif self.low is not None:
            dom = f"[{self.low:g}, {self.high:g}]"
        else:
            dom = self.kind
        unit = f" {self.unit}" if self.unit else ""
        return f"{self.name}: {self.kind}{unit} in {dom} = {self.default}"


@dataclass(frozen=True)
class Signature:
    name: str
    category: str  # vehicle | pedestrian | utility
    params: tuple[ParamSpec, ...]
    summary: str
    reconstructed: bool

    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    def param(self, key: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == key:
                return p
        return None


def _speed(default=10.0, low=2.0, high=15.0):
    return ParamSpec("speed", "float", default, low, high, unit="m/s")


def _start():
    return ParamSpec("start", "point", AUTO, -200.0, 200.0, unit="m")


def _heading():
    return ParamSpec("heading", "angle", 0.0, -math.pi, math.pi, unit="rad")


def _start_time(default):
    return ParamSpec("start_time", "float", default, 0.0, 60.0, unit="s")


def _target(default=EGO):
    return ParamSpec("target", "ref", default)


def _side(default="left", extra=()):
    return ParamSpec("side", "enum", default, choices=("left", "right") + tuple(extra))


_PED_SPEED = ParamSpec("speed", "float", AUTO, 0.5, 2.0, unit="m/s")

_REGISTRY: tuple[Signature, ...] = (
    Signature("forward", "vehicle", (_speed(), _start(), _heading()),
              "constant speed along the current heading", False),
    Signature("accelerate", "vehicle",
              (_speed(6.0), ParamSpec("accel", "float", 2.5, 0.1, 6.0, unit="m/s^2"),
               ParamSpec("target_speed", "float", 14.0, 2.0, 15.0, unit="m/s"),
               _start_time(0.0), _start(), _heading()),
              "linear speed ramp up to target_speed", False),
    Signature("brake", "vehicle",
              (_speed(12.0), ParamSpec("decel", "float", 2.5, 0.1, 8.0, unit="m/s^2"),
               ParamSpec("target_speed", "float", 2.0, 0.0, 15.0, unit="m/s"),
               _start_time(2.0), _start(), _heading()),
              "linear speed ramp down to target_speed", False),
    Signature("steer_left", "vehicle",
              (_speed(), ParamSpec("angle", "angle", math.radians(15), 0.0, math.pi / 2, unit="rad"),
               ParamSpec("duration", "float", 2.0, 0.25, 20.0, unit="s"),
               _start_time(1.0), _start(), _heading()),
              "heading ramp to the left, then hold", False),
    Signature("steer_right", "vehicle",
              (_speed(), ParamSpec("angle", "angle", math.radians(15), 0.0, math.pi / 2, unit="rad"),
               ParamSpec("duration", "float", 2.0, 0.25, 20.0, unit="s"),
               _start_time(1.0), _start(), _heading()),
              "heading ramp to the right, then hold", False),
    Signature("lane_change_left", "vehicle",
              (_speed(), ParamSpec("offset", "float", 3.5, 1.0, 8.0, unit="m"),
               _start_time(1.0), _start(), _heading()),
              "lateral move of one lane to the left", True),
    Signature("lane_change_right", "vehicle",
              (_speed(), ParamSpec("offset", "float", 3.5, 1.0, 8.0, unit="m"),
               _start_time(1.0), _start(), _heading()),
              "lateral move of one lane to the right", True),
    Signature("overtake", "vehicle",
              (_target(), _side(), ParamSpec("offset", "float", 3.5, 1.0, 8.0, unit="m"),
               ParamSpec("gap", "float", 8.0, 2.0, 50.0, unit="m"), _start()),
              "pass the target in the adjacent lane and return", True),
    Signature("follow", "vehicle",
              (_target(), ParamSpec("time_gap", "float", 1.5, 0.5, 5.0, unit="s"), _start()),
              "track the target at a fixed time gap", True),
    Signature("u_turn", "vehicle",
              (_speed(5.0), ParamSpec("radius", "float", 6.0, 3.0, 30.0, unit="m"),
               _side(), _start_time(2.0), _start(), _heading()),
              "half-circle heading sweep, then forward", True),
    Signature("cut_in", "vehicle",
              (_target(), ParamSpec("safe_dis", "float", 10.0, 1.0, 50.0, unit="m"),
               _side("random", ("random",))),
              "merge into the target's lane ahead of it", False),
    Signature("stop", "vehicle",
              (_speed(8.0), ParamSpec("decel", "float", 2.5, 0.1, 8.0, unit="m/s^2"),
               _start_time(2.0), _start(), _heading()),
              "brake to standstill and hold", True),
    Signature("pedestrian_walk", "pedestrian",
              (_PED_SPEED, _heading(), _start()),
              "walk along a fixed heading", False),
    Signature("pedestrian_cross", "pedestrian",
              (ParamSpec("direction", "enum", "left", choices=("left", "right")), _PED_SPEED,
               ParamSpec("at", "float", 25.0, 0.0, 50.0, unit="m")),
              "cross the road perpendicular to it", False),
    Signature("set_seed", "utility",
              (ParamSpec("seed", "int", 0, 0, MAX_SEED),), "seed the scene RNG", True),
    Signature("save_trajectories", "utility",
              (ParamSpec("path", "path", "out/"),), "write trajectory arrays", False),
    Signature("save_bev", "utility",
              (ParamSpec("path", "path", "out/"),), "write BEV rasters", True),
    Signature("save_bundle", "utility",
              (ParamSpec("path", "path", "out/"),), "write the condition bundle", True),
)

_BY_NAME = {s.name: s for s in _REGISTRY}


def registry() -> list[Signature]:
    """Return the 18 library functions in a fixed order."""
    return list(_REGISTRY)


def lookup(name: str) -> Signature:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise DslError(f"unknown function '{name}'") from None


@dataclass(frozen=True)
class ManeuverCall:
    function: str
    params: dict = field(default_factory=dict)

    def get(self, key: str):
        return param_value(self, key)


@dataclass(frozen=True)
class AgentDecl:
    agent_id: str
    category: str
    call: ManeuverCall


@dataclass(frozen=True)
class SaveDirective:
    kind: str
    path: str


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "scenario"
    seed: int = 0
    environment: frozenset = frozenset()
    ego: ManeuverCall | None = None
    agents: tuple[AgentDecl, ...] = ()
    outputs: tuple[SaveDirective, ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def agent_ids(self) -> list[str]:
        return [EGO] + [a.agent_id for a in self.agents]

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return ScenarioSpec(self.name, seed, self.environment, self.ego,
                            self.agents, self.outputs, self.warnings)


def param_value(call: ManeuverCall, key: str):
    """Explicit value of ``key`` or the registry default."""
    if key in call.params:
        return call.params[key]
    spec = lookup(call.function).param(key)
    if spec is None:
        raise KeyError(f"{call.function} has no parameter '{key}'")
    return spec.default


# ---------------------------------------------------------------- scanning

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_TOKEN = re.compile(
    rf"(?P<point>\(\s*(?P<px>{_NUM})\s*,\s*(?P<py>{_NUM})\s*\))"
    rf"|(?P<kv>(?P<key>{_IDENT})=)"
    rf"|(?P<word>[^\s=]+)"
)


@dataclass
class _Tok:
    kind: str  # point | key | word
    text: str
    col: int
    value: object = None


def _scan(line: str, lineno: int) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(line):
        if line[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(line, pos)
        if m is None:
            raise DslError(f"unexpected character '{line[pos]}'", lineno, pos + 1)
        if m.group("point"):
            toks.append(_Tok("point", m.group(0), pos + 1,
                             (float(m.group("px")), float(m.group("py")))))
        elif m.group("kv"):
            toks.append(_Tok("key", m.group("key"), pos + 1))
        else:
            toks.append(_Tok("word", m.group("word"), pos + 1))
        pos = m.end()
    return toks


def _strip_comment(line: str) -> str:
    i = line.find("#")
    return line if i < 0 else line[:i]


def _convert(spec: ParamSpec, tok: _Tok, fn: str, lineno: int):
    where = (lineno, tok.col)
    if spec.kind == "point":
        if tok.kind != "point":
            raise DslError(f"{fn}.{spec.name} expects a point (x,y)", *where)
        x, y = tok.value
        for v in (x, y):
            if not spec.low <= v <= spec.high:
                raise DslError(f"{fn}.{spec.name} out of declared range "
                               f"[{spec.low:g}, {spec.high:g}]", *where)
        return (x, y)
    if tok.kind != "word":
        raise DslError(f"{fn}.{spec.name} expects a {spec.kind}", *where)
    text = tok.text
    if spec.kind in ("ref", "enum"):
        if not re.fullmatch(_IDENT, text):
            raise DslError(f"{fn}.{spec.name} expects an identifier", *where)
        if spec.kind == "enum" and text not in spec.choices:
            raise DslError(f"{fn}.{spec.name} must be one of {{{','.join(spec.choices)}}}", *where)
        return text
    if spec.kind == "path":
        return text
    deg = text.endswith("deg")
    num_text = text[:-3] if deg else text
    if not re.fullmatch(_NUM, num_text):
        raise DslError(f"{fn}.{spec.name} expects a number, got '{text}'", *where)
    if deg and spec.kind != "angle":
        raise DslError(f"'deg' suffix on non-angle parameter {fn}.{spec.name}", *where)
    if spec.kind == "int":
        if deg or not re.fullmatch(r"\d+", num_text):
            raise DslError(f"{fn}.{spec.name} expects an unsigned integer", *where)
        value = int(num_text)
    else:
        value = float(num_text)
        if deg:
            value = math.radians(value)
    if not spec.low <= value <= spec.high:
        raise DslError(f"{fn}.{spec.name} out of declared range "
                       f"[{spec.low:g}, {spec.high:g}]", *where)
    return value


def _parse_call(toks: list[_Tok], lineno: int, category: str) -> tuple[ManeuverCall, dict]:
    """Parse ``function k=v ...``; returns the call and key -> column map."""
    if not toks or toks[0].kind != "word":
        col = toks[0].col if toks else 1
        raise DslError("expected a function name", lineno, col)
    name = toks[0].text
    sig = _BY_NAME.get(name)
    if sig is None:
        raise DslError(f"unknown function '{name}'", lineno, toks[0].col)
    if sig.category != category:
        raise DslError(f"function '{name}' is a {sig.category} function, "
                       f"not usable by a {category}", lineno, toks[0].col)
    params: dict = {}
    cols: dict = {}
    rest = toks[1:]
    i = 0
    while i < len(rest):
        key = rest[i]
        if key.kind != "key":
            raise DslError(f"expected key=value, got '{key.text}'", lineno, key.col)
        if i + 1 >= len(rest):
            raise DslError(f"missing value for '{key.text}'", lineno, key.col)
        spec = sig.param(key.text)
        if spec is None:
            raise DslError(f"unknown parameter '{key.text}' for {name}", lineno, key.col)
        if key.text in params:
            raise DslError(f"duplicate parameter '{key.text}'", lineno, key.col)
        params[key.text] = _convert(spec, rest[i + 1], name, lineno)
        cols[key.text] = key.col
        i += 2
    return ManeuverCall(name, params), cols


def parse(text: str) -> ScenarioSpec:
    """Parse and validate a scenario document.

    Raises:
        DslError: on syntax errors, unknown functions or parameters, range
            violations, duplicate agent ids and unresolved ``target``
            references. The message carries line and column.
    """
    name = "scenario"
    seed = 0
    env: set[str] = set()
    ego = None
    ego_line = 0
    agents: list[AgentDecl] = []
    outputs: list[SaveDirective] = []
    seen: dict[str, int] = {}
    refs: list[tuple[str, str, int, int]] = []  # (owner, target, line, col)
    header_seen: set[str] = set()

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = _strip_comment(raw.rstrip("\r"))
        if not line.strip():
            continue
        toks = _scan(line, lineno)
        head = toks[0]
        if head.kind != "word":
            raise DslError("expected a statement keyword", lineno, head.col)
        kw = head.text
        if kw in ("scenario", "seed"):
            if kw in header_seen:
                raise DslError(f"duplicate '{kw}' statement", lineno, head.col)
            header_seen.add(kw)
            if len(toks) != 2 or toks[1].kind != "word":
                raise DslError(f"'{kw}' takes exactly one argument", lineno, head.col)
            arg = toks[1]
            if kw == "scenario":
                if not re.fullmatch(_IDENT, arg.text):
                    raise DslError("scenario name must be an identifier", lineno, arg.col)
                name = arg.text
            else:
                if not re.fullmatch(r"\d+", arg.text) or int(arg.text) > MAX_SEED:
                    raise DslError("seed must be an unsigned 64-bit integer", lineno, arg.col)
                seed = int(arg.text)
        elif kw == "env":
            if len(toks) < 2:
                raise DslError("'env' needs at least one tag", lineno, head.col)
            for t in toks[1:]:
                if t.kind != "word" or not re.fullmatch(r"[A-Za-z0-9_\-]+", t.text):
                    raise DslError(f"invalid environment tag '{t.text}'", lineno, t.col)
                env.add(t.text)
        elif kw == "ego:":
            if ego is not None:
                raise DslError(f"duplicate ego declaration (first on line {ego_line})",
                               lineno, head.col)
            ego, cols = _parse_call(toks[1:], lineno, "vehicle")
            ego_line = lineno
            if "target" in _BY_NAME[ego.function].param_names():
                refs.append((EGO, param_value(ego, "target"), lineno,
                             cols.get("target", toks[1].col)))
        elif kw == "agent":
            if len(toks) < 4 or toks[1].kind != "word" or not toks[1].text.endswith(":"):
                raise DslError("expected 'agent <id>: <category> <function> ...'",
                               lineno, head.col)
            aid = toks[1].text[:-1]
            if not re.fullmatch(_IDENT, aid):
                raise DslError(f"invalid agent id '{aid}'", lineno, toks[1].col)
            if aid == EGO:
                raise DslError("'ego' is reserved; use 'ego:'", lineno, toks[1].col)
            if aid in seen:
                raise DslError(f"duplicate agent id '{aid}' (first on line {seen[aid]})",
                               lineno, toks[1].col)
            seen[aid] = lineno
            cat = toks[2]
            if cat.kind != "word" or cat.text not in CATEGORIES:
                raise DslError(f"unknown category '{cat.text}'", lineno, cat.col)
            call, cols = _parse_call(toks[3:], lineno, cat.text)
            agents.append(AgentDecl(aid, cat.text, call))
            if "target" in _BY_NAME[call.function].param_names():
                refs.append((aid, param_value(call, "target"), lineno,
                             cols.get("target", toks[3].col)))
        elif kw == "save":
            args = toks[1:]
            if not args or any(a.kind != "word" for a in args) or len(args) > 2:
                raise DslError("expected 'save [trajectories|bev|bundle] <path>'",
                               lineno, head.col)
            if len(args) == 2:
                if args[0].text not in SAVE_KINDS:
                    raise DslError(f"unknown save kind '{args[0].text}'", lineno, args[0].col)
                outputs.append(SaveDirective(args[0].text, args[1].text))
            else:
                outputs.append(SaveDirective("trajectories", args[0].text))
        else:
            raise DslError(f"unknown statement '{kw}'", lineno, head.col)

    declared = {EGO, *seen}
    for owner, target, lineno, col in refs:
        if target not in declared:
            raise DslError(f"unresolved target reference '{target}'", lineno, col)
        if target == owner:
            raise DslError(f"agent '{owner}' targets itself", lineno, col)
    if ego is None:
        raise DslError("missing ego declaration ('ego: <function> ...')", 1, 1)
    _check_acyclic(ego, agents)
    return ScenarioSpec(name, seed, frozenset(env), ego, tuple(agents), tuple(outputs))


def _targets(call: ManeuverCall) -> str | None:
    if _BY_NAME[call.function].param("target") is None:
        return None
    return param_value(call, "target")


def generation_order(spec: ScenarioSpec) -> list[str]:
    """Agent ids ordered so every target precedes the agents referring to it.

    Ego goes first unless its own maneuver targets an agent; remaining ties
    keep declaration order.
    """
    deps = {EGO: _targets(spec.ego)}
    for a in spec.agents:
        deps[a.agent_id] = _targets(a.call)
    order: list[str] = []
    pending = spec.agent_ids()
    while pending:
        for aid in pending:
            dep = deps[aid]
            if dep is None or dep in order:
                order.append(aid)
                pending.remove(aid)
                break
        else:
            raise DslError(f"cyclic target reference among {sorted(pending)}")
    return order


def _check_acyclic(ego: ManeuverCall, agents: list[AgentDecl]) -> None:
    generation_order(ScenarioSpec(ego=ego, agents=tuple(agents)))


# ---------------------------------------------------------------- printing

def _fmt_value(v) -> str:
    if isinstance(v, tuple):
        return f"({_fmt_num(v[0])},{_fmt_num(v[1])})"
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return _fmt_num(v)
    return str(v)


def _fmt_num(v) -> str:
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def _fmt_call(call: ManeuverCall) -> str:
    parts = [call.function]
    for key in sorted(call.params):
        parts.append(f"{key}={_fmt_value(call.params[key])}")
    return " ".join(parts)


def print_canonical(spec: ScenarioSpec) -> str:
    """Deterministic source text; ``parse`` of the result equals ``spec``."""
    lines = [f"scenario {spec.name}", f"seed {spec.seed}"]
    if spec.environment:
        lines.append("env " + " ".join(sorted(spec.environment)))
    lines.append(f"ego: {_fmt_call(spec.ego)}")
    for a in spec.agents:
        lines.append(f"agent {a.agent_id}: {a.category} {_fmt_call(a.call)}")
    for out in spec.outputs:
        lines.append(f"save {out.kind} {out.path}")
    return "\n".join(lines) + "\n"


def describe_registry(entries: Iterable[Signature] | None = None) -> str:
    """Human-readable function table, used as the prompt preamble."""
    rows = []
    for sig in entries or _REGISTRY:
        args = ", ".join(p.describe() for p in sig.params)
        rows.append(f"- {sig.name} [{sig.category}]: {sig.summary}. ({args})")
    return "\n".join(rows)

