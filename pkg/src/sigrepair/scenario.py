"""Scenario interchange model: lanes, agent trajectories and raw per-lane signal records.

One scenario is one JSON document (UTF-8). The schema is shipped as
``sigrepair/schema/scenario-v1.json``; :func:`parse_scenario` and
:func:`serialize_scenario` are the only readers and writers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import cached_property
from typing import Any, NamedTuple, Sequence

import numpy as np

FORMAT_VERSION = 1

LANE_KINDS = ("vehicle", "bicycle")
AGENT_KINDS = ("vehicle", "pedestrian", "cyclist")


class SignalState(IntEnum):
    """Per-tick signal colour. Integer values are used as array codes."""

    UNKNOWN = 0
    GREEN = 1
    YELLOW = 2
    RED = 3

    @property
    def code(self) -> str | None:
        return _STATE_TO_CODE[self]

    @classmethod
    def from_code(cls, code: str | None) -> "SignalState":
        try:
            return _CODE_TO_STATE[code]
        except KeyError:
            raise ValueError(f"unknown signal state code {code!r}") from None


_STATE_TO_CODE = {
    SignalState.UNKNOWN: None,
    SignalState.GREEN: "G",
    SignalState.YELLOW: "Y",
    SignalState.RED: "R",
}
_CODE_TO_STATE = {v: k for k, v in _STATE_TO_CODE.items()}


class Shape(Enum):
    ROUND = "round"
    ARROW = "arrow"


class ScenarioParseError(ValueError):
    """The byte stream is not a well-formed JSON document."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ScenarioValidationError(ValueError):
    """The document parsed but violates a scenario invariant."""

    def __init__(self, diagnostics: Sequence["Diagnostic"]):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0]
        extra = f" (+{len(self.diagnostics) - 1} more)" if len(self.diagnostics) > 1 else ""
        super().__init__(f"{first.field}: {first.message}{extra}")

    @property
    def field(self) -> str:
        return self.diagnostics[0].field


@dataclass(frozen=True)
class Diagnostic:
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


@dataclass(frozen=True)
class LaneSegment:
    id: str
    polyline: tuple[tuple[float, float], ...]
    entry_lane_ids: tuple[str, ...] = ()
    exit_lane_ids: tuple[str, ...] = ()
    lane_kind: str = "vehicle"
    speed_limit_mph: float | None = None

    @cached_property
    def points(self) -> np.ndarray:
        return np.asarray(self.polyline, dtype=float)

    @cached_property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


class TrajectorySample(NamedTuple):
    t: int
    x: float
    y: float
    velocity: float
    acceleration: float
    heading: float
    valid: bool


@dataclass(frozen=True)
class Agent:
    id: str
    kind: str
    is_sdc: bool
    samples: tuple[TrajectorySample, ...]

    @cached_property
    def table(self) -> np.ndarray:
        """Samples as a float array with columns t, x, y, v, a, heading, valid."""
        if not self.samples:
            return np.zeros((0, 7))
        return np.asarray(self.samples, dtype=float)


@dataclass(frozen=True)
class RawSignalRecord:
    lane_id: str
    states: tuple[SignalState, ...]
    shapes: tuple[Shape | None, ...] = ()
    position: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.shapes:
            object.__setattr__(
                self,
                "shapes",
                tuple(None if s == SignalState.UNKNOWN else Shape.ROUND for s in self.states),
            )


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    tick_count: int
    tick_duration: float = 0.1
    lanes: tuple[LaneSegment, ...] = ()
    agents: tuple[Agent, ...] = ()
    raw_signals: tuple[RawSignalRecord, ...] = ()

    @cached_property
    def lane_map(self) -> dict[str, LaneSegment]:
        return {lane.id: lane for lane in self.lanes}

    @cached_property
    def signal_map(self) -> dict[str, RawSignalRecord]:
        return {rec.lane_id: rec for rec in self.raw_signals}

    def with_signals(self, raw_signals: Sequence[RawSignalRecord]) -> "Scenario":
        return Scenario(
            self.scenario_id,
            self.tick_count,
            self.tick_duration,
            self.lanes,
            self.agents,
            tuple(raw_signals),
        )


# ---------------------------------------------------------------- validation


def _finite(*values: float) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


def validate_scenario(s: Scenario) -> list[Diagnostic]:
    """Return one diagnostic per violated invariant; empty when ``s`` is valid."""
    out: list[Diagnostic] = []
    T = s.tick_count
    if not isinstance(T, int) or T < 2:
        out.append(Diagnostic("tick_count", f"must be an integer >= 2, got {T!r}"))
    if not _finite(s.tick_duration) or s.tick_duration <= 0:
        out.append(Diagnostic("tick_duration_s", f"must be finite and > 0, got {s.tick_duration!r}"))

    lane_ids: set[str] = set()
    for k, lane in enumerate(s.lanes):
        where = f"lanes[{k}] (id={lane.id})"
        if lane.id in lane_ids:
            out.append(Diagnostic(where, "duplicate lane id"))
        lane_ids.add(lane.id)
        if lane.lane_kind not in LANE_KINDS:
            out.append(Diagnostic(f"{where}.lane_kind", f"unknown lane kind {lane.lane_kind!r}"))
        if len(lane.polyline) < 2:
            out.append(Diagnostic(f"{where}.polyline", "needs at least 2 points"))
        if not all(_finite(*p) for p in lane.polyline):
            out.append(Diagnostic(f"{where}.polyline", "non-finite coordinate"))
        else:
            for j in range(1, len(lane.polyline)):
                if lane.polyline[j] == lane.polyline[j - 1]:
                    out.append(Diagnostic(f"{where}.polyline[{j}]", "repeats the previous point"))
                    break
        if lane.speed_limit_mph is not None and (
            not _finite(lane.speed_limit_mph) or lane.speed_limit_mph < 0
        ):
            out.append(Diagnostic(f"{where}.speed_limit_mph", "must be finite and >= 0"))

    for k, lane in enumerate(s.lanes):
        for key in ("entry_lane_ids", "exit_lane_ids"):
            for ref in getattr(lane, key):
                if ref not in lane_ids:
                    out.append(
                        Diagnostic(f"lanes[{k}] (id={lane.id}).{key}", f"dangling lane reference {ref!r}")
                    )

    agent_ids: set[str] = set()
    for k, agent in enumerate(s.agents):
        where = f"agents[{k}] (id={agent.id})"
        if agent.id in agent_ids:
            out.append(Diagnostic(where, "duplicate agent id"))
        agent_ids.add(agent.id)
        if agent.kind not in AGENT_KINDS:
            out.append(Diagnostic(f"{where}.kind", f"unknown agent kind {agent.kind!r}"))
        if len(agent.samples) != T:
            out.append(
                Diagnostic(f"{where}.samples", f"has {len(agent.samples)} samples, tick_count is {T}")
            )
        prev_t = 0
        for smp in agent.samples:
            if smp.t <= prev_t:
                out.append(Diagnostic(f"{where}.t", f"tick {smp.t} is not strictly increasing"))
                break
            prev_t = smp.t
        for smp in agent.samples:
            if not _finite(smp.x, smp.y, smp.velocity, smp.acceleration, smp.heading):
                out.append(Diagnostic(f"{where} tick {smp.t}", "non-finite sample value"))
            elif smp.valid and smp.velocity < 0:
                out.append(Diagnostic(f"{where} tick {smp.t}.velocity", f"negative velocity {smp.velocity}"))
        if agent.samples and (agent.samples[0].t < 1 or agent.samples[-1].t > T):
            out.append(Diagnostic(f"{where}.t", f"ticks must lie in 1..{T}"))

    seen_signal_lanes: set[str] = set()
    for k, rec in enumerate(s.raw_signals):
        where = f"raw_signals[{k}] (lane_id={rec.lane_id})"
        if rec.lane_id not in lane_ids:
            out.append(Diagnostic(where, f"dangling lane reference {rec.lane_id!r}"))
        if rec.lane_id in seen_signal_lanes:
            out.append(Diagnostic(where, "duplicate record for lane"))
        seen_signal_lanes.add(rec.lane_id)
        if len(rec.states) != T:
            out.append(Diagnostic(f"{where}.states", f"has {len(rec.states)} entries, tick_count is {T}"))
        if len(rec.shapes) != len(rec.states):
            out.append(Diagnostic(f"{where}.shapes", "length differs from states"))
        else:
            for j, (st, sh) in enumerate(zip(rec.states, rec.shapes)):
                if st == SignalState.UNKNOWN and sh is not None:
                    out.append(Diagnostic(f"{where}.shapes[{j}]", "unknown state carries a shape tag"))
                    break
        if rec.position is not None and not _finite(*rec.position):
            out.append(Diagnostic(f"{where}.position", "non-finite coordinate"))
    return out


# ------------------------------------------------------------- parse/serialize


def _require(obj: dict, key: str, where: str, types: type | tuple) -> Any:
    if key not in obj:
        raise ScenarioValidationError([Diagnostic(f"{where}{key}", "missing field")])
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool) and bool not in _as_tuple(types):
        raise ScenarioValidationError(
            [Diagnostic(f"{where}{key}", f"expected {_type_name(types)}, got {type(value).__name__}")]
        )
    return value


def _as_tuple(types) -> tuple:
    return types if isinstance(types, tuple) else (types,)


def _type_name(types) -> str:
    return "/".join(t.__name__ for t in _as_tuple(types))


def _ident(value: Any, where: str) -> str:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ScenarioValidationError([Diagnostic(where, "identifier must be a string or integer")])
    return str(value)


def _num(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioValidationError([Diagnostic(where, f"expected a number, got {value!r}")])
    return float(value)


def _parse_lane(obj: Any, k: int) -> LaneSegment:
    where = f"lanes[{k}]."
    if not isinstance(obj, dict):
        raise ScenarioValidationError([Diagnostic(f"lanes[{k}]", "expected an object")])
    lane_id = _ident(obj.get("id"), f"{where}id")
    pts = _require(obj, "polyline", where, list)
    polyline = []
    for j, p in enumerate(pts):
        if not isinstance(p, list) or len(p) != 2:
            raise ScenarioValidationError([Diagnostic(f"{where}polyline[{j}]", "expected [x, y]")])
        polyline.append((_num(p[0], f"{where}polyline[{j}]"), _num(p[1], f"{where}polyline[{j}]")))
    speed = obj.get("speed_limit_mph")
    return LaneSegment(
        id=lane_id,
        polyline=tuple(polyline),
        entry_lane_ids=tuple(_ident(v, f"{where}entry_lane_ids") for v in obj.get("entry_lane_ids") or []),
        exit_lane_ids=tuple(_ident(v, f"{where}exit_lane_ids") for v in obj.get("exit_lane_ids") or []),
        lane_kind=obj.get("lane_kind", "vehicle"),
        speed_limit_mph=None if speed is None else _num(speed, f"{where}speed_limit_mph"),
    )


_AGENT_COLUMNS = ("t", "x", "y", "velocity", "acceleration", "heading", "valid")


def _parse_agent(obj: Any, k: int) -> Agent:
    where = f"agents[{k}]."
    if not isinstance(obj, dict):
        raise ScenarioValidationError([Diagnostic(f"agents[{k}]", "expected an object")])
    agent_id = _ident(obj.get("id"), f"{where}id")
    cols = {c: _require(obj, c, where, list) for c in _AGENT_COLUMNS}
    n = len(cols["t"])
    for c, values in cols.items():
        if len(values) != n:
            raise ScenarioValidationError(
                [Diagnostic(f"{where}{c}", f"has {len(values)} entries, t has {n}")]
            )
    samples = []
    for j in range(n):
        t = cols["t"][j]
        if isinstance(t, bool) or not isinstance(t, int):
            raise ScenarioValidationError([Diagnostic(f"{where}t[{j}]", "tick must be an integer")])
        valid = cols["valid"][j]
        if not isinstance(valid, bool):
            raise ScenarioValidationError([Diagnostic(f"{where}valid[{j}]", "expected a boolean")])
        samples.append(
            TrajectorySample(
                t,
                _num(cols["x"][j], f"{where}x[{j}]"),
                _num(cols["y"][j], f"{where}y[{j}]"),
                _num(cols["velocity"][j], f"{where}velocity[{j}]"),
                _num(cols["acceleration"][j], f"{where}acceleration[{j}]"),
                _num(cols["heading"][j], f"{where}heading[{j}]"),
                valid,
            )
        )
    is_sdc = obj.get("is_sdc", False)
    if not isinstance(is_sdc, bool):
        raise ScenarioValidationError([Diagnostic(f"{where}is_sdc", "expected a boolean")])
    return Agent(agent_id, obj.get("kind", "vehicle"), is_sdc, tuple(samples))


def _parse_signal(obj: Any, k: int) -> RawSignalRecord:
    where = f"raw_signals[{k}]."
    if not isinstance(obj, dict):
        raise ScenarioValidationError([Diagnostic(f"raw_signals[{k}]", "expected an object")])
    lane_id = _ident(obj.get("lane_id"), f"{where}lane_id")
    codes = _require(obj, "states", where, list)
    try:
        states = tuple(SignalState.from_code(c) for c in codes)
    except (ValueError, TypeError) as exc:
        raise ScenarioValidationError([Diagnostic(f"{where}states", str(exc))]) from None
    shapes: tuple[Shape | None, ...] = ()
    if obj.get("shapes") is not None:
        try:
            shapes = tuple(None if c is None else Shape(c) for c in obj["shapes"])
        except (ValueError, TypeError) as exc:
            raise ScenarioValidationError([Diagnostic(f"{where}shapes", str(exc))]) from None
    pos = obj.get("position")
    position = None
    if pos is not None:
        if not isinstance(pos, list) or len(pos) != 2:
            raise ScenarioValidationError([Diagnostic(f"{where}position", "expected [x, y]")])
        position = (_num(pos[0], f"{where}position"), _num(pos[1], f"{where}position"))
    return RawSignalRecord(lane_id, states, shapes, position)


def parse_scenario(data: bytes | str) -> Scenario:
    """Decode one scenario document and validate it.

    Raises :class:`ScenarioParseError` (with ``offset``) for malformed JSON and
    :class:`ScenarioValidationError` (with the offending ``field``) otherwise.
    Unknown keys are ignored.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioParseError(f"invalid UTF-8: {exc.reason}", exc.start) from None
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ScenarioParseError(exc.msg, offset) from None
    if not isinstance(doc, dict):
        raise ScenarioValidationError([Diagnostic("<root>", "expected a JSON object")])

    scenario_id = _ident(doc.get("scenario_id"), "scenario_id")
    tick_count = _require(doc, "tick_count", "", int)
    tick_duration = _num(doc.get("tick_duration_s", 0.1), "tick_duration_s")
    lanes = tuple(_parse_lane(o, k) for k, o in enumerate(_require(doc, "lanes", "", list)))
    agents = tuple(_parse_agent(o, k) for k, o in enumerate(doc.get("agents") or []))
    signals = tuple(_parse_signal(o, k) for k, o in enumerate(doc.get("raw_signals") or []))
    scenario = Scenario(scenario_id, tick_count, tick_duration, lanes, agents, signals)
    diagnostics = validate_scenario(scenario)
    if diagnostics:
        raise ScenarioValidationError(diagnostics)
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    lanes = []
    for lane in s.lanes:
        d: dict[str, Any] = {
            "id": lane.id,
            "polyline": [list(p) for p in lane.polyline],
            "entry_lane_ids": list(lane.entry_lane_ids),
            "exit_lane_ids": list(lane.exit_lane_ids),
            "lane_kind": lane.lane_kind,
        }
        if lane.speed_limit_mph is not None:
            d["speed_limit_mph"] = lane.speed_limit_mph
        lanes.append(d)
    agents = []
    for agent in s.agents:
        d = {"id": agent.id, "kind": agent.kind, "is_sdc": agent.is_sdc}
        for j, col in enumerate(_AGENT_COLUMNS):
            d[col] = [smp[j] for smp in agent.samples]
        agents.append(d)
    signals = []
    for rec in s.raw_signals:
        d = {
            "lane_id": rec.lane_id,
            "states": [st.code for st in rec.states],
            "shapes": [None if sh is None else sh.value for sh in rec.shapes],
        }
        if rec.position is not None:
            d["position"] = list(rec.position)
        signals.append(d)
    return {
        "format_version": FORMAT_VERSION,
        "scenario_id": s.scenario_id,
        "tick_count": s.tick_count,
        "tick_duration_s": s.tick_duration,
        "lanes": lanes,
        "agents": agents,
        "raw_signals": signals,
    }


def serialize_scenario(s: Scenario) -> bytes:
    """Encode ``s`` deterministically (fixed key order, compact separators)."""
    text = json.dumps(scenario_to_dict(s), separators=(",", ":"), allow_nan=False)
    return text.encode("utf-8") + b"\n"


def read_scenario(path) -> Scenario:
    with open(path, "rb") as fh:
        return parse_scenario(fh.read())
