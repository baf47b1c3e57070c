"""Synthetic ground truth: geometry, signal plans, car-following, degradation.

The simulator is deliberately small: one intersection, vehicles on fixed
paths (inbound lane, connector, outbound lane), IDM car following with a
virtual obstacle at the stop line while the signal demands a stop, and a
yellow go/stop decision taken once per vehicle. Vehicles never pass the stop
line on red, so ground-truth signals give a violation rate of zero.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .fusion import generate_feasible_set
from .geometry import bezier, cumulative_length
from .scenario import Agent, LaneSegment, RawSignalRecord, Scenario, SignalState, TrajectorySample
from .temporal import classify_arrow
from .topology import LEFT, RIGHT, THROUGH, Movement, hcm_index

log = logging.getLogger(__name__)

G, Y, R, UNKNOWN = (int(s) for s in (SignalState.GREEN, SignalState.YELLOW, SignalState.RED, SignalState.UNKNOWN))
DT = 0.1  # s, simulation and sampling step
TEMPLATES = ("four-way", "T")

# approach slot -> travel heading in degrees
_SLOT_HEADING = {2: 0.0, 4: 90.0, 6: 180.0, 8: 270.0}
_TEMPLATE_TURNS = {
    "four-way": {s: (LEFT, THROUGH, RIGHT) for s in (2, 4, 6, 8)},
    "T": {2: (THROUGH, RIGHT), 6: (LEFT, THROUGH), 4: (LEFT, RIGHT)},
}
_TURN_DEG = {LEFT: 90.0, THROUGH: 0.0, RIGHT: -90.0}


# ------------------------------------------------------------------ configs


@dataclass(frozen=True)
class SimConfig:
    template: str = "four-way"
    lanes_per_approach: int = 1  # through lanes; a dedicated left lane is added where lefts exist
    demand: Mapping[str, float] = field(
        default_factory=lambda: {LEFT: 120.0, THROUGH: 400.0, RIGHT: 100.0}
    )  # veh/h per movement, by turn; integer-string keys override single movements
    duration_s: float = 600.0
    warmup_s: float = 60.0
    seed: int = 0
    speed_limit_mph: float = 35.0
    jitter_m: float = 0.0
    lane_width: float = 3.5
    inbound_length: float = 150.0
    outbound_length: float = 60.0

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unsupported template {self.template!r}; expected one of {TEMPLATES}")
        if not 1 <= self.lanes_per_approach <= 2:
            raise ValueError(f"lanes_per_approach must be 1 or 2, got {self.lanes_per_approach}")
        if any(v < 0 for v in self.demand.values()):
            raise ValueError("demand must be >= 0")
        if self.duration_s < 9.0:
            raise ValueError("duration must cover at least one 9 s segment")

    def movement_demand(self, index: int, turn: str) -> float:
        return float(self.demand.get(str(index), self.demand.get(turn, 0.0)))


@dataclass(frozen=True)
class DegradationConfig:
    p_miss: float = 0.8
    p_err: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("p_miss", "p_err"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class Phase:
    green: frozenset[int]
    duration_s: float = 0.0  # fixed plans
    min_green_s: float = 0.0  # actuated plans
    max_green_s: float = 0.0


@dataclass(frozen=True)
class SignalPlan:
    kind: str  # "fixed" | "actuated"
    phases: tuple[Phase, ...]
    yellow_s: float = 3.0
    extension_s: float = 2.0

    def __post_init__(self):
        if self.kind not in ("fixed", "actuated"):
            raise ValueError(f"plan kind must be fixed or actuated, got {self.kind!r}")
        if not self.phases:
            raise ValueError("plan has no phases")
        if self.yellow_s < 0:
            raise ValueError("yellow_s must be >= 0")
        for k, ph in enumerate(self.phases):
            if self.kind == "fixed" and ph.duration_s <= 0:
                raise ValueError(f"phase {k} (green {sorted(ph.green)}): duration must be > 0")
            if self.kind == "actuated" and not 0 < ph.min_green_s <= ph.max_green_s:
                raise ValueError(f"phase {k} (green {sorted(ph.green)}): need 0 < min_green <= max_green")

    @property
    def cycle_s(self) -> float | None:
        return sum(p.duration_s for p in self.phases) if self.kind == "fixed" else None

    def check_feasible(self, movements: Sequence[Movement]) -> None:
        """Raise ValueError naming the first phase that is not a feasible configuration."""
        allowed = {f.greens for f in generate_feasible_set(movements)}
        for k, ph in enumerate(self.phases):
            if ph.green not in allowed:
                raise ValueError(
                    f"phase {k} (green {sorted(ph.green)}) is not a feasible configuration for this intersection"
                )
        if self.kind == "fixed":
            for k, ph in enumerate(self.phases):
                nxt = self.phases[(k + 1) % len(self.phases)]
                if ph.green - nxt.green and ph.duration_s <= self.yellow_s:
                    raise ValueError(f"phase {k} (green {sorted(ph.green)}) is shorter than its yellow interval")

    def to_dict(self) -> dict:
        phases = []
        for ph in self.phases:
            d: dict[str, Any] = {"green": sorted(ph.green)}
            if self.kind == "fixed":
                d["duration_s"] = ph.duration_s
            else:
                d["min_green_s"] = ph.min_green_s
                d["max_green_s"] = ph.max_green_s
            phases.append(d)
        out: dict[str, Any] = {"kind": self.kind, "yellow_s": self.yellow_s, "phases": phases}
        if self.kind == "actuated":
            out["extension_s"] = self.extension_s
        return out


def plan_from_dict(doc: Mapping[str, Any]) -> SignalPlan:
    try:
        kind = doc["kind"]
        phases = tuple(
            Phase(
                frozenset(int(i) for i in p["green"]),
                float(p.get("duration_s", 0.0)),
                float(p.get("min_green_s", 0.0)),
                float(p.get("max_green_s", 0.0)),
            )
            for p in doc["phases"]
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed plan: {exc}") from exc
    return SignalPlan(kind, phases, float(doc.get("yellow_s", 3.0)), float(doc.get("extension_s", 2.0)))


def load_plan(path) -> SignalPlan:
    with open(path, encoding="utf-8") as fh:
        return plan_from_dict(json.load(fh))


def _fixed(*phases) -> SignalPlan:
    return SignalPlan("fixed", tuple(Phase(frozenset(g), float(d)) for g, d in phases))


def default_plans(template: str = "four-way") -> dict[str, SignalPlan]:
    """Two fixed-time plans and one actuated plan for a template."""
    if template == "T":
        return {
            "fixed_1": _fixed(({1, 6}, 10), ({2, 6}, 30), ({7}, 15)),
            "fixed_2": _fixed(({2, 6}, 28), ({1, 6}, 10), ({7}, 12)),
            "actuated": SignalPlan(
                "actuated",
                (
                    Phase(frozenset({1, 6}), min_green_s=5, max_green_s=12),
                    Phase(frozenset({2, 6}), min_green_s=10, max_green_s=35),
                    Phase(frozenset({7}), min_green_s=5, max_green_s=15),
                ),
            ),
        }
    return {
        "fixed_1": _fixed(({1, 5}, 12), ({2, 6}, 30), ({3, 7}, 10), ({4, 8}, 25)),
        "fixed_2": _fixed(({1, 6}, 10), ({2, 6}, 25), ({2, 5}, 10), ({3, 8}, 8), ({4, 8}, 22), ({4, 7}, 8)),
        "actuated": SignalPlan(
            "actuated",
            (
                Phase(frozenset({1, 5}), min_green_s=5, max_green_s=15),
                Phase(frozenset({2, 6}), min_green_s=10, max_green_s=40),
                Phase(frozenset({3, 7}), min_green_s=5, max_green_s=12),
                Phase(frozenset({4, 8}), min_green_s=8, max_green_s=30),
            ),
        ),
    }


# ----------------------------------------------------------------- geometry


@dataclass(frozen=True)
class Path:
    connector: str
    inbound: str
    movement: int
    points: np.ndarray
    cum: np.ndarray
    s_stop: float  # arc length of the stop line
    s_exit: float  # arc length where the connector ends

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def pose(self, s: float) -> tuple[float, float, float]:
        s = min(max(s, 0.0), self.length)
        k = int(np.searchsorted(self.cum, s, side="right")) - 1
        k = min(max(k, 0), len(self.points) - 2)
        p0, p1 = self.points[k], self.points[k + 1]
        seg = self.cum[k + 1] - self.cum[k]
        u = (s - self.cum[k]) / seg if seg > 0 else 0.0
        xy = p0 + u * (p1 - p0)
        return float(xy[0]), float(xy[1]), math.atan2(p1[1] - p0[1], p1[0] - p0[0])


@dataclass(frozen=True)
class SyntheticIntersection:
    template: str
    lanes: tuple[LaneSegment, ...]
    movements: tuple[Movement, ...]  # ground truth, HCM-numbered, rights included
    paths: tuple[Path, ...]
    right_source: Mapping[int, int]  # right-turn movement -> movement it follows

    def lane_map(self) -> dict[str, LaneSegment]:
        return {ln.id: ln for ln in self.lanes}


def _unit(deg: float) -> np.ndarray:
    r = math.radians(deg)
    return np.array([math.cos(r), math.sin(r)])


def _at(heading_deg: float, s: float, lateral_right: float) -> np.ndarray:
    u = _unit(heading_deg)
    right = np.array([u[1], -u[0]])
    return s * u + lateral_right * right


def _line_intersection(p, u, q, v) -> np.ndarray:
    # p + a u = q + b v
    m = np.array([[u[0], -v[0]], [u[1], -v[1]]])
    a, _ = np.linalg.solve(m, q - p)
    return p + a * u


def build_intersection(config: SimConfig = SimConfig(), rng: np.random.Generator | None = None) -> SyntheticIntersection:
    """Lanes and ground-truth movements for ``config.template``.

    With ``config.jitter_m > 0`` every vertex is displaced uniformly within
    +-jitter in x and y; lane end points shared by connected lanes move
    together so the graph stays connected.
    """
    if config.template not in TEMPLATES:
        raise ValueError(f"unsupported template {config.template!r}")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    turns_by_slot = _TEMPLATE_TURNS[config.template]
    n = config.lanes_per_approach
    w = config.lane_width
    S = (n + 1) * w + 4.0
    jit = config.jitter_m

    def jitter(p: np.ndarray) -> np.ndarray:
        return p + rng.uniform(-jit, jit, size=2) if jit > 0 else p

    # inbound lane layout per slot: list of (lane key, lateral, turns fed).
    # Approaches with a through movement get a dedicated left lane plus n
    # through lanes; with n > 1 the inner through lane also turns left (dual
    # left) and the outer one also turns right, or every one does where there
    # is no left (dual right). A stem without a through movement gets n
    # lanes each shared by left and right.
    # The shared lanes keep each intersection a single lane set.
    inbound_layout: dict[int, list[tuple[str, float, tuple[str, ...]]]] = {}
    for slot, turns in turns_by_slot.items():
        fed_by_lane: list[tuple[str, ...]] = []
        if THROUGH in turns:
            if LEFT in turns:
                fed_by_lane.append((LEFT,))
            for j in range(n):
                fed = [THROUGH]
                if j == 0 and n > 1 and LEFT in turns:
                    fed.insert(0, LEFT)
                if RIGHT in turns and (j == n - 1 or LEFT not in turns):
                    fed.append(RIGHT)
                fed_by_lane.append(tuple(fed))
        else:
            fed_by_lane.extend([tuple(t for t in (LEFT, RIGHT) if t in turns)] * n)
        inbound_layout[slot] = [(f"in_{slot}_{k}", (k + 0.5) * w, fed) for k, fed in enumerate(fed_by_lane)]

    # outbound roads: direction heading -> n lanes
    out_dirs = sorted({(_SLOT_HEADING[s] + _TURN_DEG[t]) % 360 for s, ts in turns_by_slot.items() for t in ts})
    nodes: dict[str, np.ndarray] = {}
    lanes: list[LaneSegment] = []
    polys: dict[str, np.ndarray] = {}
    limit = config.speed_limit_mph

    for slot, lanes_here in inbound_layout.items():
        h = _SLOT_HEADING[slot]
        for lid, lat, _ in lanes_here:
            ss = np.arange(-S - config.inbound_length, -S + 1e-9, 10.0)
            pts = np.array([_at(h, s, lat) for s in ss])
            nodes[lid] = jitter(pts[-1])
            pts = np.array([jitter(p) for p in pts[:-1]] + [nodes[lid]])
            polys[lid] = pts
    for hdir in out_dirs:
        for j in range(n):
            lid = f"out_{int(hdir)}_{j}"
            ss = np.arange(S, S + config.outbound_length + 1e-9, 10.0)
            pts = np.array([_at(hdir, s, (j + 0.5) * w) for s in ss])
            nodes[lid] = jitter(pts[0])
            pts = np.array([nodes[lid]] + [jitter(p) for p in pts[1:]])
            polys[lid] = pts

    entries: dict[str, list[str]] = {k: [] for k in polys}
    exits: dict[str, list[str]] = {k: [] for k in polys}
    connectors: list[tuple[str, int, str, str, str]] = []  # id, slot, turn, inbound, outbound
    for slot, lanes_here in inbound_layout.items():
        h = _SLOT_HEADING[slot]
        users = {t: [lid for lid, _, fed in lanes_here if t in fed] for t in (LEFT, THROUGH, RIGHT)}
        for lid, _, fed in lanes_here:
            for turn in fed:
                hdir = (h + _TURN_DEG[turn]) % 360
                # lefts fill outbound lanes from the inside, rights from the outside
                if turn == RIGHT:
                    j = n - len(users[RIGHT]) + users[RIGHT].index(lid)
                else:
                    j = min(users[turn].index(lid), n - 1)
                out_id = f"out_{int(hdir)}_{j}"
                cid = f"cx_{slot}_{turn}_{lid.rsplit('_', 1)[1]}"
                p0, p2 = nodes[lid], nodes[out_id]
                if turn == THROUGH:
                    inner = np.linspace(p0, p2, 6)[1:-1]
                else:
                    ctrl = _line_intersection(p0, _unit(h), p2, _unit(hdir))
                    inner = bezier(p0, ctrl, p2, n=12)[1:-1]
                pts = np.vstack([p0, np.array([jitter(p) for p in inner]), p2])
                polys[cid] = pts
                entries[cid] = [lid]
                exits[cid] = [out_id]
                exits[lid].append(cid)
                entries[out_id].append(cid)
                connectors.append((cid, slot, turn, lid, out_id))

    for lid in sorted(polys):
        lanes.append(
            LaneSegment(
                lid,
                tuple((float(x), float(y)) for x, y in polys[lid]),
                tuple(entries[lid]),
                tuple(exits[lid]),
                "vehicle",
                limit,
            )
        )

    street = {2: 0, 6: 0, 4: 1, 8: 1}
    movements = []
    for slot, turns in turns_by_slot.items():
        for turn in turns:
            cons = [c for c in connectors if c[1] == slot and c[2] == turn]
            fed = sorted({c[3] for c in cons})
            shared = sorted(lid for lid, _, f in inbound_layout[slot] if lid in fed and len(f) > 1)
            if turn == LEFT:
                fed = [lid for lid in fed if lid not in shared]
            movements.append(
                Movement(
                    index=hcm_index(slot, turn),
                    turn=turn,
                    approach=slot,
                    approach_heading=math.radians(_SLOT_HEADING[slot]),
                    lane_ids=tuple(sorted(c[0] for c in cons)),
                    approach_lane_ids=tuple(fed),
                    street_group=street[slot],
                    shared_lane_ids=tuple(shared),
                )
            )
    movements.sort(key=lambda m: m.index)

    right_source = {}
    for m in movements:
        if m.turn == RIGHT:
            same = {x.turn: x.index for x in movements if x.approach == m.approach and x.turn != RIGHT}
            right_source[m.index] = same.get(THROUGH, same.get(LEFT))

    paths = []
    for cid, slot, turn, lid, out_id in connectors:
        pin, pcx, pout = polys[lid], polys[cid], polys[out_id]
        pts = np.vstack([pin, pcx[1:], pout[1:]])
        cum = cumulative_length(pts)
        s_stop = float(cumulative_length(pin)[-1])
        s_exit = s_stop + float(cumulative_length(pcx)[-1])
        paths.append(Path(cid, lid, hcm_index(slot, turn), pts, cum, s_stop, s_exit))
    return SyntheticIntersection(config.template, tuple(lanes), tuple(movements), tuple(paths), right_source)


# -------------------------------------------------------------- controllers


class _Controller:
    """Per-tick movement states (columns follow ``movements``) for one plan."""

    def __init__(self, plan: SignalPlan, movements: Sequence[Movement], right_source: Mapping[int, int]):
        self.plan = plan
        self.index = [m.index for m in movements]
        self.col = {idx: k for k, idx in enumerate(self.index)}
        self.right_source = dict(right_source)
        self.yellow_ticks = int(round(plan.yellow_s / DT))
        self.tick = 0

    def _vector(self, greens: frozenset[int], yellows: frozenset[int]) -> np.ndarray:
        out = np.full(len(self.index), R, dtype=np.int8)
        for idx in greens:
            out[self.col[idx]] = G
        for idx in yellows:
            out[self.col[idx]] = Y
        for right, src in self.right_source.items():
            if src is not None:
                out[self.col[right]] = out[self.col[src]]
        return out

    def detect(self, movement: int) -> None:
        pass


class FixedController(_Controller):
    def __init__(self, plan, movements, right_source):
        super().__init__(plan, movements, right_source)
        self.ticks = [int(round(p.duration_s / DT)) for p in plan.phases]
        self.cycle = sum(self.ticks)
        self._remaining: dict[int, float] = {}

    def advance(self) -> np.ndarray:
        tc = self.tick % self.cycle
        self.tick += 1
        k = 0
        while tc >= self.ticks[k]:
            tc -= self.ticks[k]
            k += 1
        ph = self.plan.phases[k]
        nxt = self.plan.phases[(k + 1) % len(self.plan.phases)]
        ending = ph.green - nxt.green
        left = self.ticks[k] - tc
        yellow = frozenset(ending) if left <= self.yellow_ticks else frozenset()
        self._remaining = {m: left * DT for m in yellow}
        return self._vector(ph.green - yellow, yellow)

    def yellow_remaining(self, movement: int) -> float:
        return self._remaining.get(movement, 0.0)


class ActuatedController(_Controller):
    """Green extends while stop-bar crossings keep arriving within the extension
    time, bounded by min/max green; yellow is appended after the green."""

    def __init__(self, plan, movements, right_source):
        super().__init__(plan, movements, right_source)
        self.phase = 0
        self.green_ticks = 0
        self.yellow_left = 0
        self.last_detect = 0
        self.ext = int(round(plan.extension_s / DT))
        self._ending: frozenset[int] = frozenset()

    def _next(self) -> None:
        self.phase = (self.phase + 1) % len(self.plan.phases)
        self.green_ticks = 0
        self.last_detect = self.tick

    def advance(self) -> np.ndarray:
        ph = self.plan.phases[self.phase]
        if self.yellow_left == 0:
            min_t = int(round(ph.min_green_s / DT))
            max_t = int(round(ph.max_green_s / DT))
            gap_out = self.green_ticks >= min_t and self.tick - self.last_detect >= self.ext
            if self.green_ticks >= max_t or gap_out:
                nxt = self.plan.phases[(self.phase + 1) % len(self.plan.phases)]
                self._ending = frozenset(ph.green - nxt.green)
                if self._ending and self.yellow_ticks > 0:
                    self.yellow_left = self.yellow_ticks
                else:
                    self._next()
                    ph = self.plan.phases[self.phase]
        self.tick += 1
        if self.yellow_left > 0:
            vec = self._vector(ph.green - self._ending, self._ending)
            self.yellow_left -= 1
            if self.yellow_left == 0:
                self._next()
            return vec
        self.green_ticks += 1
        return self._vector(ph.green, frozenset())

    def yellow_remaining(self, movement: int) -> float:
        if self.yellow_left > 0 and movement in self._ending:
            return self.yellow_left * DT
        return 0.0

    def detect(self, movement: int) -> None:
        if self.yellow_left == 0 and movement in self.plan.phases[self.phase].green:
            self.last_detect = self.tick


def make_controller(plan: SignalPlan, inter: SyntheticIntersection) -> _Controller:
    plan.check_feasible(inter.movements)
    cls = FixedController if plan.kind == "fixed" else ActuatedController
    return cls(plan, inter.movements, inter.right_source)


# ------------------------------------------------------------- simulation


@dataclass(frozen=True)
class CarFollowing:
    a_max: float = 2.6  # m/s^2; a_max, b_comfort, b_hard are SUMO passenger-car defaults
    b_comfort: float = 4.5
    b_hard: float = 9.0
    headway: float = 1.2  # s (SUMO uses 1.0)
    s0: float = 2.0  # m, jam gap to a leader (SUMO uses 2.5)
    s0_stop: float = 1.0  # m, gap kept to the stop line
    length: float = 4.5
    turn_speed: float = 7.5  # m/s on turning connectors
    yellow_margin: float = 0.3  # s
    model: str = "krauss"  # or "idm"
    sigma: float = 0.5  # Krauss dawdling, SUMO default

    def __post_init__(self):
        if self.model not in ("krauss", "idm"):
            raise ValueError(f"car-following model must be krauss or idm, got {self.model!r}")


@dataclass
class _Vehicle:
    id: str
    path: Path
    turn: str
    v_free: float
    s: float
    v: float
    decision: str | None = None  # "go" | "stop" once yellow is seen
    ticks: list[int] = field(default_factory=list)
    rows: list[tuple[float, float, float, float, float]] = field(default_factory=list)


@dataclass(frozen=True)
class VehicleTrack:
    id: str
    movement: int
    ticks: np.ndarray  # recorded tick indices
    data: np.ndarray  # (n, 5): x, y, v, a, heading


@dataclass
class SimOutput:
    intersection: SyntheticIntersection
    plan: SignalPlan
    config: SimConfig
    truth: np.ndarray  # (ticks, movements) state codes, columns = intersection.movements
    vehicles: list[VehicleTrack]
    stop_line_clamps: int = 0

    @property
    def tick_count(self) -> int:
        return self.truth.shape[0]


def _idm(v, v0, gap, dv, cf: CarFollowing, s0: float) -> float:
    s_star = s0 + max(0.0, v * cf.headway + v * dv / (2 * math.sqrt(cf.a_max * cf.b_comfort)))
    return cf.a_max * (1 - (v / max(v0, 0.1)) ** 4 - (s_star / max(gap, 0.1)) ** 2)


def _krauss(v, v_lead, gap, cf: CarFollowing) -> float:
    """Safe speed for the next step behind a leader ``gap`` metres ahead (net of jam gap)."""
    gap = max(gap, 0.0)
    return v_lead + (gap - v_lead * cf.headway) / ((v + v_lead) / (2 * cf.b_comfort) + cf.headway)


def run_simulation(
    inter: SyntheticIntersection,
    plan: SignalPlan,
    config: SimConfig = SimConfig(),
    cf: CarFollowing = CarFollowing(),
) -> SimOutput:
    """Simulate ``warmup_s + duration_s`` seconds at 10 Hz; record after warm-up."""
    ctrl = make_controller(plan, inter)
    rng = np.random.default_rng([config.seed, 1])
    col = ctrl.col
    v_limit = config.speed_limit_mph * 0.44704
    warm = int(round(config.warmup_s / DT))
    total = warm + int(round(config.duration_s / DT)) + 1

    paths_by_move: dict[int, list[Path]] = {}
    for p in inter.paths:
        paths_by_move.setdefault(p.movement, []).append(p)
    rates = {
        m.index: config.movement_demand(m.index, m.turn) / 3600.0
        for m in inter.movements
        if m.index in paths_by_move
    }
    pending: dict[str, list[tuple[int, Path]]] = {}
    lanes: dict[str, list[_Vehicle]] = {}
    active: list[_Vehicle] = []
    done: list[_Vehicle] = []
    truth = np.empty((total - warm, len(inter.movements)), dtype=np.int8)
    clamps = 0
    counter = 0

    for k in range(total):
        states = ctrl.advance()
        if k >= warm:
            truth[k - warm] = states

        # arrivals, queued per inbound lane until the entry is clear
        for idx in sorted(rates):
            for _ in range(rng.poisson(rates[idx] * DT)):
                options = paths_by_move[idx]
                p = options[int(rng.integers(len(options)))]
                pending.setdefault(p.inbound, []).append((idx, p))
        for lane_id in sorted(pending):
            queue = pending[lane_id]
            if not queue:
                continue
            occupants = lanes.setdefault(lane_id, [])
            last = occupants[-1] if occupants else None
            if last is not None and last.s < cf.length + cf.s0 + 5.0:
                continue
            idx, p = queue.pop(0)
            v_free = v_limit * float(rng.uniform(0.9, 1.05))
            v0 = v_free if last is None or last.s > 60 else min(v_free, last.v)
            counter += 1
            veh = _Vehicle(f"v{counter}", p, inter_turn(inter, idx), v_free, 0.0, v0)
            occupants.append(veh)
            active.append(veh)

        # accelerations
        accel = {}
        for lane_id, occupants in lanes.items():
            for pos, veh in enumerate(occupants):
                p = veh.path
                state = int(states[col[p.movement]])
                v0 = cf.turn_speed if veh.turn != THROUGH and p.s_stop <= veh.s < p.s_exit else veh.v_free
                krauss = cf.model == "krauss"
                lead = occupants[pos - 1] if pos > 0 else None
                if krauss:
                    v_next = min(veh.v + cf.a_max * DT, v0)
                    if lead is not None:
                        v_next = min(v_next, _krauss(veh.v, lead.v, lead.s - veh.s - cf.length - cf.s0, cf))
                    a = (v_next - veh.v) / DT
                elif lead is not None:
                    a = _idm(veh.v, v0, lead.s - veh.s - cf.length, veh.v - lead.v, cf, cf.s0)
                else:
                    a = _idm(veh.v, v0, 1e9, 0.0, cf, cf.s0)
                if veh.turn != THROUGH and veh.s < p.s_stop and veh.v > cf.turn_speed:
                    dist = max(p.s_stop - veh.s, 0.5)
                    a = min(a, -(veh.v**2 - cf.turn_speed**2) / (2 * dist))
                if veh.s < p.s_stop:
                    if state == G:
                        veh.decision = None
                    elif state == Y and veh.decision is None:
                        d = p.s_stop - veh.s
                        remaining = ctrl.yellow_remaining(p.movement)
                        veh.decision = "go" if d / max(veh.v, 0.1) <= remaining - cf.yellow_margin else "stop"
                    must_stop = state == R or (state == Y and veh.decision == "stop")
                    if must_stop:
                        gap = p.s_stop - veh.s
                        if krauss:
                            a = min(a, (_krauss(veh.v, 0.0, gap - cf.s0_stop, cf) - veh.v) / DT)
                        else:
                            a = min(a, _idm(veh.v, v0, gap, veh.v, cf, cf.s0_stop))
                if krauss and cf.sigma > 0:
                    a -= cf.sigma * cf.a_max * float(rng.random())
                    a = max(a, -veh.v / DT)
                accel[veh.id] = min(max(a, -cf.b_hard), cf.a_max)

        # record and integrate
        for veh in active:
            a = accel[veh.id]
            if k >= warm:
                x, y, h = veh.path.pose(veh.s)
                veh.ticks.append(k - warm)
                veh.rows.append((x, y, veh.v, a, h))
            p = veh.path
            before = veh.s
            v_new = veh.v + a * DT
            if v_new < 0:
                # stops within the step
                veh.s += veh.v**2 / (2 * -a) if a < 0 else 0.0
                v_new = 0.0
            else:
                veh.s += (veh.v + v_new) / 2 * DT
            veh.v = v_new
            state = int(states[col[p.movement]])
            crossing = before < p.s_stop <= veh.s
            if crossing and (state == R or (state == Y and veh.decision == "stop")):
                veh.s, veh.v = p.s_stop - 0.05, 0.0
                clamps += 1
                crossing = False
            if crossing:
                ctrl.detect(p.movement)

        finished = [veh for veh in active if veh.s >= veh.path.length]
        if finished:
            gone = {veh.id for veh in finished}
            active = [veh for veh in active if veh.id not in gone]
            for lane_id in lanes:
                lanes[lane_id] = [veh for veh in lanes[lane_id] if veh.id not in gone]
            done.extend(finished)

    tracks = [
        VehicleTrack(veh.id, veh.path.movement, np.asarray(veh.ticks, dtype=int), np.asarray(veh.rows, dtype=float))
        for veh in sorted(done + active, key=lambda v: int(v.id[1:]))
        if veh.ticks
    ]
    if clamps:
        log.info("%d stop-line clamps in %s run", clamps, plan.kind)
    return SimOutput(inter, plan, config, truth, tracks, clamps)


def inter_turn(inter: SyntheticIntersection, index: int) -> str:
    for m in inter.movements:
        if m.index == index:
            return m.turn
    raise KeyError(index)


# ------------------------------------------------------- segmentation


@dataclass(frozen=True)
class SegmentPair:
    scenario: Scenario  # degraded observation
    truth: Scenario  # same content with complete ground-truth signals
    sdc_id: str | None
    observed: tuple[int, ...]  # movements on the SDC-facing approach


def _truth_shapes(inter: SyntheticIntersection, states: np.ndarray) -> dict[int, tuple]:
    """Per-movement shape series: protected lefts carry arrows."""
    col = {m.index: k for k, m in enumerate(inter.movements)}
    out = {}
    for m in inter.movements:
        series = states[:, col[m.index]]
        opp = None
        if m.turn == LEFT:
            for o in inter.movements:
                if o.turn == THROUGH and o.street_group == m.street_group and o.approach != m.approach:
                    opp = states[:, col[o.index]]
        out[m.index] = tuple(
            classify_arrow(
                int(series[t]),
                m.turn == LEFT,
                {G, Y, R},
                int(opp[t]) if opp is not None else None,
            )
            for t in range(len(series))
        )
    return out


def _records(inter: SyntheticIntersection, states: np.ndarray, shapes: dict[int, tuple], keep: set[int]):
    col = {m.index: k for k, m in enumerate(inter.movements)}
    lane_map = inter.lane_map()
    out = []
    for m in inter.movements:
        if m.index not in keep:
            continue
        series = tuple(SignalState(int(s)) for s in states[:, col[m.index]])
        shp = tuple(None if s == SignalState.UNKNOWN else sh for s, sh in zip(series, shapes[m.index]))
        for lid in m.lane_ids:
            start = lane_map[lid].start
            out.append(RawSignalRecord(lid, series, shp, (float(start[0]), float(start[1]))))
    return sorted(out, key=lambda r: r.lane_id)


def segment_and_degrade(
    sim: SimOutput,
    degradation: DegradationConfig = DegradationConfig(),
    segment_s: float = 9.0,
    prefix: str = "seg",
) -> list[SegmentPair]:
    """Cut the run into ``segment_s`` windows (T = segment_s/dt + 1 samples each) and
    degrade the signals of each as the observation model prescribes."""
    inter = sim.intersection
    seg_ticks = int(round(segment_s / DT))
    T = seg_ticks + 1
    n_seg = (sim.tick_count - 1) // seg_ticks
    if n_seg < 1:
        raise ValueError("simulation shorter than one segment")
    rng = np.random.default_rng([degradation.seed, 2])
    moves = [m.index for m in inter.movements]
    approach_of = {m.index: m.approach for m in inter.movements}
    approaches = sorted({m.approach for m in inter.movements})
    out = []
    for k in range(n_seg):
        lo, hi = k * seg_ticks, k * seg_ticks + seg_ticks
        truth = sim.truth[lo : hi + 1]
        agents = []
        present = []
        for tr in sim.vehicles:
            sel = (tr.ticks >= lo) & (tr.ticks <= hi)
            if not sel.any():
                continue
            present.append(tr)
        sdc = present[int(rng.integers(len(present)))] if present else None
        sdc_approach = approach_of[sdc.movement] if sdc is not None else approaches[int(rng.integers(len(approaches)))]
        for tr in present:
            sel = (tr.ticks >= lo) & (tr.ticks <= hi)
            rows = {int(t) - lo: r for t, r in zip(tr.ticks[sel], tr.data[sel])}
            samples = []
            for t in range(T):
                r = rows.get(t)
                if r is None:
                    samples.append(TrajectorySample(t + 1, 0.0, 0.0, 0.0, 0.0, 0.0, False))
                else:
                    samples.append(
                        TrajectorySample(t + 1, float(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]), True)
                    )
            agents.append(Agent(tr.id, "vehicle", sdc is not None and tr.id == sdc.id, tuple(samples)))

        observed = tuple(i for i in moves if approach_of[i] == sdc_approach)
        keep = set(observed)
        for i in moves:
            if i not in keep and rng.random() >= degradation.p_miss:
                keep.add(i)
        degraded = truth.copy()
        flips = rng.random(degraded.shape) < degradation.p_err
        others = rng.integers(0, 2, size=degraded.shape)
        for (t, c) in zip(*np.nonzero(flips)):
            if moves[c] not in keep:
                continue
            alternatives = [s for s in (G, Y, R) if s != degraded[t, c]]
            degraded[t, c] = alternatives[others[t, c]]
        shapes = _truth_shapes(inter, truth)
        sid = f"{prefix}_{k:03d}"
        base = dict(scenario_id=sid, tick_count=T, tick_duration=DT, lanes=inter.lanes, agents=tuple(agents))
        out.append(
            SegmentPair(
                Scenario(**base, raw_signals=tuple(_records(inter, degraded, shapes, keep))),
                Scenario(**base, raw_signals=tuple(_records(inter, truth, shapes, set(moves)))),
                sdc.id if sdc is not None else None,
                observed,
            )
        )
    return out
