"""Intersection structure from the lane graph.

Lanes inside an intersection show up as diverging pairs (same start, different
ends) and merging pairs (different starts, same end). Pairs are unioned into
lane sets; a set with any signal record is a signalized intersection. Stop
lines sit at the start points of the set's lanes, grouped by approach, and
each inside lane becomes part of a left, through or right movement.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .config import TopologyParams
from .geometry import (
    angle_diff,
    circular_mean,
    end_heading,
    project,
    start_heading,
    wrap_angle,
)
from .scenario import Agent, LaneSegment, RawSignalRecord, Scenario

log = logging.getLogger(__name__)

LEFT, THROUGH, RIGHT = "left", "through", "right"

# NEMA-style numbering. Slot "2" is the main-street approach heading closest
# to east; "4" is 90 degrees counter-clockwise from it.
_THROUGH_INDEX = {2: 2, 4: 4, 6: 6, 8: 8}
_LEFT_INDEX = {2: 5, 4: 7, 6: 1, 8: 3}
_RIGHT_INDEX = {2: 9, 4: 10, 6: 11, 8: 12}


def hcm_index(slot: int, turn: str) -> int:
    """Movement number for a turn from approach slot 2, 4, 6 or 8."""
    return {LEFT: _LEFT_INDEX, THROUGH: _THROUGH_INDEX, RIGHT: _RIGHT_INDEX}[turn][slot]


class UnsupportedLayoutError(ValueError):
    pass


class UnionFind:
    """Disjoint sets over hashable items, with path halving and union by size."""

    def __init__(self, items: Iterable = ()):
        self._parent: dict = {}
        self._size: dict = {}
        for item in items:
            self.add(item)

    def add(self, item) -> None:
        if item not in self._parent:
            self._parent[item] = item
            self._size[item] = 1

    def find(self, item):
        self.add(item)
        parent = self._parent
        while parent[item] != item:
            parent[item] = parent[parent[item]]
            item = parent[item]
        return item

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]

    def groups(self) -> list[set]:
        out: dict = defaultdict(set)
        for item in self._parent:
            out[self.find(item)].add(item)
        return list(out.values())


@dataclass(frozen=True)
class LanePair:
    lane_a: str
    lane_b: str
    kind: str  # "diverge" | "merge"
    source: str  # "geometric" | "connectivity"

    def __post_init__(self):
        if self.lane_a == self.lane_b:
            raise ValueError("a lane cannot pair with itself")


@dataclass(frozen=True)
class StopLine:
    approach: int
    point: tuple[float, float]
    heading: float
    lane_ids: tuple[str, ...]  # inside lanes starting at this stop line
    approach_lane_ids: tuple[str, ...]  # upstream lanes feeding them


@dataclass(frozen=True)
class Movement:
    index: int
    turn: str
    approach: int
    approach_heading: float
    lane_ids: tuple[str, ...]
    approach_lane_ids: tuple[str, ...]
    street_group: int
    shared_lane_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Intersection:
    id: int
    member_lane_ids: frozenset[str]
    signalized: bool
    stop_lines: tuple[StopLine, ...] = ()
    movements: tuple[Movement, ...] = ()

    @property
    def non_right(self) -> tuple[Movement, ...]:
        return tuple(m for m in self.movements if m.turn != RIGHT)

    def movement(self, index: int) -> Movement:
        for m in self.movements:
            if m.index == index:
                return m
        raise KeyError(index)


@dataclass(frozen=True)
class VehicleMovementTrace:
    agent_id: str
    movement: int
    ticks: np.ndarray  # 1-based
    d: np.ndarray  # signed metres to the stop line, negative once past it
    a: np.ndarray
    v: np.ndarray


# ------------------------------------------------------------------- pairing


def _ordered(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def pair_lanes_geometric(
    lanes: Sequence[LaneSegment], params: TopologyParams = TopologyParams()
) -> list[LanePair]:
    usable = []
    for lane in lanes:
        if len(lane.polyline) < 2 or lane.length < 1e-6:
            log.warning("lane %s has a degenerate polyline, skipped for pairing", lane.id)
            continue
        usable.append(lane)
    if len(usable) < 2:
        return []
    starts = np.array([ln.start for ln in usable])
    ends = np.array([ln.end for ln in usable])
    h_start = np.array([start_heading(ln.points) for ln in usable])
    h_end = np.array([end_heading(ln.points) for ln in usable])
    d_start = np.linalg.norm(starts[:, None] - starts[None], axis=2)
    d_end = np.linalg.norm(ends[:, None] - ends[None], axis=2)
    min_angle = math.radians(params.pair_angle_deg)
    diverge = (
        (d_start <= params.eps_start)
        & (d_end >= params.eps_end)
        & (angle_diff(h_end[:, None], h_end[None]) >= min_angle)
    )
    merge = (
        (d_end <= params.eps_start)
        & (d_start >= params.eps_end)
        & (angle_diff(h_start[:, None], h_start[None]) >= min_angle)
    )
    pairs = []
    for kind, mask in (("diverge", diverge), ("merge", merge)):
        for i, j in zip(*np.nonzero(np.triu(mask, k=1))):
            a, b = _ordered(usable[i].id, usable[j].id)
            pairs.append(LanePair(a, b, kind, "geometric"))
    return pairs


def pair_lanes_connectivity(lanes: Sequence[LaneSegment]) -> list[LanePair]:
    by_entry: dict[str, list[str]] = defaultdict(list)
    by_exit: dict[str, list[str]] = defaultdict(list)
    for lane in lanes:
        for e in lane.entry_lane_ids:
            by_entry[e].append(lane.id)
        for e in lane.exit_lane_ids:
            by_exit[e].append(lane.id)
    seen = set()
    pairs = []
    for kind, table in (("diverge", by_entry), ("merge", by_exit)):
        for key in sorted(table):
            ids = sorted(set(table[key]))
            for i in range(len(ids)):
                for j in range(i + 1, len(ids)):
                    if (ids[i], ids[j], kind) not in seen:
                        seen.add((ids[i], ids[j], kind))
                        pairs.append(LanePair(ids[i], ids[j], kind, "connectivity"))
    return pairs


def group_lane_sets(pairs: Iterable[LanePair]) -> list[frozenset[str]]:
    """Connected components of the pair graph, largest first then by smallest id."""
    uf = UnionFind()
    for p in pairs:
        uf.union(p.lane_a, p.lane_b)
    sets = [frozenset(g) for g in uf.groups() if len(g) > 1]
    return sorted(sets, key=lambda g: (-len(g), min(g)))


def detect_signalized(
    sets: Sequence[frozenset[str]], raw_signals: Sequence[RawSignalRecord]
) -> list[Intersection]:
    with_signal = {rec.lane_id for rec in raw_signals}
    return [
        Intersection(id=k, member_lane_ids=s, signalized=bool(s & with_signal))
        for k, s in enumerate(sets)
    ]


# ----------------------------------------------------------------- approaches


def _entry_lanes(lane: LaneSegment, lane_map: dict[str, LaneSegment], members) -> list[LaneSegment]:
    return [lane_map[e] for e in lane.entry_lane_ids if e in lane_map and e not in members]


def _incoming_heading(lane: LaneSegment, lane_map, members) -> float:
    entries = _entry_lanes(lane, lane_map, members)
    if entries:
        return circular_mean([end_heading(e.points, min(20.0, e.length / 2)) for e in entries])
    return start_heading(lane.points, min(5.0, lane.length / 3))


def _vehicle_members(intersection: Intersection, lane_map) -> list[LaneSegment]:
    return [
        lane_map[i]
        for i in sorted(intersection.member_lane_ids)
        if i in lane_map and lane_map[i].lane_kind == "vehicle"
    ]


def compute_stop_lines(
    intersection: Intersection,
    lanes: Sequence[LaneSegment] | dict[str, LaneSegment],
    params: TopologyParams = TopologyParams(),
) -> list[StopLine]:
    """One stop line per approach, located at the clustered lane start points."""
    lane_map = lanes if isinstance(lanes, dict) else {ln.id: ln for ln in lanes}
    members = intersection.member_lane_ids
    clusters: list[dict] = []
    tol = math.radians(params.approach_cluster_deg)
    for lane in _vehicle_members(intersection, lane_map):
        h = _incoming_heading(lane, lane_map, members)
        for c in clusters:
            centre = np.mean(c["starts"], axis=0)
            if (
                angle_diff(h, circular_mean(c["headings"])) <= tol
                and np.linalg.norm(lane.start - centre) <= params.approach_cluster_dist
            ):
                c["lanes"].append(lane)
                c["headings"].append(h)
                c["starts"].append(lane.start)
                break
        else:
            clusters.append({"lanes": [lane], "headings": [h], "starts": [lane.start]})

    stop_lines = []
    for c in clusters:
        good = [ln for ln in c["lanes"] if ln.length >= 0.5]
        if not good:
            log.warning(
                "intersection %s: approach of degenerate lane(s) %s dropped",
                intersection.id,
                [ln.id for ln in c["lanes"]],
            )
            continue
        feeders = sorted({e.id for ln in good for e in _entry_lanes(ln, lane_map, members)})
        if feeders:
            heading = circular_mean(
                [end_heading(lane_map[f].points, min(20.0, lane_map[f].length / 2)) for f in feeders]
            )
        else:
            heading = circular_mean(c["headings"])
        point = np.mean([ln.start for ln in good], axis=0)
        stop_lines.append(
            StopLine(
                approach=0,
                point=(float(point[0]), float(point[1])),
                heading=heading,
                lane_ids=tuple(sorted(ln.id for ln in good)),
                approach_lane_ids=tuple(feeders),
            )
        )
    stop_lines.sort(key=lambda sl: (float(wrap_angle(sl.heading)) % (2 * math.pi), sl.point))
    return [replace(sl, approach=k) for k, sl in enumerate(stop_lines)]


# ------------------------------------------------------------------ movements


def classify_turn(
    lane: LaneSegment,
    lane_map: dict[str, LaneSegment],
    members=frozenset(),
    params: TopologyParams = TopologyParams(),
) -> str:
    """Left/through/right from the signed heading change across the lane."""
    h0 = _incoming_heading(lane, lane_map, members)
    h1 = end_heading(lane.points, min(5.0, lane.length / 3))
    delta = math.degrees(float(wrap_angle(h1 - h0)))
    if abs(delta) <= params.turn_deg:
        return THROUGH
    turn = LEFT if delta > 0 else RIGHT
    if abs(delta) >= params.turn_vote_deg or abs(delta) > 150:
        return turn
    exits = [lane_map[e] for e in lane.exit_lane_ids if e in lane_map]
    mid = (params.turn_deg + params.turn_vote_deg) / 2
    if not exits:
        return turn if abs(delta) >= mid else THROUGH
    votes = [
        abs(math.degrees(float(wrap_angle(start_heading(e.points, min(20.0, e.length / 2)) - h0)))) >= mid
        for e in exits
    ]
    return turn if sum(votes) * 2 >= len(votes) else THROUGH


def _pair_streets(stop_lines: Sequence[StopLine], tol: float) -> list[list[StopLine]]:
    candidates = []
    for i in range(len(stop_lines)):
        for j in range(i + 1, len(stop_lines)):
            off = abs(math.pi - float(angle_diff(stop_lines[i].heading, stop_lines[j].heading)))
            if off <= tol:
                candidates.append((off, i, j))
    used: set[int] = set()
    streets = []
    for _, i, j in sorted(candidates):
        if i in used or j in used:
            continue
        used |= {i, j}
        streets.append([stop_lines[i], stop_lines[j]])
    streets.extend([sl] for k, sl in enumerate(stop_lines) if k not in used)
    return streets


def _assign_slots(streets, lane_count) -> dict[int, int] | None:
    """Map approach -> NEMA slot (2, 4, 6, 8), or None when not derivable."""
    if len(streets) > 2:
        return None

    def axis_offset(street):
        return min(float(angle_diff(street[0].heading, 0.0)), float(angle_diff(street[0].heading, math.pi)))

    order = sorted(
        streets,
        key=lambda st: (-len(st), -sum(lane_count[sl.approach] for sl in st), axis_offset(st)),
    )
    main = order[0]
    slots: dict[int, int] = {}
    ref = min(main, key=lambda sl: float(angle_diff(sl.heading, 0.0)))
    if float(angle_diff(ref.heading, 0.0)) <= math.pi / 2:
        slots[ref.approach] = 2
        h2 = ref.heading
    else:
        slots[ref.approach] = 6
        h2 = ref.heading + math.pi
    for sl in main:
        if sl is not ref:
            slots[sl.approach] = 6 if slots[ref.approach] == 2 else 2
    if len(order) == 2:
        for sl in order[1]:
            rel = float(wrap_angle(sl.heading - h2))
            if abs(rel - math.pi / 2) <= math.pi / 4:
                slots[sl.approach] = 4
            elif abs(rel + math.pi / 2) <= math.pi / 4:
                slots[sl.approach] = 8
            else:
                return None
        if len(set(slots.values())) != len(slots):
            return None
    return slots


def build_movements(
    intersection: Intersection,
    lanes: Sequence[LaneSegment] | dict[str, LaneSegment],
    params: TopologyParams = TopologyParams(),
) -> list[Movement]:
    """Group inside lanes into movements and number them.

    Raises :class:`UnsupportedLayoutError` for more than ``max_approaches``
    approaches.
    """
    lane_map = lanes if isinstance(lanes, dict) else {ln.id: ln for ln in lanes}
    stop_lines = intersection.stop_lines
    if len(stop_lines) > params.max_approaches:
        raise UnsupportedLayoutError(
            f"intersection {intersection.id} has {len(stop_lines)} approaches"
        )
    members = intersection.member_lane_ids
    turns = {
        lid: classify_turn(lane_map[lid], lane_map, members, params)
        for sl in stop_lines
        for lid in sl.lane_ids
    }

    # per approach: turn -> inside lanes, and approach lane -> turns fed
    groups: dict[tuple[int, str], list[str]] = defaultdict(list)
    feeds: dict[str, set[str]] = defaultdict(set)
    feeders_of: dict[str, list[str]] = {}
    for sl in stop_lines:
        for lid in sl.lane_ids:
            groups[(sl.approach, turns[lid])].append(lid)
            entries = [e.id for e in _entry_lanes(lane_map[lid], lane_map, members)]
            feeders_of[lid] = entries
            for e in entries:
                feeds[e].add(turns[lid])

    lane_count = {sl.approach: len(sl.approach_lane_ids) or len(sl.lane_ids) for sl in stop_lines}
    streets = _pair_streets(stop_lines, math.radians(params.opposing_tol_deg))
    street_of = {sl.approach: k for k, st in enumerate(streets) for sl in st}
    slots = _assign_slots(streets, lane_count)

    movements = []
    for sl in stop_lines:
        for turn in (LEFT, THROUGH, RIGHT):
            lids = sorted(groups.get((sl.approach, turn), []))
            if not lids:
                continue
            fed = sorted({e for lid in lids for e in feeders_of[lid]})
            shared = [e for e in fed if len(feeds[e]) > 1]
            if turn == LEFT:
                # through keeps approach lanes it shares with the left turn
                fed = [e for e in fed if THROUGH not in feeds[e]]
            movements.append(
                dict(
                    turn=turn,
                    approach=sl.approach,
                    approach_heading=sl.heading,
                    lane_ids=tuple(lids),
                    approach_lane_ids=tuple(fed),
                    street_group=street_of[sl.approach],
                    shared_lane_ids=tuple(shared),
                )
            )

    if slots is not None:
        table = {LEFT: _LEFT_INDEX, THROUGH: _THROUGH_INDEX, RIGHT: _RIGHT_INDEX}
        for m in movements:
            m["index"] = table[m["turn"]][slots[m["approach"]]]
    else:
        ordered = [m for m in movements if m["turn"] != RIGHT] + [m for m in movements if m["turn"] == RIGHT]
        for k, m in enumerate(ordered, start=1):
            m["index"] = k
    return sorted((Movement(**m) for m in movements), key=lambda m: m.index)


def opposing_through(intersection: Intersection, movement: Movement) -> Movement | None:
    for m in intersection.movements:
        if (
            m.turn == THROUGH
            and m.street_group == movement.street_group
            and m.approach != movement.approach
        ):
            return m
    return None


def right_turn_source(intersection: Intersection, movement: Movement) -> Movement | None:
    """The non-right movement whose state a right-turn movement follows."""
    same = [m for m in intersection.movements if m.approach == movement.approach and m.turn != RIGHT]
    for turn in (THROUGH, LEFT):
        for m in same:
            if m.turn == turn:
                return m
    for m in intersection.movements:
        if m.street_group == movement.street_group and m.turn == THROUGH:
            return m
    return None


# ------------------------------------------------------------------- tracing


@dataclass
class _ChainLane:
    lane: LaneSegment
    offset: float  # distance from this lane's end to the stop line
    feeds: set[str] = field(default_factory=set)  # inside lanes reachable downstream


def _approach_chain(intersection, lane_map, reach: float) -> dict[str, _ChainLane]:
    members = intersection.member_lane_ids
    upstream: dict[str, set[str]] = defaultdict(set)
    for lane in lane_map.values():
        for e in lane.entry_lane_ids:
            upstream[lane.id].add(e)
        for x in lane.exit_lane_ids:
            upstream[x].add(lane.id)
    chain: dict[str, _ChainLane] = {}
    queue: deque[str] = deque()
    for sl in intersection.stop_lines:
        for lid in sl.lane_ids:
            for e in _entry_lanes(lane_map[lid], lane_map, members):
                c = chain.setdefault(e.id, _ChainLane(e, 0.0))
                c.feeds.add(lid)
                queue.append(e.id)
    while queue:
        cur = chain[queue.popleft()]
        base = cur.offset + cur.lane.length
        if base >= reach:
            continue
        for up in sorted(upstream.get(cur.lane.id, ())):
            if up in members or up not in lane_map:
                continue
            known = chain.get(up)
            if known is None or base < known.offset or not cur.feeds <= known.feeds:
                if known is None:
                    known = chain[up] = _ChainLane(lane_map[up], base)
                known.offset = min(known.offset, base)
                known.feeds |= cur.feeds
                queue.append(up)
    return chain


def trace_vehicles(
    intersection: Intersection,
    scenario: Scenario,
    params: TopologyParams = TopologyParams(),
    d_min: float = -8.0,
    diagnostics: list[str] | None = None,
) -> list[VehicleMovementTrace]:
    """Assign vehicles to non-right movements and measure distance to the stop line."""
    lane_map = scenario.lane_map
    move_of: dict[str, Movement] = {}
    for m in intersection.movements:
        for lid in m.lane_ids:
            move_of[lid] = m
    inside = [lane_map[lid] for lid in sorted(move_of)]
    if not inside:
        return []
    chain = _approach_chain(intersection, lane_map, params.upstream_reach)
    exit_of: dict[str, list[str]] = defaultdict(list)  # exit lane -> inside lanes
    for lane in inside:
        for x in lane.exit_lane_ids:
            if x in lane_map and x not in intersection.member_lane_ids:
                exit_of[x].append(lane.id)
    candidates = (
        [("inside", ln) for ln in inside]
        + [("chain", chain[k].lane) for k in sorted(chain)]
        + [("exit", lane_map[k]) for k in sorted(exit_of)]
    )
    boxes = np.array([np.concatenate([ln.points.min(axis=0), ln.points.max(axis=0)]) for _, ln in candidates])
    boxes[:, :2] -= params.lateral_tol
    boxes[:, 2:] += params.lateral_tol
    lo = boxes[:, :2].min(axis=0) - 5.0
    hi = boxes[:, 2:].max(axis=0) + 5.0
    head_tol = math.radians(params.heading_tol_deg)
    diag = diagnostics if diagnostics is not None else []

    traces = []
    for agent in scenario.agents:
        if agent.kind != "vehicle" or not agent.samples:
            continue
        tab = agent.table
        tab = tab[tab[:, 6] > 0]
        if len(tab) == 0:
            continue
        xy = tab[:, 1:3]
        if not np.any(np.all((xy >= lo) & (xy <= hi), axis=1)):
            continue
        a_lo, a_hi = xy.min(axis=0), xy.max(axis=0)
        near = np.all((boxes[:, :2] <= a_hi) & (boxes[:, 2:] >= a_lo), axis=1)
        matches = {}
        for k in np.flatnonzero(near):
            cat, lane = candidates[k]
            pr = project(lane.points, xy)
            ok = pr.inside & (pr.lateral <= params.lateral_tol) & (angle_diff(pr.heading, tab[:, 5]) <= head_tol)
            if ok.any():
                matches[lane.id] = (cat, pr, ok)
        if not matches:
            continue
        result = _assign(agent, matches, move_of, chain, exit_of, lane_map)
        if result is None:
            continue
        if isinstance(result, str):
            diag.append(f"intersection {intersection.id}: vehicle {agent.id} {result}")
            continue
        movement, inside_id, chain_ids = result
        d = _distance_series(matches, inside_id, chain_ids, chain, exit_of, lane_map, len(tab))
        keep = ~np.isnan(d) & (d >= d_min)
        if not keep.any():
            continue
        traces.append(
            VehicleMovementTrace(
                agent_id=agent.id,
                movement=movement.index,
                ticks=tab[keep, 0].astype(int),
                d=d[keep],
                a=tab[keep, 4],
                v=tab[keep, 3],
            )
        )
    return traces


def _assign(agent: Agent, matches, move_of, chain, exit_of, lane_map):
    """Pick the movement a vehicle follows. Returns None to skip silently,
    a string for a logged exclusion, or (movement, inside lane id, chain ids)."""
    exits_used = {lid for lid, (cat, _, _) in matches.items() if cat == "exit"}
    chain_used = [lid for lid, (cat, _, _) in matches.items() if cat == "chain"]
    # rank inside lanes by metres travelled along them; a fraction would favour
    # a short turn connector sharing its first metres with a long through lane
    travelled, coverage = {}, {}
    for lid, (cat, pr, ok) in matches.items():
        if cat == "inside":
            travelled[lid] = float(pr.s[ok].max())
            coverage[lid] = travelled[lid] / max(lane_map[lid].length, 1e-6)
    fed_inside = set().union(*(chain[c].feeds for c in chain_used)) if chain_used else set()
    options = dict(travelled)
    if exits_used:
        via_exit = {lid for x in exits_used for lid in exit_of[x]}
        narrowed = {k: v for k, v in options.items() if k in via_exit}
        if narrowed:
            options = narrowed
        elif via_exit and not options:
            # crossed the box between samples
            options = {lid: 0.0 for lid in via_exit}
    if fed_inside and options:
        narrowed = {k: v for k, v in options.items() if k in fed_inside}
        options = narrowed or options
    entered = None
    if options:
        best = max(options.values())
        top = sorted(k for k, v in options.items() if v >= best - 1e-9)
        if coverage.get(top[0], 0.0) >= 0.3 or (exits_used and len(top) == 1):
            if len({move_of[k].index for k in top}) > 1:
                return "matches several inside lanes equally, excluded"
            entered = top[0]
    if entered is not None:
        movement = move_of[entered]
        if movement.turn == RIGHT:
            return None
        chain_ids = {c for c in chain_used if entered in chain[c].feeds}
        return movement, entered, chain_ids
    if not chain_used:
        return None
    # still upstream: decide from the most downstream approach lane seen
    nearest = min(chain_used, key=lambda c: (chain[c].offset, c))
    moves = {move_of[lid].index: move_of[lid] for lid in chain[nearest].feeds if move_of[lid].turn != RIGHT}
    if not moves:
        return None
    if len(moves) > 1:
        through = [m for m in moves.values() if m.turn == THROUGH]
        others = [m for m in moves.values() if m.turn != THROUGH]
        if len(through) == 1 and not others:
            moves = {through[0].index: through[0]}
        else:
            return f"on shared approach lane {nearest} feeding movements {sorted(moves)}, excluded"
    movement = next(iter(moves.values()))
    chain_ids = {c for c in chain_used if chain[c].feeds & set(movement.lane_ids)}
    return movement, None, chain_ids


def _distance_series(matches, inside_id, chain_ids, chain, exit_of, lane_map, n) -> np.ndarray:
    d = np.full(n, np.nan)
    best_lat = np.full(n, np.inf)

    def offer(values, lateral, ok):
        better = ok & (lateral < best_lat)
        d[better] = values[better]
        best_lat[better] = lateral[better]

    for c in chain_ids:
        _, pr, ok = matches[c]
        offer(chain[c].offset + chain[c].lane.length - pr.s, pr.lateral, ok)
    if inside_id is not None:
        if inside_id in matches:
            _, pr, ok = matches[inside_id]
            offer(-pr.s, pr.lateral, ok)
        length = lane_map[inside_id].length
        for x, owners in exit_of.items():
            if inside_id in owners and x in matches:
                _, pr, ok = matches[x]
                offer(-(length + pr.s), pr.lateral, ok)
    return d


# ----------------------------------------------------------------- top level


def identify_intersections(
    scenario: Scenario,
    params: TopologyParams = TopologyParams(),
    diagnostics: list[str] | None = None,
) -> list[Intersection]:
    """Full topology pass. Signalized intersections come back with stop lines
    and movements; unsupported layouts are returned with no movements and a
    diagnostic."""
    lanes = scenario.lanes
    pairs = pair_lanes_geometric(lanes, params) + pair_lanes_connectivity(lanes)
    sets = group_lane_sets(pairs)
    out = []
    for inter in detect_signalized(sets, scenario.raw_signals):
        if not inter.signalized:
            out.append(inter)
            continue
        inter = replace(inter, stop_lines=tuple(compute_stop_lines(inter, scenario.lane_map, params)))
        try:
            inter = replace(inter, movements=tuple(build_movements(inter, scenario.lane_map, params)))
        except UnsupportedLayoutError as exc:
            if diagnostics is not None:
                diagnostics.append(f"unsupported layout: {exc}")
            log.info("skipping: %s", exc)
        out.append(inter)
    return out


def debug_geojson(intersection: Intersection, lane_map: dict[str, LaneSegment]) -> dict:
    """GeoJSON-like FeatureCollection of stop lines and movement polylines."""
    features = []
    for sl in intersection.stop_lines:
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": list(sl.point)},
                "properties": {"kind": "stop_line", "approach": sl.approach, "heading": sl.heading},
            }
        )
    for m in intersection.movements:
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "MultiLineString",
                    "coordinates": [[list(p) for p in lane_map[lid].polyline] for lid in m.lane_ids],
                },
                "properties": {
                    "kind": "movement",
                    "index": m.index,
                    "turn": m.turn,
                    "approach": m.approach,
                    "street_group": m.street_group,
                },
            }
        )
    return {"type": "FeatureCollection", "properties": {"intersection": intersection.id}, "features": features}
