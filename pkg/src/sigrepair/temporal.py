"""Post-processing of fused G/R sequences.

Short interior runs are overwritten with the preceding state vector, yellow is
inserted at the end of each green run, and movement states are written back
onto lanes with arrow/round shapes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import PostParams
from .geometry import project
from .scenario import RawSignalRecord, Scenario, Shape, SignalState
from .topology import LEFT, Intersection, Movement, opposing_through

G, Y, R, UNKNOWN = (int(s) for s in (SignalState.GREEN, SignalState.YELLOW, SignalState.RED, SignalState.UNKNOWN))


def _runs(col: np.ndarray) -> list[tuple[int, int]]:
    """Maximal constant runs of a 1-D array as inclusive (start, end) pairs."""
    cuts = np.flatnonzero(np.diff(col)) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts - 1, [len(col) - 1]])
    return list(zip(starts.tolist(), ends.tolist()))


def short_runs(x: np.ndarray, t_min: int) -> list[tuple[int, int]]:
    """Interior G (R) runs flanked by R (G) with ``end - start <= t_min``, all movements."""
    found = set()
    for i in range(x.shape[1]):
        col = x[:, i]
        for ts, te in _runs(col):
            if ts == 0 or te == len(col) - 1 or te - ts > t_min:
                continue
            before, after, inner = col[ts - 1], col[te + 1], col[ts]
            if before == after and before != inner and {int(before), int(inner)} == {G, R}:
                found.add((ts, te))
    return sorted(found)


def _next_run(x: np.ndarray, t_min: int, order: str) -> tuple[int, int] | None:
    runs = short_runs(x, t_min)
    if not runs:
        return None
    if order == "shortest":
        return min(runs, key=lambda r: (r[1] - r[0], r[0]))
    return runs[0]


def smooth_sequence(x: np.ndarray, params: PostParams = PostParams()) -> np.ndarray:
    """Remove interior G/R runs with ``end - start <= t_min``.

    ``x`` is (T, N). The leftmost qualifying run is overwritten with the whole
    state vector preceding it, then the sequence is rescanned. Each rewrite
    removes at least one change point, so the loop terminates.
    """
    out = np.array(x, copy=True)
    while True:
        run = _next_run(out, params.t_min, params.smoothing_order)
        if run is None:
            return out
        ts, te = run
        out[ts : te + 1] = out[ts - 1]


def smoothed_tick_count(before: np.ndarray, after: np.ndarray) -> int:
    return int(np.any(before != after, axis=1).sum())


def insert_yellow(x: np.ndarray, params: PostParams = PostParams()) -> np.ndarray:
    """Turn the last ``t_yellow`` ticks of every green run that ends in red into Y.

    A green run shorter than ``t_yellow`` becomes Y entirely.
    """
    out = np.array(x, copy=True)
    for i in range(out.shape[1]):
        col = out[:, i]
        ends = np.flatnonzero((col[:-1] == G) & (col[1:] == R))
        for t in ends:
            start = t
            while start > 0 and col[start - 1] == G:
                start -= 1
            col[max(start, t - params.t_yellow + 1) : t + 1] = Y
    return out


# ------------------------------------------------------------------ shapes


def is_dedicated_left(lane_id: str, movement: Movement, scenario: Scenario) -> bool:
    """A left-movement lane not fed exclusively by approach lanes shared with other turns."""
    if movement.turn != LEFT:
        return False
    lane = scenario.lane_map.get(lane_id)
    feeders = [e for e in lane.entry_lane_ids] if lane is not None else []
    return not feeders or any(e not in movement.shared_lane_ids for e in feeders)


def raw_arrow_states(movement: Movement, scenario: Scenario) -> frozenset[int]:
    """States that appeared with an arrow on the movement's lanes."""
    seen: set[int] = set()
    sig = scenario.signal_map
    for lid in movement.lane_ids:
        rec = sig.get(lid)
        if rec is None:
            continue
        for st, sh in zip(rec.states, rec.shapes):
            if sh == Shape.ARROW and st != SignalState.UNKNOWN:
                seen.add(int(st))
    return frozenset(seen)


def classify_arrow(
    state: int,
    dedicated_left: bool,
    raw_arrows: frozenset[int] | set[int],
    opposing_state: int | None,
) -> Shape:
    """Arrow or round for one final movement state.

    R/Y: arrow iff the lane is a dedicated left lane and a red or yellow arrow
    was seen in raw data. G: arrow iff the lane is a dedicated left lane, a
    green arrow was seen in raw data, and the opposing through is red (no
    opposing through counts as protected).
    """
    if not dedicated_left:
        return Shape.ROUND
    if state in (R, Y):
        return Shape.ARROW if raw_arrows & {R, Y} else Shape.ROUND
    if state == G and G in raw_arrows and (opposing_state is None or opposing_state == R):
        return Shape.ARROW
    return Shape.ROUND


@dataclass(frozen=True)
class LaneAssignment:
    records: list[RawSignalRecord]
    diagnostics: list[str]


def _nearest_vehicle_lane(bike_pts: np.ndarray, candidates, radius: float):
    # mean rather than min distance: connectors crossing the bicycle lane touch it
    best, best_d = None, np.inf
    for lid, pts in candidates:
        d = float(project(pts, bike_pts).lateral.mean())
        if d < best_d:
            best, best_d = lid, d
    return best if best_d <= radius else None


def propagate_to_lanes(
    intersection: Intersection,
    states: np.ndarray,
    scenario: Scenario,
    bicycle_radius: float = 10.0,
) -> LaneAssignment:
    """Lane records for the final (T, movements) state codes of ``intersection``.

    Every lane of every movement receives its movement's series; bicycle lanes
    in the intersection copy the nearest vehicle lane within ``bicycle_radius``.
    """
    T = states.shape[0]
    col = {m.index: k for k, m in enumerate(intersection.movements)}
    sig = scenario.signal_map
    records: dict[str, RawSignalRecord] = {}
    for m in intersection.movements:
        series = states[:, col[m.index]]
        opp = opposing_through(intersection, m) if m.turn == LEFT else None
        opp_series = states[:, col[opp.index]] if opp is not None else None
        arrows = raw_arrow_states(m, scenario)
        for lid in m.lane_ids:
            dedicated = is_dedicated_left(lid, m, scenario)
            shapes = tuple(
                classify_arrow(
                    int(series[t]),
                    dedicated,
                    arrows,
                    int(opp_series[t]) if opp_series is not None else None,
                )
                for t in range(T)
            )
            old = sig.get(lid)
            records[lid] = RawSignalRecord(
                lid,
                tuple(SignalState(int(s)) for s in series),
                shapes,
                old.position if old is not None else None,
            )

    diagnostics = []
    lane_map = scenario.lane_map
    vehicle = [(lid, lane_map[lid].points) for lid in sorted(records)]
    bikes = sorted(
        lid
        for lid, ln in lane_map.items()
        if ln.lane_kind == "bicycle" and (lid in intersection.member_lane_ids or lid in sig)
    )
    for lid in bikes:
        if lid in records:
            continue
        near = _nearest_vehicle_lane(lane_map[lid].points, vehicle, bicycle_radius)
        if near is None:
            if lid not in intersection.member_lane_ids:
                continue  # signalled bicycle lane belonging elsewhere
            diagnostics.append(
                f"intersection {intersection.id}: bicycle lane {lid} has no vehicle lane within "
                f"{bicycle_radius:g} m, left unchanged"
            )
            continue
        src = records[near]
        old = sig.get(lid)
        records[lid] = RawSignalRecord(lid, src.states, src.shapes, old.position if old is not None else None)
    return LaneAssignment([records[k] for k in sorted(records)], diagnostics)


def post_process(x: np.ndarray, params: PostParams = PostParams()) -> np.ndarray:
    """Smoothing followed by yellow insertion."""
    return insert_yellow(smooth_sequence(x, params), params)


def sequence_lengths(seq: Sequence[int]) -> list[tuple[int, int]]:
    """(state, length) of each maximal run; handy for checks and logs."""
    arr = np.asarray(seq)
    return [(int(arr[s]), e - s + 1) for s, e in _runs(arr)]
