"""End-to-end repair of one scenario.

topology -> vehicle traces -> raw movement states -> estimate -> fuse ->
smooth -> right turns -> yellow -> lane records.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .estimation import MovementMeans, classify_means, movement_means
from .fusion import (
    FeasibleState,
    expand_right_turns,
    feasible_matrix,
    generate_feasible_set,
    impute_arrays,
    select_sequence,
)
from .scenario import RawSignalRecord, Scenario, SignalState
from .temporal import insert_yellow, propagate_to_lanes, smooth_sequence
from .topology import Intersection, VehicleMovementTrace, identify_intersections, trace_vehicles

log = logging.getLogger(__name__)

G, Y, R, UNKNOWN = (int(s) for s in (SignalState.GREEN, SignalState.YELLOW, SignalState.RED, SignalState.UNKNOWN))


def movement_states(intersection: Intersection, scenario: Scenario, include_right: bool = False) -> np.ndarray:
    """(T, N) movement states read off lane records by majority vote.

    Lanes without a record or with Unknown do not vote; a tie between colours
    gives Unknown. Columns follow ``intersection.non_right`` (or all movements).
    """
    moves = intersection.movements if include_right else intersection.non_right
    T = scenario.tick_count
    sig = scenario.signal_map
    out = np.full((T, len(moves)), UNKNOWN, dtype=np.int8)
    for k, m in enumerate(moves):
        votes = np.zeros((T, 4), dtype=int)
        for lid in m.lane_ids:
            rec = sig.get(lid)
            if rec is None:
                continue
            codes = np.fromiter((int(s) for s in rec.states), dtype=int, count=T)
            votes[np.arange(T), codes] += 1
        votes[:, UNKNOWN] = 0
        top = votes.max(axis=1)
        winners = (votes == top[:, None]).sum(axis=1)
        out[:, k] = np.where((top > 0) & (winners == 1), votes.argmax(axis=1), UNKNOWN)
    return out


def lane_counts(intersection: Intersection, include_right: bool = False) -> np.ndarray:
    moves = intersection.movements if include_right else intersection.non_right
    return np.array([len(m.lane_ids) for m in moves], dtype=float)


@dataclass
class IntersectionAnalysis:
    intersection: Intersection
    traces: list[VehicleMovementTrace]
    raw: np.ndarray  # (T, N non-right)
    feasible: list[FeasibleState]
    _means: dict[int, MovementMeans] = field(default_factory=dict, repr=False)

    def means(self, config: Config, tick_count: int) -> MovementMeans:
        key = config.estimation.delta_t
        if key not in self._means:
            self._means[key] = movement_means(self.intersection, self.traces, config.estimation, tick_count)
        return self._means[key]


@dataclass
class ScenarioAnalysis:
    scenario: Scenario
    intersections: list[IntersectionAnalysis]
    skipped: list[Intersection]
    diagnostics: list[str]


def analyze_scenario(scenario: Scenario, config: Config = Config()) -> ScenarioAnalysis:
    """Topology, traces and raw movement states for every repairable intersection."""
    diags: list[str] = []
    found = identify_intersections(scenario, config.topology, diags)
    usable, skipped = [], []
    for inter in found:
        if not inter.signalized:
            continue
        if not inter.non_right:
            skipped.append(inter)
            continue
        traces = trace_vehicles(inter, scenario, config.topology, config.estimation.d_min, diags)
        usable.append(
            IntersectionAnalysis(
                inter,
                traces,
                movement_states(inter, scenario),
                generate_feasible_set(inter.movements),
            )
        )
    return ScenarioAnalysis(scenario, usable, skipped, diags)


@dataclass
class IntersectionRepair:
    intersection: Intersection
    raw: np.ndarray  # (T, N non-right)
    fused: np.ndarray  # (T, N non-right), G/R
    final: np.ndarray  # (T, all movements) with Y
    imputed: int
    corrected: int
    smoothed: int


def repair_intersection(ia: IntersectionAnalysis, config: Config, tick_count: int) -> IntersectionRepair:
    state, conf = classify_means(ia.means(config, tick_count), config.estimation)
    imp, w = impute_arrays(ia.raw, state.T, conf.T, config.fusion)
    feas = feasible_matrix(ia.feasible)
    fused = feas[select_sequence(imp, w, feas)]
    smooth = smooth_sequence(fused, config.post)
    final = insert_yellow(expand_right_turns(ia.intersection, smooth), config.post)
    raw_c = np.where(ia.raw == Y, G, ia.raw)
    return IntersectionRepair(
        ia.intersection,
        ia.raw,
        fused,
        final,
        imputed=int((ia.raw == UNKNOWN).sum()),
        corrected=int(((ia.raw != UNKNOWN) & (raw_c != fused)).sum()),
        smoothed=int((fused != smooth).sum()),
    )


@dataclass
class RepairResult:
    scenario: Scenario
    log: dict
    repairs: list[IntersectionRepair]


def repair_scenario(scenario: Scenario, config: Config = Config(), analysis: ScenarioAnalysis | None = None) -> RepairResult:
    """Repaired copy of ``scenario`` plus a JSON-ready repair log.

    Lanes outside any repaired intersection keep their original records.
    """
    analysis = analysis or analyze_scenario(scenario, config)
    diags = list(analysis.diagnostics)
    records: dict[str, RawSignalRecord] = {r.lane_id: r for r in scenario.raw_signals}
    repairs, entries = [], []
    for ia in analysis.intersections:
        rep = repair_intersection(ia, config, scenario.tick_count)
        assigned = propagate_to_lanes(ia.intersection, rep.final, scenario, config.topology.bicycle_radius)
        diags.extend(assigned.diagnostics)
        for rec in assigned.records:
            records[rec.lane_id] = rec
        repairs.append(rep)
        entries.append(
            {
                "intersection": ia.intersection.id,
                "movements": [m.index for m in ia.intersection.movements],
                "vehicles_traced": len(ia.traces),
                "imputed_ticks": rep.imputed,
                "corrected_ticks": rep.corrected,
                "smoothed_ticks": rep.smoothed,
            }
        )
    repaired = scenario.with_signals([records[k] for k in sorted(records)])
    log_doc = {
        "scenario_id": scenario.scenario_id,
        "intersections": entries,
        "skipped_intersections": [
            {"intersection": i.id, "reason": "unsupported layout"} for i in analysis.skipped
        ],
        "diagnostics": diags,
    }
    for d in diags:
        log.debug("%s: %s", scenario.scenario_id, d)
    return RepairResult(repaired, log_doc, repairs)
