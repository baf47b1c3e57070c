"""Evaluation metrics: imputation rate, red-light violation rate, accuracy.

Per-scenario results are computed independently (:func:`scenario_metrics`)
and summed by :func:`aggregate`, so the work maps over scenarios freely.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .pipeline import R, UNKNOWN, ScenarioAnalysis, lane_counts, movement_states
from .scenario import Scenario
from .topology import Intersection, VehicleMovementTrace

DEFAULT_THRESHOLDS = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
SPEED_BANDS = ("<35", "35-45", ">45", "unknown")


# ----------------------------------------------------------- imputation rate


def imputation_counts(intersection: Intersection, raw_scenario: Scenario) -> tuple[int, int]:
    """(M_impute, M_total) over lane-ticks of the non-right movements."""
    sig = raw_scenario.signal_map
    T = raw_scenario.tick_count
    total = missing = 0
    for m in intersection.non_right:
        for lid in m.lane_ids:
            total += T
            rec = sig.get(lid)
            if rec is None:
                missing += T
            else:
                missing += sum(1 for s in rec.states if s == UNKNOWN)
    return missing, total


def imputation_rate(pairs: Iterable[tuple[Sequence[Intersection], Scenario]]) -> float:
    """eta over ``(intersections, raw scenario)`` pairs."""
    missing = total = 0
    for intersections, raw in pairs:
        for inter in intersections:
            a, b = imputation_counts(inter, raw)
            missing += a
            total += b
    return missing / total if total else 0.0


# ------------------------------------------------------------- violations


@dataclass(frozen=True)
class ViolationEvent:
    agent_id: str
    movement: int
    tick: int  # 1-based tick the crossing is attributed to
    red_elapsed_s: float
    initial_red: bool  # red since tick 1, true elapsed time unknown


def crossings(trace: VehicleMovementTrace) -> list[int]:
    """Ticks at which the vehicle crosses the stop line (d goes from >= 0 to < 0).

    The crossing instant is linearly interpolated between samples and
    attributed to the nearest tick.
    """
    out = []
    d, t = trace.d, trace.ticks
    for k in range(len(d) - 1):
        if d[k] >= 0 > d[k + 1] and t[k + 1] - t[k] <= 2:
            frac = d[k] / (d[k] - d[k + 1])
            tau = t[k] + frac * (t[k + 1] - t[k])
            out.append(int(math.floor(tau + 0.5)))
    return out


def red_elapsed(series: np.ndarray, tick_duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Seconds the movement has been continuously red at each tick (NaN when not red)
    and whether the red run started at tick 1."""
    T = len(series)
    elapsed = np.full(T, np.nan)
    initial = np.zeros(T, dtype=bool)
    start = None
    for t in range(T):
        if series[t] == R:
            if start is None:
                start = t
            elapsed[t] = (t - start) * tick_duration
            initial[t] = start == 0
        else:
            start = None
    return elapsed, initial


def red_light_violations(
    traces: Sequence[VehicleMovementTrace],
    states: np.ndarray,
    movements: Sequence[int],
    threshold_s: float = 0.0,
    tick_duration: float = 0.1,
) -> tuple[list[ViolationEvent], bool]:
    """Stop-line crossings on red that has lasted at least ``threshold_s``.

    ``states`` is (T, N) with columns matching ``movements``. Unknown ticks
    are never red, so they also reset the red clock.
    """
    col = {idx: k for k, idx in enumerate(movements)}
    clocks = {idx: red_elapsed(states[:, k], tick_duration) for idx, k in col.items()}
    events = []
    T = states.shape[0]
    for tr in traces:
        if tr.movement not in col:
            continue
        elapsed, initial = clocks[tr.movement]
        for tick in crossings(tr):
            if not 1 <= tick <= T:
                continue
            e = elapsed[tick - 1]
            if not np.isnan(e) and e >= threshold_s - 1e-9:
                events.append(ViolationEvent(tr.agent_id, tr.movement, tick, float(e), bool(initial[tick - 1])))
    return events, bool(events)


def violation_rate(flags: Sequence[Sequence[bool]], thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> list[float]:
    """xi per threshold from per-scenario flag rows (one column per threshold)."""
    if len(flags) == 0:
        raise ValueError("violation rate of an empty scenario set")
    arr = np.asarray(flags, dtype=bool).reshape(len(flags), len(thresholds))
    return arr.mean(axis=0).tolist()


# --------------------------------------------------------------- accuracy


def accuracy_counts(truth: np.ndarray, repaired: np.ndarray, lanes: np.ndarray) -> tuple[float, float]:
    """(M_correct, M_total) with movement weights ``lanes``; states compared literally."""
    truth, repaired = np.asarray(truth), np.asarray(repaired)
    if truth.shape != repaired.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape} vs repaired {repaired.shape}")
    lanes = np.asarray(lanes, dtype=float)
    correct = float(((truth == repaired) * lanes[None, :]).sum())
    return correct, float(lanes.sum() * truth.shape[0])


def accuracy(truth: np.ndarray, repaired: np.ndarray, lanes: np.ndarray) -> float:
    correct, total = accuracy_counts(truth, repaired, lanes)
    return correct / total if total else 1.0


# ------------------------------------------------------------ speed bands


def speed_band(intersections: Sequence[Intersection], scenario: Scenario) -> str:
    """Bucket by the mean speed limit of approach lanes (mph)."""
    lane_map = scenario.lane_map
    ids = sorted({lid for inter in intersections for m in inter.movements for lid in m.approach_lane_ids})
    limits = [lane_map[i].speed_limit_mph for i in ids if lane_map[i].speed_limit_mph is not None]
    if not limits:
        return "unknown"
    mean = float(np.mean(limits))
    if mean < 35:
        return "<35"
    if mean <= 45:
        return "35-45"
    return ">45"


# ------------------------------------------------------------- reporting


@dataclass
class ScenarioMetrics:
    scenario_id: str
    band: str
    m_total: int = 0
    m_impute: int = 0
    flagged_raw: list[bool] = field(default_factory=list)
    flagged_repaired: list[bool] = field(default_factory=list)
    m_correct: float = 0.0
    m_accuracy_total: float = 0.0
    initial_red_events: int = 0
    has_truth: bool = False


def scenario_metrics(
    analysis: ScenarioAnalysis,
    repaired: Scenario,
    truth: Scenario | None = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> ScenarioMetrics:
    raw = analysis.scenario
    inters = [ia.intersection for ia in analysis.intersections]
    out = ScenarioMetrics(raw.scenario_id, speed_band(inters, raw), has_truth=truth is not None)
    out.flagged_raw = [False] * len(thresholds)
    out.flagged_repaired = [False] * len(thresholds)
    for ia in analysis.intersections:
        inter = ia.intersection
        a, b = imputation_counts(inter, raw)
        out.m_impute += a
        out.m_total += b
        idx = [m.index for m in inter.non_right]
        rep_states = movement_states(inter, repaired)
        for k, th in enumerate(thresholds):
            _, f_raw = red_light_violations(ia.traces, ia.raw, idx, th, raw.tick_duration)
            ev, f_rep = red_light_violations(ia.traces, rep_states, idx, th, raw.tick_duration)
            out.flagged_raw[k] |= f_raw
            out.flagged_repaired[k] |= f_rep
            if k == 0:
                out.initial_red_events += sum(e.initial_red for e in ev)
        if truth is not None:
            c, t = accuracy_counts(movement_states(inter, truth), rep_states, lane_counts(inter))
            out.m_correct += c
            out.m_accuracy_total += t
    return out


@dataclass
class MetricsReport:
    scenario_count: int
    m_total: int
    m_impute: int
    eta: float
    thresholds: list[float]
    violations_raw: list[int]
    violations_repaired: list[int]
    xi_raw: list[float]
    xi_repaired: list[float]
    accuracy: float | None = None
    initial_red_events: int = 0
    bands: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """One row per (group, signal source); threshold columns xi_0s .. xi_5s."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = [f"xi_{t:g}s" for t in self.thresholds]
        w.writerow(["group", "source", "scenarios", "eta", "accuracy", *cols])
        rows = [("all", self)] + [(band, _from_dict(d)) for band, d in sorted(self.bands.items())]
        for group, rep in rows:
            acc = "" if rep.accuracy is None else f"{rep.accuracy:.6f}"
            for source, xi in (("raw", rep.xi_raw), ("repaired", rep.xi_repaired)):
                w.writerow([group, source, rep.scenario_count, f"{rep.eta:.6f}", acc, *(f"{x:.6f}" for x in xi)])
        return buf.getvalue()

    def check_monotone(self) -> None:
        for name, xi in (("raw", self.xi_raw), ("repaired", self.xi_repaired)):
            if any(b > a + 1e-12 for a, b in zip(xi, xi[1:])):
                raise AssertionError(f"violation rate ({name}) increases with threshold: {xi}")


def _from_dict(d: dict) -> MetricsReport:
    return MetricsReport(**{k: v for k, v in d.items() if k != "bands"})


def aggregate(
    results: Sequence[ScenarioMetrics], thresholds: Sequence[float] = DEFAULT_THRESHOLDS, by_band: bool = True
) -> MetricsReport:
    if not results:
        raise ValueError("no scenarios to aggregate")
    m_total = sum(r.m_total for r in results)
    m_impute = sum(r.m_impute for r in results)
    vr = np.array([r.flagged_raw for r in results], dtype=bool)
    vp = np.array([r.flagged_repaired for r in results], dtype=bool)
    acc = None
    if all(r.has_truth for r in results):
        denom = sum(r.m_accuracy_total for r in results)
        acc = sum(r.m_correct for r in results) / denom if denom else 1.0
    report = MetricsReport(
        scenario_count=len(results),
        m_total=m_total,
        m_impute=m_impute,
        eta=m_impute / m_total if m_total else 0.0,
        thresholds=[float(t) for t in thresholds],
        violations_raw=vr.sum(axis=0).tolist(),
        violations_repaired=vp.sum(axis=0).tolist(),
        xi_raw=violation_rate(vr, thresholds),
        xi_repaired=violation_rate(vp, thresholds),
        accuracy=acc,
        initial_red_events=sum(r.initial_red_events for r in results),
    )
    if by_band:
        for band in SPEED_BANDS:
            members = [r for r in results if r.band == band]
            if members:
                report.bands[band] = asdict(aggregate(members, thresholds, by_band=False))
    report.check_monotone()
    return report


def speed_band_breakdown(results: Sequence[ScenarioMetrics], thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> dict:
    """Per-band reports (as dicts) keyed by band label."""
    return aggregate(results, thresholds).bands


def summary_table(report: MetricsReport) -> str:
    lines = [
        f"scenarios: {report.scenario_count}",
        f"imputation rate eta: {report.eta:.4f} ({report.m_impute}/{report.m_total})",
    ]
    if report.accuracy is not None:
        lines.append(f"accuracy: {report.accuracy:.4f}")
    lines.append("threshold_s  xi_raw   xi_repaired")
    for t, a, b in zip(report.thresholds, report.xi_raw, report.xi_repaired):
        lines.append(f"{t:11g}  {a:7.4f}  {b:7.4f}")
    for band, d in sorted(report.bands.items()):
        lines.append(f"band {band}: n={d['scenario_count']} eta={d['eta']:.4f} xi_rep@0={d['xi_repaired'][0]:.4f}")
    return "\n".join(lines)
