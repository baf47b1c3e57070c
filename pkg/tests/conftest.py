"""Shared builders: synthetic geometry, hand-placed vehicles, cached plan runs."""

from __future__ import annotations

import functools
import time
from dataclasses import dataclass

import numpy as np
import pytest

from sigrepair import metrics as M
from sigrepair.config import Config
from sigrepair.pipeline import RepairResult, ScenarioAnalysis, analyze_scenario, repair_scenario
from sigrepair.scenario import Agent, RawSignalRecord, Scenario, SignalState, TrajectorySample
from sigrepair.topology import Intersection, identify_intersections
from sigrepair.synthetic import (
    DegradationConfig,
    SegmentPair,
    SimConfig,
    SyntheticIntersection,
    build_intersection,
    default_plans,
    run_simulation,
    segment_and_degrade,
)

G, Y, R, U = SignalState.GREEN, SignalState.YELLOW, SignalState.RED, SignalState.UNKNOWN
CODE = {"G": G, "Y": Y, "R": R, "-": U}

PLAN_SEED = {"fixed_1": 11, "fixed_2": 12, "actuated": 13}


def states(text: str) -> tuple[SignalState, ...]:
    """'GGRR--' -> state tuple; run-length form 'G40 R51' also accepted."""
    if " " in text or any(ch.isdigit() for ch in text):
        out = []
        for tok in text.split():
            out.extend([CODE[tok[0]]] * int(tok[1:]))
        return tuple(out)
    return tuple(CODE[ch] for ch in text)


@functools.lru_cache(maxsize=None)
def intersection(template: str = "four-way", lanes_per_approach: int = 1) -> SyntheticIntersection:
    return build_intersection(SimConfig(template=template, lanes_per_approach=lanes_per_approach))


@functools.lru_cache(maxsize=None)
def recovered(template: str = "four-way", lanes_per_approach: int = 1) -> Intersection:
    """The intersection as identified from the synthetic lanes."""
    inter = intersection(template, lanes_per_approach)
    s = make_scenario(inter, {m.index: (G, G) for m in inter.movements}, T=2)
    return next(i for i in identify_intersections(s) if i.signalized)


def movement_path(inter: SyntheticIntersection, index: int):
    return next(p for p in inter.paths if p.movement == index)


def vehicle_on(inter, index: int, d0: float, v: float, a: float = 0.0, T: int = 91, agent_id: str = "car", dt=0.1):
    """Agent following movement ``index`` with constant acceleration, starting ``d0`` m
    before the stop line; it halts (v=0) instead of reversing."""
    path = movement_path(inter, index)
    s, speed = path.s_stop - d0, v
    samples = []
    for t in range(1, T + 1):
        x, y, h = path.pose(s)
        samples.append(TrajectorySample(t, x, y, speed, a if speed > 0 or a > 0 else 0.0, h, True))
        new_speed = max(0.0, speed + a * dt)
        s += (speed + new_speed) / 2 * dt
        speed = new_speed
    return Agent(agent_id, "vehicle", False, tuple(samples))


def make_scenario(inter, signals: dict[int, tuple], agents=(), T: int = 91, sid: str = "hand") -> Scenario:
    """Records on every connector lane of the listed movements."""
    recs = []
    for m in inter.movements:
        if m.index in signals:
            for lid in m.lane_ids:
                recs.append(RawSignalRecord(lid, tuple(signals[m.index])))
    return Scenario(sid, T, 0.1, inter.lanes, tuple(agents), tuple(sorted(recs, key=lambda r: r.lane_id)))


@dataclass
class PlanRun:
    name: str
    pairs: list[SegmentPair]
    analyses: list[ScenarioAnalysis]
    repairs: list[RepairResult]
    results: list[M.ScenarioMetrics]
    report: M.MetricsReport
    seconds: float


@functools.lru_cache(maxsize=None)
def plan_run(name: str, template: str = "four-way") -> PlanRun:
    """10-minute seeded run of a built-in plan, degraded with the default model and
    pushed through the repair pipeline with default parameters."""
    t0 = time.perf_counter()
    seed = PLAN_SEED[name]
    cfg = SimConfig(template=template, seed=seed)
    inter = build_intersection(cfg)
    sim = run_simulation(inter, default_plans(template)[name], cfg)
    pairs = segment_and_degrade(sim, DegradationConfig(seed=seed), prefix=name)
    config = Config()
    analyses, repairs, results = [], [], []
    for sp in pairs:
        an = analyze_scenario(sp.scenario, config)
        rep = repair_scenario(sp.scenario, config, analysis=an)
        analyses.append(an)
        repairs.append(rep)
        results.append(M.scenario_metrics(an, rep.scenario, sp.truth))
    report = M.aggregate(results)
    return PlanRun(name, pairs, analyses, repairs, results, report, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def four_way() -> SyntheticIntersection:
    return intersection("four-way")


@pytest.fixture(scope="session")
def t_junction() -> SyntheticIntersection:
    return intersection("T")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------- acceptance summary lines

CRITERIA = {
    1: "feasible-set fidelity",
    2: "confidence-function points",
    3: "completeness",
    4: "synthetic accuracy",
    5: "correction efficacy",
    6: "imputation-rate arithmetic",
    7: "temporal invariants",
    8: "fusion oracle equivalence",
    9: "topology round trip",
}
_outcomes: dict[int, list[tuple[str, str]]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    n = props.get("criterion")
    if n is None or (report.when != "call" and report.outcome == "passed"):
        return
    if hasattr(report, "wasxfail"):
        verdict = "FAIL (expected, see notes/decisions.md)" if report.skipped else "PASS (unexpected)"
    else:
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    _outcomes.setdefault(n, []).append((verdict, str(props.get("detail", ""))))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        results = _outcomes.get(n)
        if not results:
            continue
        verdicts = [v for v, _ in results]
        worst = next((v for v in verdicts if v != "PASS"), "PASS")
        details = "; ".join(d for _, d in results if d)
        line = f"criterion {n} ({CRITERIA[n]}): {worst}"
        terminalreporter.write_line(line + (f"  [{details}]" if details else ""))
