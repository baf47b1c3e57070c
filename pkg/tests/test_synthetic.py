import numpy as np
import pytest

from conftest import G, R, Y, intersection, plan_run, recovered
from sigrepair.fusion import generate_feasible_set
from sigrepair.geometry import project
from sigrepair.metrics import red_light_violations
from sigrepair.pipeline import analyze_scenario, movement_states
from sigrepair.scenario import serialize_scenario
from sigrepair.synthetic import (
    DegradationConfig,
    Phase,
    SignalPlan,
    SimConfig,
    build_intersection,
    default_plans,
    plan_from_dict,
    run_simulation,
    segment_and_degrade,
)

g, y, r = int(G), int(Y), int(R)


def sim(plan="fixed_1", template="four-way", **kw):
    cfg = SimConfig(template=template, **kw)
    inter = build_intersection(cfg)
    return run_simulation(inter, default_plans(template)[plan], cfg)


# --------------------------------------------------------------- configs


def test_zero_lanes_rejected():
    with pytest.raises(ValueError):
        SimConfig(lanes_per_approach=0)


def test_unknown_template_rejected():
    with pytest.raises(ValueError):
        SimConfig(template="roundabout")


def test_negative_demand_rejected():
    with pytest.raises(ValueError):
        SimConfig(demand={"through": -1.0})


def test_probabilities_validated():
    with pytest.raises(ValueError):
        DegradationConfig(p_miss=1.5)


def test_infeasible_phase_named():
    bad = SignalPlan("fixed", (Phase(frozenset({2, 6}), 20), Phase(frozenset({2, 4}), 20)))
    with pytest.raises(ValueError, match="phase 1"):
        bad.check_feasible(intersection().movements)


def test_plan_round_trip():
    for plan in default_plans().values():
        assert plan_from_dict(plan.to_dict()) == plan


def test_default_plans_feasible():
    for template in ("four-way", "T"):
        for plan in default_plans(template).values():
            plan.check_feasible(intersection(template).movements)


# ------------------------------------------------------------- simulation


def test_zero_demand_no_vehicles_signals_cycle():
    out = sim(demand={"left": 0, "through": 0, "right": 0}, duration_s=120)
    assert out.vehicles == []
    plan = default_plans()["fixed_1"]
    col = {m.index: k for k, m in enumerate(out.intersection.movements)}
    for ph in plan.phases:
        assert np.all(out.truth[:, [col[i] for i in ph.green]] == g, axis=1).any()


def test_fixed_cycle_length_exact():
    out = sim(duration_s=300, demand={"through": 0.0, "left": 0.0, "right": 0.0})
    cycle = int(round(default_plans()["fixed_1"].cycle_s * 10))
    assert np.array_equal(out.truth[:-cycle], out.truth[cycle:])
    assert not np.array_equal(out.truth[: -cycle + 1], out.truth[cycle - 1 :])


def test_truth_feasible_and_yellow_structure():
    out = sim(plan="actuated", duration_s=300)
    inter = out.intersection
    feas = {tuple(f.codes) for f in generate_feasible_set(inter.movements)}
    cols = [k for k, m in enumerate(inter.movements) if m.turn != "right"]
    as_green = np.where(out.truth == y, g, out.truth)[:, cols]
    assert {tuple(row) for row in as_green} <= feas
    for k in cols:
        c = out.truth[:, k]
        assert not np.any((c[:-1] == g) & (c[1:] == r))  # always through yellow
        assert not np.any((c[:-1] == y) & (c[1:] == g))


def test_seeded_runs_reproducible():
    a, b = sim(duration_s=60, seed=3), sim(duration_s=60, seed=3)
    assert np.array_equal(a.truth, b.truth)
    assert len(a.vehicles) == len(b.vehicles)
    assert all(np.array_equal(x.data, y_.data) for x, y_ in zip(a.vehicles, b.vehicles))


def _stop_distances(out, movement):
    path = next(p for p in out.intersection.paths if p.movement == movement)
    stops = {}
    for tr in out.vehicles:
        if tr.movement != movement:
            continue
        v = tr.data[:, 2]
        idx = np.flatnonzero(v == 0.0)
        if len(idx):
            k = idx[0]
            s = project(path.points, tr.data[k : k + 1, :2]).s[0]
            stops[tr.id] = (int(tr.ticks[k]), path.s_stop - float(s))
    return stops


def test_vehicle_stops_before_line_on_red():
    out = sim(demand={"4": 60.0}, duration_s=600, seed=5)
    stops = _stop_distances(out, 4)
    assert stops
    by_tick = {}
    for tick, d in stops.values():
        assert d > 0
        by_tick.setdefault(tick // 50, []).append(d)
    heads = [min(ds) for ds in by_tick.values()]
    assert all(0 < d <= 3.0 for d in heads)


def test_free_vehicle_on_green_never_stops():
    out = sim(demand={"2": 20.0}, duration_s=600, seed=9)
    col = {m.index: k for k, m in enumerate(out.intersection.movements)}[2]
    free = 0
    for tr in out.vehicles:
        t0 = int(tr.ticks[0])
        window = out.truth[t0 : t0 + 150, col]
        if np.all(window == g):
            free += 1
            assert tr.data[:, 2].min() > 5.0
    assert free >= 1


def test_no_red_running_under_ground_truth():
    run = plan_run("fixed_1")
    for sp in run.pairs:
        an = analyze_scenario(sp.truth)
        for ia in an.intersections:
            idx = [m.index for m in ia.intersection.non_right]
            assert not red_light_violations(ia.traces, movement_states(ia.intersection, sp.truth), idx)[1]


# ------------------------------------------------------------ degradation


def test_ten_minutes_gives_66_segments():
    assert len(plan_run("fixed_1").pairs) == 66


def test_no_degradation_raw_equals_truth():
    out = sim(duration_s=60)
    for sp in segment_and_degrade(out, DegradationConfig(p_miss=0.0, p_err=0.0)):
        assert sp.scenario.raw_signals == sp.truth.raw_signals


def test_full_miss_only_sdc_approach():
    out = sim(duration_s=120)
    for sp in segment_and_degrade(out, DegradationConfig(p_miss=1.0, p_err=0.0)):
        observed_lanes = {lid for m in out.intersection.movements if m.index in sp.observed for lid in m.lane_ids}
        assert {rec.lane_id for rec in sp.scenario.raw_signals} == observed_lanes
        sdc = [a for a in sp.scenario.agents if a.is_sdc]
        assert len(sdc) == (1 if sp.scenario.agents else 0)


def test_miss_fraction_binomial():
    out = sim(duration_s=600, seed=21)
    pairs = segment_and_degrade(out, DegradationConfig(p_miss=0.8, p_err=0.0, seed=21))
    masked = total = 0
    for sp in pairs:
        kept = {m.index for m in out.intersection.movements if any(rec.lane_id in m.lane_ids for rec in sp.scenario.raw_signals)}
        others = [m.index for m in out.intersection.movements if m.index not in sp.observed]
        total += len(others)
        masked += sum(i not in kept for i in others)
    assert total >= 200
    assert 0.72 <= masked / total <= 0.88


def test_flip_rate_near_p_err():
    out = sim(duration_s=600, seed=4)
    pairs = segment_and_degrade(out, DegradationConfig(p_miss=0.0, p_err=0.05, seed=4))
    diff = n = 0
    for sp in pairs:
        truth = {rec.lane_id: rec.states for rec in sp.truth.raw_signals}
        for rec in sp.scenario.raw_signals:
            a, b = np.array(rec.states), np.array(truth[rec.lane_id])
            diff += int((a != b).sum())
            n += a.size
    assert 0.04 <= diff / n <= 0.06


def test_segments_deterministic():
    a = segment_and_degrade(sim(duration_s=60, seed=2), DegradationConfig(seed=2))
    b = segment_and_degrade(sim(duration_s=60, seed=2), DegradationConfig(seed=2))
    assert [serialize_scenario(p.scenario) for p in a] == [serialize_scenario(p.scenario) for p in b]


def test_too_short_for_a_segment():
    with pytest.raises(ValueError):
        SimConfig(duration_s=5.0)


# -------------------------------------------------------------- geometry


@pytest.mark.parametrize("template, lanes", [("four-way", 1), ("four-way", 2), ("T", 1), ("T", 2)])
def test_topology_recovers_ground_truth(template, lanes):
    truth = intersection(template, lanes)
    got = recovered(template, lanes)
    assert {(m.index, m.turn, m.lane_ids) for m in got.movements} == {(m.index, m.turn, m.lane_ids) for m in truth.movements}
