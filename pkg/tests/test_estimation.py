import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import G, R, U, intersection, make_scenario, vehicle_on
from sigrepair.config import EstimationParams
from sigrepair.estimation import (
    accel_confidence,
    classify_means,
    estimate_movement,
    estimate_state_vector,
    movement_means,
    velocity_confidence,
    velocity_zone,
    weighted_mean_accel,
    weighted_mean_velocity,
)
from sigrepair.topology import VehicleMovementTrace, identify_intersections, trace_vehicles

P = EstimationParams()


def trace(movement=2, d=5.0, a=0.0, v=0.0, T=91, agent="v"):
    ticks = np.arange(1, T + 1)
    full = lambda x: np.broadcast_to(np.asarray(x, dtype=float), (T,)).copy()
    return VehicleMovementTrace(agent, movement, ticks, full(d), full(a), full(v))


# ------------------------------------------------------------ point values


@pytest.mark.parametrize(
    "d, a, want",
    [(10, -2, 1.0), (20, 1, 100 / 225), (-1, -2, 0.0), (0, 0, 1.0), (15, 0, 1.0), (30, 0, 0.0), (31, 0, 0.0)],
)
def test_accel_confidence_points(d, a, want):
    assert accel_confidence(d, a) == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("v, want", [(6, 6.0), (0, 33.0), (20, 30.0), (12, 33.0), (12.5, 17.5)])
def test_velocity_zone_points(v, want):
    assert velocity_zone(v) == pytest.approx(want, abs=1e-9)


@pytest.mark.parametrize("d, v, want", [(-8, 5, 1.0), (10, 6, 4 / 36), (13, 6, 0.0), (-8.01, 5, 0.0), (6, 6, 1.0)])
def test_velocity_confidence_points(d, v, want):
    assert velocity_confidence(d, v) == pytest.approx(want, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 100), st.floats(0, 30))
def test_confidences_in_unit_interval(d, v):
    assert 0.0 <= accel_confidence(d) <= 1.0
    assert 0.0 <= velocity_confidence(d, v) <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 30))
def test_velocity_confidence_continuous_in_d(v):
    g0 = velocity_zone(v)
    for knot in (g0, 2 * g0):
        assert velocity_confidence(knot - 1e-7, v) == pytest.approx(velocity_confidence(knot + 1e-7, v), abs=1e-5)


def test_accel_confidence_continuous_at_half_cutoff():
    assert accel_confidence(15 - 1e-9) == pytest.approx(accel_confidence(15 + 1e-9), abs=1e-6)


# ---------------------------------------------------------- weighted means


def test_single_vehicle_constant_accel():
    mean, mass = weighted_mean_accel([trace(d=5.0, a=1.0)], 45, P, 91)
    assert mean == pytest.approx(1.0) and mass == pytest.approx(1.0)


def test_zero_weight_vehicle_excluded():
    far = trace(d=80.0, a=-3.0, agent="far")
    near = trace(d=5.0, a=0.7, agent="near")
    assert weighted_mean_accel([far, near], 45, P, 91)[0] == pytest.approx(0.7)


def test_two_vehicle_accel_mean():
    # vehicle 2 sits where f = 0.5
    d_half = 30 - 15 * np.sqrt(0.5)
    v1 = trace(d=5.0, a=2.0, agent="a")
    v2 = trace(d=d_half, a=0.0, agent="b")
    mean, mass = weighted_mean_accel([v1, v2], 45, P, 91)
    assert mean == pytest.approx(4 / 3, abs=1e-9)
    assert mass == pytest.approx(1.5, abs=1e-9)


def test_stationary_vehicle_velocity_mean():
    assert weighted_mean_velocity([trace(d=5.0, v=0.0)], 45, P, 91)[0] == 0.0


def test_empty_movement_velocity_absent():
    assert weighted_mean_velocity([], 45, P, 91) == (None, 0.0)


def test_two_vehicle_velocity_mean():
    mean, mass = weighted_mean_velocity([trace(d=2.0, v=10.0, agent="a"), trace(d=2.0, v=0.0, agent="b")], 45, P, 91)
    assert mean == pytest.approx(5.0) and mass == pytest.approx(2.0)


def test_window_clipped_at_edges():
    tr = trace(d=5.0, a=1.0, T=5)
    for t in (1, 5):
        assert weighted_mean_accel([tr], t, P, 5)[0] == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 40), st.floats(-4, 4)), min_size=2, max_size=30))
def test_mean_is_convex_and_duplication_invariant(samples):
    T = len(samples)
    d = np.array([s[0] for s in samples])
    a = np.array([s[1] for s in samples])
    tr = VehicleMovementTrace("v", 2, np.arange(1, T + 1), d, a, np.zeros(T))
    mean, _ = weighted_mean_accel([tr], T // 2 + 1, EstimationParams(delta_t=T), T)
    if mean is None:
        return
    assert a.min() - 1e-9 <= mean <= a.max() + 1e-9
    # an identical second vehicle doubles every weight
    tr2 = VehicleMovementTrace("w", 2, tr.ticks, d, a, tr.v)
    mean2, _ = weighted_mean_accel([tr, tr2], T // 2 + 1, EstimationParams(delta_t=T), T)
    assert mean2 == pytest.approx(mean, abs=1e-9)


def test_vectorised_means_match_pointwise(rng):
    inter = intersection()
    traces = []
    for k in range(6):
        T = 91
        d = np.linspace(rng.uniform(20, 60), rng.uniform(-8, 10), T)
        traces.append(
            VehicleMovementTrace(f"v{k}", int(rng.choice([2, 4, 5])), np.arange(1, T + 1), d, rng.normal(0, 1.5, T), rng.uniform(0, 12, T))
        )
    topo = identify_intersections(make_scenario(inter, {2: (G,) * 2}, T=2))
    real = next(i for i in topo if i.signalized)
    means = movement_means(real, traces, P, 91)
    for row, idx in enumerate(means.movements):
        mine = [tr for tr in traces if tr.movement == idx]
        for t in (1, 30, 91):
            a_bar, sf = weighted_mean_accel(mine, t, P, 91)
            v_bar, sg = weighted_mean_velocity(mine, t, P, 91)
            assert means.accel_mass[row, t - 1] == pytest.approx(sf, abs=1e-9)
            assert means.vel_mass[row, t - 1] == pytest.approx(sg, abs=1e-9)
            if a_bar is None:
                assert np.isnan(means.mean_accel[row, t - 1])
            else:
                assert means.mean_accel[row, t - 1] == pytest.approx(a_bar, abs=1e-9)
            if v_bar is not None:
                assert means.mean_vel[row, t - 1] == pytest.approx(v_bar, abs=1e-9)


# -------------------------------------------------------------- areas


def test_area1_green_from_accel():
    e = estimate_movement(1.0, 2.5, 0.0, 3.0)
    assert e.state == G and e.confidence == 2.5


def test_area2_red_from_accel():
    e = estimate_movement(-2.5, 1.2, 10.0, 3.0)
    assert e.state == R and e.confidence == 1.2


def test_area3_green_from_velocity():
    e = estimate_movement(0.0, 1.0, 6.0, 2.0)
    assert e.state == G and e.confidence == 2.0


def test_area4_red_from_velocity():
    e = estimate_movement(0.0, 1.0, 0.2, 1.7)
    assert e.state == R and e.confidence == 1.7


def test_area5_unknown():
    e = estimate_movement(0.0, 1.0, 2.0, 1.0)
    assert e.state == U and e.confidence == 0.0


def test_absent_means_unknown():
    e = estimate_movement(None, 0.0, None, 0.0)
    assert e.state == U and e.confidence == 0.0


@settings(max_examples=200, deadline=None)
@given(
    st.one_of(st.none(), st.floats(-5, 5)),
    st.floats(0, 10),
    st.one_of(st.none(), st.floats(0, 20)),
    st.floats(0, 10),
)
def test_unknown_pairs_with_zero_confidence(a, fa, v, gv):
    e = estimate_movement(a, fa, v, gv)
    if e.state == U:
        assert e.confidence == 0.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 20))
def test_classify_means_matches_scalar(a, v):
    from sigrepair.estimation import MovementMeans

    means = MovementMeans((2,), np.array([[a]]), np.array([[1.5]]), np.array([[v]]), np.array([[2.5]]))
    state, conf = classify_means(means, P)
    e = estimate_movement(a, 1.5, v, 2.5, P)
    assert state[0, 0] == int(e.state) and conf[0, 0] == pytest.approx(e.confidence)


# ------------------------------------------------------- state vectors


def _vector(agents, t=45):
    inter = intersection()
    s = make_scenario(inter, {2: (U,) * 91}, agents)
    real = next(i for i in identify_intersections(s) if i.signalized)
    traces = trace_vehicles(real, s)
    return {e.movement: e for e in estimate_state_vector(real, traces, t, P, 91)}


def test_no_vehicles_all_unknown():
    vec = _vector([])
    assert all(e.state == U and e.confidence == 0 for e in vec.values())


def test_through_vehicle_green_only_on_its_movement():
    inter = intersection()
    vec = _vector([vehicle_on(inter, 2, 45.0, 10.0)])
    assert vec[2].state == G
    assert all(e.state == U for k, e in vec.items() if k != 2)


def test_queues_everywhere_red():
    inter = intersection()
    agents = [vehicle_on(inter, m, 3.0, 0.0, agent_id=f"q{m}") for m in range(1, 9)]
    vec = _vector(agents)
    assert {k: e.state for k, e in vec.items() if k <= 8} == {k: R for k in range(1, 9)}
    assert all(vec[k].state == U for k in vec if k > 8)
