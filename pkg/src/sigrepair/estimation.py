"""Trajectory-only signal estimate per movement and tick.

Each vehicle sample gets two confidence weights: ``f`` from its acceleration
(only near the stop line) and ``g`` from its velocity (distance band that
widens with speed). Weighted means over a window of +-delta_t ticks are then
thresholded into green, red or no estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d

from .config import EstimationParams
from .scenario import SignalState
from .topology import RIGHT, Intersection, VehicleMovementTrace

G, R, UNKNOWN = SignalState.GREEN, SignalState.RED, SignalState.UNKNOWN


def accel_confidence(d, a=None, d_cutoff: float = 30.0):
    """Acceleration confidence f(d, a).

    1 on [0, cutoff/2], quadratic taper to 0 at ``d_cutoff``, 0 once past the
    stop line or beyond the cutoff. ``a`` does not change the value.
    """
    d = np.asarray(d, dtype=float)
    half = d_cutoff / 2
    out = np.where(d <= half, 1.0, (d - d_cutoff) ** 2 / half**2)
    out = np.where((d < 0) | (d > d_cutoff), 0.0, out)
    return out if out.ndim else float(out)


def velocity_zone(v):
    """g0(v): distance within which a vehicle's speed is fully informative.

    Kept exactly as published, including the jump at v = 12 m/s (33 -> 15).
    """
    v = np.asarray(v, dtype=float)
    out = np.where(v <= 12, 3 * (v - 6) ** 2 / 4 + 6, np.minimum(5 * (v - 12) + 15, 30.0))
    return out if out.ndim else float(out)


def velocity_confidence(d, v, d_min: float = -8.0):
    d = np.asarray(d, dtype=float)
    g0 = np.asarray(velocity_zone(v), dtype=float)
    taper = (d - 2 * g0) ** 2 / g0**2
    out = np.where(d <= g0, 1.0, np.where(d <= 2 * g0, taper, 0.0))
    out = np.where(d < d_min, 0.0, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MovementEstimate:
    movement: int
    t: int
    state: SignalState
    confidence: float
    mean_accel: float | None = None
    mean_vel: float | None = None


def _window(t: int, delta_t: int, tick_count: int) -> tuple[int, int]:
    return max(1, t - delta_t), min(tick_count, t + delta_t)


def _weighted_mean(traces, t, params, tick_count, weight_fn, value_attr):
    lo, hi = _window(t, params.delta_t, tick_count)
    num = mass = 0.0
    for tr in traces:
        sel = (tr.ticks >= lo) & (tr.ticks <= hi)
        if not sel.any():
            continue
        w = weight_fn(tr, sel)
        x = getattr(tr, value_attr)[sel]
        if w.sum() <= 0:
            continue
        vehicle_mean = float((w * x).sum() / w.sum())
        peak = float(w.max())
        num += peak * vehicle_mean
        mass += peak
    return (num / mass if mass > 0 else None), mass


def weighted_mean_accel(
    traces: Sequence[VehicleMovementTrace], t: int, params: EstimationParams, tick_count: int
) -> tuple[float | None, float]:
    """Confidence-weighted mean acceleration of one movement at tick ``t``.

    Each vehicle's mean over the window is weighted by its peak ``f`` in the
    window; the second value is the sum of those peaks.
    """
    return _weighted_mean(
        traces, t, params, tick_count,
        lambda tr, sel: np.atleast_1d(accel_confidence(tr.d[sel], tr.a[sel], params.d_cutoff)),
        "a",
    )


def weighted_mean_velocity(
    traces: Sequence[VehicleMovementTrace], t: int, params: EstimationParams, tick_count: int
) -> tuple[float | None, float]:
    return _weighted_mean(
        traces, t, params, tick_count,
        lambda tr, sel: np.atleast_1d(velocity_confidence(tr.d[sel], tr.v[sel], params.d_min)),
        "v",
    )


def estimate_movement(
    mean_accel: float | None,
    accel_mass: float,
    mean_vel: float | None,
    vel_mass: float,
    params: EstimationParams = EstimationParams(),
    movement: int = 0,
    t: int = 0,
) -> MovementEstimate:
    if mean_accel is not None and mean_accel >= params.a_green:
        return MovementEstimate(movement, t, G, accel_mass, mean_accel, mean_vel)
    if mean_accel is not None and mean_accel <= params.a_red:
        return MovementEstimate(movement, t, R, accel_mass, mean_accel, mean_vel)
    if mean_vel is not None and mean_vel >= params.v_green:
        return MovementEstimate(movement, t, G, vel_mass, mean_accel, mean_vel)
    if mean_vel is not None and mean_vel <= params.v_red:
        return MovementEstimate(movement, t, R, vel_mass, mean_accel, mean_vel)
    return MovementEstimate(movement, t, UNKNOWN, 0.0, mean_accel, mean_vel)


def estimate_state_vector(
    intersection: Intersection,
    traces: Sequence[VehicleMovementTrace],
    t: int,
    params: EstimationParams,
    tick_count: int,
) -> list[MovementEstimate]:
    """x_est(t) and c(t) for every movement of ``intersection`` (rights carry no estimate)."""
    out = []
    for m in intersection.movements:
        if m.turn == RIGHT:
            out.append(MovementEstimate(m.index, t, UNKNOWN, 0.0))
            continue
        mine = [tr for tr in traces if tr.movement == m.index]
        a_bar, sf = weighted_mean_accel(mine, t, params, tick_count)
        v_bar, sg = weighted_mean_velocity(mine, t, params, tick_count)
        out.append(estimate_movement(a_bar, sf, v_bar, sg, params, m.index, t))
    return out


# ------------------------------------------------------- whole-sequence variant


@dataclass(frozen=True)
class MovementMeans:
    """Per-tick weighted means for movements (rows) over ticks 1..T (columns).

    Means are NaN where no vehicle carries weight.
    """

    movements: tuple[int, ...]
    mean_accel: np.ndarray
    accel_mass: np.ndarray
    mean_vel: np.ndarray
    vel_mass: np.ndarray


def _windowed(weights: np.ndarray, values: np.ndarray, delta_t: int):
    """Per-tick (vehicle-mean weighted by peak weight, total peak) for one movement."""
    size = 2 * delta_t + 1
    T = weights.shape[1]
    j = np.arange(T)
    lo, hi = np.maximum(j - delta_t, 0), np.minimum(j + delta_t, T - 1) + 1

    def window_sum(x):
        c = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
        return c[:, hi] - c[:, lo]

    sw = window_sum(weights)
    swx = window_sum(weights * values)
    peak = maximum_filter1d(weights, size=size, axis=1, mode="constant", cval=0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        vehicle_mean = np.where(sw > 1e-12, swx / np.where(sw > 1e-12, sw, 1.0), 0.0)
    mass = peak.sum(axis=0)
    num = (peak * vehicle_mean).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(mass > 0, num / np.where(mass > 0, mass, 1.0), np.nan)
    return mean, mass


def movement_means(
    intersection: Intersection,
    traces: Sequence[VehicleMovementTrace],
    params: EstimationParams,
    tick_count: int,
) -> MovementMeans:
    """Vectorised equivalent of calling both weighted means at every tick."""
    moves = tuple(m.index for m in intersection.non_right)
    T = tick_count
    shape = (len(moves), T)
    ma, fa, mv, gv = (np.full(shape, np.nan), np.zeros(shape), np.full(shape, np.nan), np.zeros(shape))
    for row, idx in enumerate(moves):
        mine = [tr for tr in traces if tr.movement == idx]
        if not mine:
            continue
        F = np.zeros((len(mine), T))
        Gw = np.zeros((len(mine), T))
        A = np.zeros((len(mine), T))
        V = np.zeros((len(mine), T))
        for k, tr in enumerate(mine):
            cols = tr.ticks - 1
            F[k, cols] = accel_confidence(tr.d, tr.a, params.d_cutoff)
            Gw[k, cols] = velocity_confidence(tr.d, tr.v, params.d_min)
            A[k, cols] = tr.a
            V[k, cols] = tr.v
        ma[row], fa[row] = _windowed(F, A, params.delta_t)
        mv[row], gv[row] = _windowed(Gw, V, params.delta_t)
    return MovementMeans(moves, ma, fa, mv, gv)


def classify_means(means: MovementMeans, params: EstimationParams) -> tuple[np.ndarray, np.ndarray]:
    """Apply the area rules to every (movement, tick): returns (state codes, confidence)."""
    a, v = means.mean_accel, means.mean_vel
    has_a, has_v = ~np.isnan(a), ~np.isnan(v)
    a0, v0 = np.where(has_a, a, 0.0), np.where(has_v, v, 0.0)
    area1 = has_a & (a0 >= params.a_green)
    area2 = has_a & (a0 <= params.a_red) & ~area1
    rest = ~(area1 | area2)
    area3 = rest & has_v & (v0 >= params.v_green)
    area4 = rest & has_v & (v0 <= params.v_red) & ~area3
    state = np.full(a.shape, int(UNKNOWN), dtype=np.int8)
    state[area1 | area3] = int(G)
    state[area2 | area4] = int(R)
    conf = np.zeros(a.shape)
    conf[area1 | area2] = means.accel_mass[area1 | area2]
    conf[area3 | area4] = means.vel_mass[area3 | area4]
    return state, conf
