"""Fuse raw and estimated states into one conflict-free state per tick.

Raw and estimated colours are first merged movement by movement into an
imputed state with a weight expressing how sure we are of it. Each tick is then
snapped to the ring-and-barrier configuration that agrees with the heaviest
imputed states (highest match score, then lowest conflict score).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import FusionParams
from .scenario import SignalState
from .topology import LEFT, RIGHT, THROUGH, Intersection, Movement, right_turn_source

G, Y, R, UNKNOWN = SignalState.GREEN, SignalState.YELLOW, SignalState.RED, SignalState.UNKNOWN

# scores within this relative distance are treated as tied
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class ImputedMovement:
    state: SignalState
    weight: float


@dataclass(frozen=True)
class FeasibleState:
    """A ring-and-barrier configuration: ``greens`` are G, every other listed movement R."""

    greens: frozenset[int]
    movements: tuple[int, ...]

    def state(self, index: int) -> SignalState:
        return G if index in self.greens else R

    @property
    def codes(self) -> np.ndarray:
        return np.array([int(self.state(i)) for i in self.movements], dtype=np.int8)


def _as_color(state: SignalState) -> SignalState:
    return G if state == Y else state


def impute_movement(
    m_raw: SignalState, m_est: SignalState, c: float, params: FusionParams = FusionParams()
) -> ImputedMovement:
    c = min(c, params.confidence_cap)
    if m_raw == UNKNOWN:
        if m_est == UNKNOWN:
            return ImputedMovement(UNKNOWN, 0.0)
        return ImputedMovement(m_est, c)
    if m_est == UNKNOWN:
        return ImputedMovement(m_raw, params.w_small)
    if _as_color(m_raw) == m_est:
        return ImputedMovement(m_raw, params.w_big)
    if c >= params.theta:
        return ImputedMovement(m_est, c)
    return ImputedMovement(m_raw, 0.0)


def impute_arrays(raw: np.ndarray, est: np.ndarray, conf: np.ndarray, params: FusionParams):
    """Array form of :func:`impute_movement`; returns (state codes, weights)."""
    conf = np.minimum(conf, params.confidence_cap)
    raw_c = np.where(raw == int(Y), int(G), raw)
    raw_known, est_known = raw != int(UNKNOWN), est != int(UNKNOWN)
    agree = raw_known & est_known & (raw_c == est)
    disagree = raw_known & est_known & ~agree
    correct = disagree & (conf >= params.theta)
    state = np.where(raw_known, raw, est).astype(np.int8)
    state[correct] = est[correct]
    weight = np.zeros(raw.shape)
    weight[~raw_known & est_known] = conf[~raw_known & est_known]
    weight[raw_known & ~est_known] = params.w_small
    weight[agree] = params.w_big
    weight[correct] = conf[correct]
    return state, weight


# ------------------------------------------------------------ feasible set


def _street_templates(street: Sequence[Movement]):
    approaches: dict[int, dict[str, int]] = {}
    for m in street:
        approaches.setdefault(m.approach, {})[m.turn] = m.index
    # approach holding the smallest index plays side "a"
    order = sorted(approaches, key=lambda a: min(approaches[a].values()))
    a = approaches[order[0]]
    b = approaches[order[1]] if len(order) > 1 else {}
    la, ta, lb, tb = a.get(LEFT), a.get(THROUGH), b.get(LEFT), b.get(THROUGH)
    pairs = [(la, lb), (la, ta), (lb, tb), (ta, tb)]
    full = (la, ta, lb, tb)
    return pairs, full


def _reduce(template) -> tuple[frozenset[int], bool]:
    present = frozenset(i for i in template if i is not None)
    return present, len(present) < len(template)


def generate_feasible_set(movements: Sequence[Movement]) -> list[FeasibleState]:
    """Ring-and-barrier configurations for the given movements.

    Per street: both lefts, each approach's left+through, both throughs, and
    all four together. Absent movements are dropped from each set; a set that
    lost members and is contained in another set of its street is discarded.
    Order: every street's pair sets, then every street's four-movement set.
    """
    non_right = [m for m in movements if m.turn != RIGHT]
    if not non_right:
        raise ValueError("no non-right movements to build a feasible set from")
    order = tuple(sorted(m.index for m in non_right))
    streets: dict[int, list[Movement]] = {}
    for m in non_right:
        streets.setdefault(m.street_group, []).append(m)
    street_keys = sorted(streets, key=lambda k: min(m.index for m in streets[k]))

    per_street: dict[int, list[tuple[frozenset[int], bool, int]]] = {}
    for k in street_keys:
        pairs, full = _street_templates(streets[k])
        items = [(*_reduce(p), 0) for p in pairs] + [(*_reduce(full), 1)]
        merged: dict[frozenset[int], list] = {}
        for greens, degenerate, stage in items:
            if not greens:
                continue
            if greens in merged:
                merged[greens][0] &= degenerate
            else:
                merged[greens] = [degenerate, stage]
        kept = []
        for greens, (degenerate, stage) in merged.items():
            if degenerate and any(greens < other for other in merged):
                continue
            kept.append((greens, degenerate, stage))
        per_street[k] = kept

    out: list[FeasibleState] = []
    for stage in (0, 1):
        for k in street_keys:
            out.extend(FeasibleState(g, order) for g, _, s in per_street[k] if s == stage)
    return out


def feasible_matrix(feasible: Sequence[FeasibleState]) -> np.ndarray:
    """(F, N) state codes of the feasible configurations."""
    return np.stack([f.codes for f in feasible])


# ------------------------------------------------------------ scoring / selection


def score(imp: Sequence[SignalState], w: Sequence[float], feas: FeasibleState | Sequence[SignalState]):
    """(match, conflict) of one imputed vector against one configuration."""
    if isinstance(feas, FeasibleState):
        feas = [feas.state(i) for i in feas.movements]
    s_match = s_conflict = 0.0
    for m_imp, wi, m_feas in zip(imp, w, feas):
        if m_imp == UNKNOWN:
            continue
        if _as_color(m_imp) == _as_color(m_feas):
            s_match += wi
        else:
            s_conflict += wi
    return s_match, s_conflict


def _ties(values: np.ndarray, target: float) -> np.ndarray:
    return np.abs(values - target) <= TIE_RTOL * max(1.0, abs(target))


def _pick(match: np.ndarray, conflict: np.ndarray, previous: int | None) -> int:
    gamma = _ties(match, match.max())
    best_conflict = conflict[gamma].min()
    minimizers = gamma & _ties(conflict, best_conflict)
    if previous is not None and minimizers[previous]:
        return previous
    return int(np.flatnonzero(minimizers)[0])


def select_state(
    imp: Sequence[SignalState],
    w: Sequence[float],
    feasible: Sequence[FeasibleState],
    previous: FeasibleState | None = None,
) -> FeasibleState:
    if not feasible:
        raise ValueError("empty feasible set")
    scores = np.array([score(imp, w, f) for f in feasible])
    prev = None
    if previous is not None:
        for k, f in enumerate(feasible):
            if f.greens == previous.greens:
                prev = k
                break
    return feasible[_pick(scores[:, 0], scores[:, 1], prev)]


def select_sequence(imp: np.ndarray, w: np.ndarray, feas: np.ndarray) -> np.ndarray:
    """Index into ``feas`` chosen at each tick; ``imp``/``w`` are (T, N)."""
    imp_c = np.where(imp == int(Y), int(G), imp)
    known = imp_c != int(UNKNOWN)
    eq = imp_c[:, None, :] == feas[None, :, :]
    wk = np.where(known, w, 0.0)[:, None, :]
    match = (wk * eq).sum(axis=2)
    conflict = (wk * ~eq).sum(axis=2)
    chosen = np.empty(len(imp), dtype=int)
    prev = None
    for t in range(len(imp)):
        prev = chosen[t] = _pick(match[t], conflict[t], prev)
    return chosen


def fuse_scenario(
    intersection: Intersection,
    raw: np.ndarray,
    est: np.ndarray,
    conf: np.ndarray,
    params: FusionParams = FusionParams(),
    feasible: Sequence[FeasibleState] | None = None,
) -> np.ndarray:
    """Final G/R states, shape (T, len(intersection.movements)).

    ``raw``, ``est`` and ``conf`` are (T, N) over the non-right movements in
    ascending index order. Right turns copy their source movement.
    """
    feasible = list(feasible) if feasible is not None else generate_feasible_set(intersection.movements)
    feas = feasible_matrix(feasible)
    imp, w = impute_arrays(raw, est, conf, params)
    chosen = select_sequence(imp, w, feas)
    return expand_right_turns(intersection, feas[chosen])


def expand_right_turns(intersection: Intersection, states: np.ndarray) -> np.ndarray:
    """Widen (T, N non-right) states to all movements, right turns copying their source."""
    cols = {m.index: k for k, m in enumerate(sorted(intersection.non_right, key=lambda m: m.index))}
    out = np.empty((states.shape[0], len(intersection.movements)), dtype=np.int8)
    for k, m in enumerate(intersection.movements):
        if m.turn != RIGHT:
            out[:, k] = states[:, cols[m.index]]
            continue
        src = right_turn_source(intersection, m)
        out[:, k] = states[:, cols[src.index]] if src is not None else int(G)
    return out
