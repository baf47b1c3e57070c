"""Grid search over the estimation thresholds and the correction threshold.

Topology, traces and windowed means do not depend on the searched parameters,
so each scenario is analysed once and every grid point only re-runs
classification, fusion and post-processing.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .config import Config, EstimationParams
from .metrics import accuracy_counts
from .pipeline import ScenarioAnalysis, analyze_scenario, lane_counts, movement_states, repair_intersection
from .scenario import Scenario

log = logging.getLogger(__name__)

GRID_KEYS = ("a_green", "a_red", "v_green", "v_red", "theta")


def _steps(lo: float, hi: float, step: float) -> tuple[float, ...]:
    n = int(round((hi - lo) / step))
    return tuple(round(lo + k * step, 10) for k in range(n + 1))


@dataclass(frozen=True)
class ParamGrid:
    """Cartesian grid; enumeration order is ``itertools.product`` over GRID_KEYS."""

    a_green: tuple[float, ...] = _steps(0.5, 2.0, 0.5)
    a_red: tuple[float, ...] = _steps(-2.0, -0.5, 0.5)
    v_green: tuple[float, ...] = _steps(3.0, 5.0, 0.5)
    v_red: tuple[float, ...] = _steps(0.5, 2.0, 0.5)
    theta: tuple[float, ...] = (0.8, 1.0, 1.2)

    def __len__(self) -> int:
        return int(np.prod([len(getattr(self, k)) for k in GRID_KEYS]))

    def __iter__(self) -> Iterator[dict[str, float]]:
        for combo in itertools.product(*(getattr(self, k) for k in GRID_KEYS)):
            yield dict(zip(GRID_KEYS, combo))

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[float]]) -> "ParamGrid":
        unknown = sorted(set(d) - set(GRID_KEYS))
        if unknown:
            raise ValueError(f"unknown grid keys: {', '.join(unknown)}")
        return cls(**{k: tuple(float(x) for x in v) for k, v in d.items()})

    def to_dict(self) -> dict[str, list[float]]:
        return {k: list(getattr(self, k)) for k in GRID_KEYS}


@dataclass
class TruthSet:
    """One scenario set (e.g. one signal plan) with ground truth for every scenario."""

    name: str
    analyses: list[ScenarioAnalysis]
    truth: list[np.ndarray] = field(default_factory=list)  # per analysis, per intersection

    @classmethod
    def build(cls, name: str, pairs: Sequence[tuple[Scenario, Scenario]], config: Config = Config()) -> "TruthSet":
        """``pairs`` are (raw, truth) scenarios."""
        analyses, truth = [], []
        for raw, gt in pairs:
            an = analyze_scenario(raw, config)
            analyses.append(an)
            truth.append([movement_states(ia.intersection, gt) for ia in an.intersections])
        return cls(name, analyses, truth)


def set_accuracy(ts: TruthSet, config: Config) -> float:
    correct = total = 0.0
    for an, truths in zip(ts.analyses, ts.truth):
        T = an.scenario.tick_count
        for ia, gt in zip(an.intersections, truths):
            rep = repair_intersection(ia, config, T)
            cols = [k for k, m in enumerate(ia.intersection.movements) if m in ia.intersection.non_right]
            c, t = accuracy_counts(gt, rep.final[:, cols], lane_counts(ia.intersection))
            correct += c
            total += t
    return correct / total if total else 1.0


def _with_params(base: Config, combo: Mapping[str, float]) -> Config:
    return base.replace(**combo)


def _evaluate(args) -> tuple[int, list[float] | None, str | None]:
    k, combo, sets, base = args
    try:
        config = _with_params(base, combo)
    except ValueError as exc:  # e.g. v_red >= v_green
        return k, None, str(exc)
    return k, [set_accuracy(ts, config) for ts in sets], None


@dataclass
class CalibrationResult:
    best: EstimationParams
    best_theta: float
    best_accuracy: float
    rows: list[dict]  # one per grid point, in enumeration order
    set_names: list[str]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*GRID_KEYS, *(f"acc_{n}" for n in self.set_names), "mean_accuracy", "note"])
        for r in self.rows:
            accs = r["accuracies"] or [None] * len(self.set_names)
            w.writerow(
                [
                    *(f"{r[k]:g}" for k in GRID_KEYS),
                    *("" if a is None else f"{a:.6f}" for a in accs),
                    "" if r["mean"] is None else f"{r['mean']:.6f}",
                    r["note"] or "",
                ]
            )
        return buf.getvalue()

    def best_params(self) -> dict[str, float]:
        d = {k: getattr(self.best, k) for k in GRID_KEYS if k != "theta"}
        d["theta"] = self.best_theta
        return d


def calibrate(grid: ParamGrid, sets: Sequence[TruthSet], base: Config = Config(), jobs: int = 1) -> CalibrationResult:
    """Best combination by mean accuracy across ``sets``.

    Ties go to the lower theta, then to the earlier grid point. Combinations
    that violate parameter invariants are kept in the table but never win.
    """
    combos = list(grid)
    if not combos:
        raise ValueError("empty parameter grid")
    if not sets:
        raise ValueError("no scenario sets to calibrate against")
    work = [(k, c, sets, base) for k, c in enumerate(combos)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_evaluate(w) for w in work]

    rows, best_key, best_k = [], None, None
    for k, accs, note in sorted(results, key=lambda r: r[0]):
        mean = float(np.mean(accs)) if accs is not None else None
        rows.append({**combos[k], "accuracies": accs, "mean": mean, "note": note})
        if mean is None:
            continue
        key = (-mean, combos[k]["theta"], k)
        if best_key is None or key < best_key:
            best_key, best_k = key, k
    if best_k is None:
        raise ValueError("no grid point satisfies the parameter invariants")
    combo = combos[best_k]
    est = _with_params(base, combo).estimation
    log.info("calibration: best %s with mean accuracy %.4f", combo, rows[best_k]["mean"])
    return CalibrationResult(est, combo["theta"], rows[best_k]["mean"], rows, [s.name for s in sets])
