"""Grid search of the estimation thresholds and theta over the three built-in plans.

    python scripts/run_calibration.py --minutes 10 --jobs 4 --out results/calibration
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from sigrepair.calibrate import ParamGrid, TruthSet, calibrate
from sigrepair.config import Config
from sigrepair.synthetic import DegradationConfig, SimConfig, build_intersection, default_plans, run_simulation, segment_and_degrade

log = logging.getLogger("calibration")

PLAN_SEED = {"fixed_1": 11, "fixed_2": 12, "actuated": 13}


def truth_set(name: str, template: str, minutes: float, limit: int | None) -> TruthSet:
    seed = PLAN_SEED[name]
    cfg = SimConfig(template=template, seed=seed, duration_s=60.0 * minutes)
    sim = run_simulation(build_intersection(cfg), default_plans(template)[name], cfg)
    pairs = segment_and_degrade(sim, DegradationConfig(seed=seed), prefix=name)[:limit]
    log.info("%s: %d segments", name, len(pairs))
    return TruthSet.build(name, [(sp.scenario, sp.truth) for sp in pairs])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--template", default="four-way", choices=["four-way", "T"])
    ap.add_argument("--minutes", type=float, default=10.0)
    ap.add_argument("--segments", type=int, default=None, help="use only the first N segments per plan")
    ap.add_argument("--grid", type=Path, help="JSON mapping parameter -> values (default: 960-point grid)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    grid = ParamGrid.from_dict(json.loads(args.grid.read_text())) if args.grid else ParamGrid()
    sets = [truth_set(name, args.template, args.minutes, args.segments) for name in PLAN_SEED]
    result = calibrate(grid, sets, Config(), jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "best_params.json").write_text(json.dumps(result.best_params(), indent=2, sort_keys=True) + "\n")
    (args.out / "accuracy_table.csv").write_text(result.to_csv())
    print(f"best {result.best_params()} mean accuracy {result.best_accuracy:.4f} over {len(grid)} grid points")


if __name__ == "__main__":
    main()
