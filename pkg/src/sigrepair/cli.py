"""Command-line entry point: ``sigrepair {impute,metrics,simulate,calibrate}``.

Exit codes: 0 success, 1 usage, 2 validation failure, 3 partial failure
(a run aborted on its first bad input because --keep-going was off).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import metrics as M
from .calibrate import ParamGrid, TruthSet, calibrate
from .config import Config, load_config
from .pipeline import analyze_scenario, repair_scenario
from .scenario import ScenarioParseError, ScenarioValidationError, read_scenario, serialize_scenario
from .synthetic import (
    DegradationConfig,
    SimConfig,
    build_intersection,
    default_plans,
    plan_from_dict,
    run_simulation,
    segment_and_degrade,
)

log = logging.getLogger("sigrepair")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_PARTIAL = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ io helpers


def atomic_write(path: Path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def scenario_files(directory: Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CliError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix == ".json" and p.is_file())


def _describe(exc: Exception) -> str:
    if isinstance(exc, ScenarioParseError):
        return f"malformed JSON at byte {exc.offset}: {exc}"
    return str(exc)


def _run_files(
    fn: Callable, items: Sequence, jobs: int, keep_going: bool, label: Callable[[Any], str]
) -> tuple[list, list[dict], bool]:
    """Apply ``fn`` in input order; returns (results, failures, aborted).

    ``fn`` returns ``(ok, payload)``. Without ``keep_going`` the first
    failure stops the run.
    """
    results, failures = [], []

    def handle(item, outcome) -> bool:
        ok, payload = outcome
        if ok:
            results.append(payload)
            return True
        failures.append({"input": label(item), "error": payload})
        log.error("%s: %s", label(item), payload)
        return keep_going

    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for item, outcome in zip(items, pool.map(fn, items)):
                if not handle(item, outcome):
                    return results, failures, True
    else:
        for item in items:
            if not handle(item, fn(item)):
                return results, failures, True
    return results, failures, False


def _finish(failures: list[dict], aborted: bool) -> int:
    if aborted:
        return EXIT_PARTIAL
    return EXIT_VALIDATION if failures else EXIT_OK


# --------------------------------------------------------------------- impute


def _impute_one(args) -> tuple[bool, Any]:
    path, config = args
    try:
        scenario = read_scenario(path)
    except (ScenarioParseError, ScenarioValidationError, OSError) as exc:
        return False, _describe(exc)
    result = repair_scenario(scenario, config)
    return True, (scenario.scenario_id, serialize_scenario(result.scenario), result.log)


def cmd_impute(args, config: Config) -> int:
    files = scenario_files(args.input)
    if not files:
        raise CliError(f"no scenario files in {args.input}")
    out = Path(args.output)
    results, failures, aborted = _run_files(
        _impute_one, [(p, config) for p in files], args.jobs, args.keep_going, lambda a: str(a[0])
    )
    for sid, blob, log_doc in results:
        atomic_write(out / f"{sid}.json", blob)
        atomic_write(out / "logs" / f"{sid}.repair.json", _json(log_doc))
    if failures:
        atomic_write(out / "logs" / "failures.json", _json(failures))
    log.info("impute: %d repaired, %d failed", len(results), len(failures))
    return _finish(failures, aborted)


# -------------------------------------------------------------------- metrics


def _index(directory: Path, keep_going: bool, failures: list[dict]) -> dict:
    found = {}
    for p in scenario_files(directory):
        try:
            s = read_scenario(p)
        except (ScenarioParseError, ScenarioValidationError, OSError) as exc:
            failures.append({"input": str(p), "error": _describe(exc)})
            log.error("%s: %s", p, _describe(exc))
            if not keep_going:
                return found
            continue
        found[s.scenario_id] = s
    return found


def _metrics_one(args) -> tuple[bool, Any]:
    raw, repaired, truth, config, thresholds = args
    analysis = analyze_scenario(raw, config)
    return True, M.scenario_metrics(analysis, repaired, truth, thresholds)


def cmd_metrics(args, config: Config) -> int:
    failures: list[dict] = []
    raw = _index(args.raw, args.keep_going, failures)
    if failures and not args.keep_going:
        return EXIT_PARTIAL
    repaired = _index(args.repaired, args.keep_going, failures)
    if failures and not args.keep_going:
        return EXIT_PARTIAL
    truth = _index(args.truth, args.keep_going, failures) if args.truth else None
    if failures and not args.keep_going:
        return EXIT_PARTIAL
    if not raw:
        raise CliError(f"no scenario files in {args.raw}")
    ids = set(raw)
    mismatched = sorted(ids ^ set(repaired))
    if truth is not None:
        mismatched = sorted(set(mismatched) | (ids ^ set(truth)))
    if mismatched:
        raise CliError(f"scenario ids do not match across directories: {', '.join(mismatched)}")
    thresholds = args.thresholds
    work = [(raw[i], repaired[i], truth[i] if truth else None, config, thresholds) for i in sorted(ids)]
    results, _, _ = _run_files(_metrics_one, work, args.jobs, True, lambda w: w[0].scenario_id)
    report = M.aggregate(results, thresholds)
    out = Path(args.out)
    atomic_write(out / "report.json", report.to_json())
    atomic_write(out / "report.csv", report.to_csv())
    print(M.summary_table(report))
    return _finish(failures, False)


# ------------------------------------------------------------------- simulate


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from None


def cmd_simulate(args, config: Config) -> int:
    sim_doc = _load_json(args.sim_config)
    deg_doc = _load_json(args.degradation)
    if args.seed is not None:
        sim_doc["seed"] = args.seed
        deg_doc["seed"] = args.seed
    try:
        sim_cfg = SimConfig(**sim_doc)
        deg_cfg = DegradationConfig(**deg_doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid simulation settings: {exc}") from None
    if args.plan:
        try:
            plan, name = plan_from_dict(_load_json(args.plan)), Path(args.plan).stem
        except ValueError as exc:
            raise CliError(f"{args.plan}: {exc}") from None
    else:
        plans = default_plans(sim_cfg.template)
        if args.plan_name not in plans:
            raise CliError(f"unknown plan {args.plan_name!r}; built-in plans: {', '.join(plans)}", EXIT_USAGE)
        plan, name = plans[args.plan_name], args.plan_name
    inter = build_intersection(sim_cfg)
    try:
        plan.check_feasible(inter.movements)
    except ValueError as exc:
        raise CliError(f"plan {name}: {exc}") from None
    sim = run_simulation(inter, plan, sim_cfg)
    pairs = segment_and_degrade(sim, deg_cfg, prefix=name)
    out = Path(args.out)
    for sp in pairs:
        sid = sp.scenario.scenario_id
        atomic_write(out / "scenarios" / f"{sid}.json", serialize_scenario(sp.scenario))
        atomic_write(out / "truth" / f"{sid}.json", serialize_scenario(sp.truth))
    summary = {
        "plan": plan.to_dict(),
        "plan_name": name,
        "sim_config": {**asdict(sim_cfg), "demand": dict(sim_cfg.demand)},
        "degradation": asdict(deg_cfg),
        "segments": len(pairs),
        "vehicles": len(sim.vehicles),
        "stop_line_clamps": sim.stop_line_clamps,
        "sdc": {sp.scenario.scenario_id: sp.sdc_id for sp in pairs},
    }
    atomic_write(out / "logs" / "simulate.json", _json(summary))
    log.info("simulate: %d segments written to %s", len(pairs), out)
    return EXIT_OK


# ------------------------------------------------------------------ calibrate


def _truth_set(directory: Path, config: Config) -> TruthSet:
    directory = Path(directory)
    raw_files = scenario_files(directory / "scenarios")
    if not raw_files:
        raise CliError(f"no scenario files in {directory / 'scenarios'}")
    pairs = []
    for p in raw_files:
        t = directory / "truth" / p.name
        if not t.exists():
            raise CliError(f"missing ground truth for {p.name} in {directory / 'truth'}")
        try:
            pairs.append((read_scenario(p), read_scenario(t)))
        except (ScenarioParseError, ScenarioValidationError) as exc:
            raise CliError(f"{p}: {_describe(exc)}") from None
    return TruthSet.build(directory.name, pairs, config)


def cmd_calibrate(args, config: Config) -> int:
    try:
        grid = ParamGrid.from_dict(_load_json(args.grid)) if args.grid else ParamGrid()
    except (TypeError, ValueError) as exc:
        raise CliError(f"grid: {exc}", EXIT_USAGE) from None
    sets = [_truth_set(Path(d), config) for d in args.sets]
    try:
        result = calibrate(grid, sets, config, jobs=args.jobs)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    # flat config keys, so the file can be passed back through --config
    atomic_write(out / "best_params.json", _json(result.best_params()))
    atomic_write(out / "accuracy_table.csv", result.to_csv())
    print(f"best {result.best_params()} mean accuracy {result.best_accuracy:.4f} over {len(grid)} grid points")
    return EXIT_OK


# ---------------------------------------------------------------------- main


def _thresholds(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of seconds: {text!r}") from None
    if not values or any(v < 0 for v in values) or values != sorted(values):
        raise argparse.ArgumentTypeError("thresholds must be non-negative and ascending")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file, one key per parameter")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--keep-going", action="store_true", help="process every input despite failures")
    common.add_argument("--thresholds", type=_thresholds, default=list(M.DEFAULT_THRESHOLDS), help="e.g. 0,1,2,3,4,5")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="sigrepair", description="Repair traffic-signal states in driving scenarios.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("impute", parents=[common], help="repair every scenario in a directory")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_impute)

    s = sub.add_parser("metrics", parents=[common], help="imputation, violation and accuracy report")
    s.add_argument("raw")
    s.add_argument("repaired")
    s.add_argument("--truth")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("simulate", parents=[common], help="synthetic scenarios with ground truth")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--plan", help="plan JSON file")
    g.add_argument("--plan-name", default="fixed_1", help="built-in plan (fixed_1, fixed_2, actuated)")
    s.add_argument("--sim-config", help="JSON with SimConfig fields")
    s.add_argument("--degradation", help="JSON with p_miss, p_err, seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("calibrate", parents=[common], help="grid search against ground-truth sets")
    s.add_argument("--grid", help="JSON mapping parameter -> list of values (default: 960-point grid)")
    s.add_argument("--sets", nargs="+", required=True, help="directories holding scenarios/ and truth/")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(None if argv is None else list(argv))
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        config = load_config(args.config)
    except (OSError, ValueError, TypeError) as exc:
        log.error("config: %s", exc)
        return EXIT_USAGE
    try:
        return args.func(args, config)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
