import json
import shutil

import pytest

from sigrepair.cli import EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_VALIDATION, main
from sigrepair.scenario import SignalState, read_scenario

SHORT = {"duration_s": 45.0, "warmup_s": 30.0}


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def _simulate(tmp, name="sim", seed=7, sim=SHORT, degradation=None, extra=()):
    out = tmp / name
    args = ["simulate", "--out", str(out), "--seed", str(seed), "--sim-config", _write(tmp / f"{name}_sim.json", sim)]
    if degradation is not None:
        args += ["--degradation", _write(tmp / f"{name}_deg.json", degradation)]
    assert main([*args, *extra]) == EXIT_OK
    return out


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    return _simulate(tmp_path_factory.mktemp("cli"))


# ------------------------------------------------------------ simulate


def test_simulate_layout(sim_dir):
    scen = sorted((sim_dir / "scenarios").glob("*.json"))
    truth = sorted((sim_dir / "truth").glob("*.json"))
    assert len(scen) == len(truth) == 5  # 45 s / 9 s
    assert [p.name for p in scen] == [p.name for p in truth]
    summary = json.loads((sim_dir / "logs" / "simulate.json").read_text())
    assert summary["segments"] == 5 and summary["plan_name"] == "fixed_1"


def test_simulate_byte_identical_under_seed(tmp_path, sim_dir):
    again = _simulate(tmp_path, "again")
    assert _tree(again) == _tree(sim_dir)


def test_simulate_other_seed_differs(tmp_path, sim_dir):
    other = _simulate(tmp_path, "other", seed=8)
    assert _tree(other) != _tree(sim_dir)


def test_simulate_clean_degradation_equals_truth(tmp_path):
    out = _simulate(tmp_path, degradation={"p_miss": 0.0, "p_err": 0.0})
    for p in (out / "scenarios").glob("*.json"):
        assert p.read_bytes() == (out / "truth" / p.name).read_bytes()


def test_simulate_infeasible_plan_names_phase(tmp_path, caplog):
    plan = {"kind": "fixed", "phases": [{"green": [2, 6], "duration_s": 20}, {"green": [1, 2], "duration_s": 20}]}
    code = main(["simulate", "--out", str(tmp_path / "o"), "--plan", _write(tmp_path / "p.json", plan)])
    assert code == EXIT_VALIDATION
    assert "phase 1 (green [1, 2])" in caplog.text  # index into the phases list


def test_simulate_unknown_plan_name(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "o"), "--plan-name", "nope"]) == EXIT_USAGE


def test_simulate_malformed_plan(tmp_path):
    code = main(["simulate", "--out", str(tmp_path / "o"), "--plan", _write(tmp_path / "p.json", {"phases": []})])
    assert code == EXIT_VALIDATION


def test_simulate_missing_settings_file(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "o"), "--sim-config", str(tmp_path / "nope.json")]) == EXIT_USAGE


def test_simulate_bad_settings(tmp_path):
    code = main(["simulate", "--out", str(tmp_path / "o"), "--degradation", _write(tmp_path / "d.json", {"p_miss": 2})])
    assert code == EXIT_VALIDATION


# -------------------------------------------------------------- impute


def _one(src, tmp, n=1):
    d = tmp / "in"
    d.mkdir()
    for p in sorted((src / "scenarios").glob("*.json"))[:n]:
        shutil.copy(p, d / p.name)
    return d


def test_impute_single_file(sim_dir, tmp_path):
    src = _one(sim_dir, tmp_path)
    out = tmp_path / "out"
    assert main(["impute", str(src), str(out)]) == EXIT_OK
    written = sorted(p.name for p in out.glob("*.json"))
    assert written == sorted(p.name for p in src.glob("*.json"))
    log = json.loads(next((out / "logs").glob("*.repair.json")).read_text())
    assert log["intersections"] and log["intersections"][0]["movements"]


def test_impute_output_has_no_unknown(sim_dir, tmp_path):
    out = tmp_path / "out"
    assert main(["impute", str(sim_dir / "scenarios"), str(out)]) == EXIT_OK
    files = sorted(out.glob("*.json"))
    assert len(files) == 5
    for p in files:
        s = read_scenario(p)
        assert s.raw_signals
        assert all(st != SignalState.UNKNOWN for rec in s.raw_signals for st in rec.states)


def _with_malformed(sim_dir, tmp):
    d = _one(sim_dir, tmp, n=4)
    # sorts between the valid files, so fail-fast stops part way
    names = sorted(p.name for p in d.glob("*.json"))
    bad = d / (names[1][:-5] + "_x.json")
    bad.write_text('{"scenario_id": "broken",, }')
    return d, bad


def test_impute_malformed_keep_going(sim_dir, tmp_path, caplog):
    src, bad = _with_malformed(sim_dir, tmp_path)
    out = tmp_path / "out"
    assert main(["impute", str(src), str(out), "--keep-going"]) == EXIT_VALIDATION
    assert len(list(out.glob("*.json"))) == 4
    failures = json.loads((out / "logs" / "failures.json").read_text())
    assert [f["input"] for f in failures] == [str(bad)]
    assert "byte" in failures[0]["error"]
    assert bad.name in caplog.text


def test_impute_malformed_fail_fast(sim_dir, tmp_path):
    src, _ = _with_malformed(sim_dir, tmp_path)
    out = tmp_path / "out"
    assert main(["impute", str(src), str(out)]) == EXIT_PARTIAL
    assert len(list(out.glob("*.json"))) == 2  # the files sorted before the bad one


def test_impute_empty_input(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["impute", str(tmp_path / "empty"), str(tmp_path / "out")]) == EXIT_VALIDATION


def test_impute_parallel_matches_serial(sim_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["impute", str(sim_dir / "scenarios"), str(a)]) == EXIT_OK
    assert main(["impute", str(sim_dir / "scenarios"), str(b), "--jobs", "2"]) == EXIT_OK
    assert _tree(a) == _tree(b)


def test_impute_idempotent(sim_dir, tmp_path):
    a = tmp_path / "a"
    assert main(["impute", str(sim_dir / "scenarios"), str(a)]) == EXIT_OK
    first = _tree(a)
    assert main(["impute", str(sim_dir / "scenarios"), str(a)]) == EXIT_OK
    assert _tree(a) == first


def test_impute_config_file_applies(sim_dir, tmp_path):
    cfg = _write(tmp_path / "c.json", {"t_yellow": 5})
    assert main(["impute", str(sim_dir / "scenarios"), str(tmp_path / "o"), "--config", cfg]) == EXIT_OK
    assert main(["impute", str(sim_dir / "scenarios"), str(tmp_path / "d")]) == EXIT_OK
    assert _tree(tmp_path / "o") != _tree(tmp_path / "d")


def test_bad_config_is_usage_error(sim_dir, tmp_path):
    cfg = _write(tmp_path / "c.json", {"no_such_key": 1})
    assert main(["impute", str(sim_dir / "scenarios"), str(tmp_path / "o"), "--config", cfg]) == EXIT_USAGE


# ------------------------------------------------------------- metrics


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_metrics_fully_known_eta_zero(tmp_path):
    clean = _simulate(tmp_path, degradation={"p_miss": 0.0, "p_err": 0.0})
    out = tmp_path / "m"
    assert main(["metrics", str(clean / "truth"), str(clean / "truth"), "--out", str(out)]) == EXIT_OK
    rep = _report(out)
    assert rep["eta"] == 0.0 and rep["accuracy"] is None


def test_metrics_with_truth_reports_accuracy(sim_dir, tmp_path):
    rep_dir = tmp_path / "rep"
    assert main(["impute", str(sim_dir / "scenarios"), str(rep_dir)]) == EXIT_OK
    out = tmp_path / "m"
    args = ["metrics", str(sim_dir / "scenarios"), str(rep_dir), "--truth", str(sim_dir / "truth"), "--out", str(out)]
    assert main(args) == EXIT_OK
    rep = _report(out)
    assert 0.0 <= rep["accuracy"] <= 1.0 and rep["scenario_count"] == 5
    assert 0.0 < rep["eta"] < 1.0
    header = (out / "report.csv").read_text().splitlines()[0].split(",")
    assert header[-6:] == [f"xi_{k}s" for k in range(6)]
    assert len(rep["xi_raw"]) == len(rep["xi_repaired"]) == 6


def test_metrics_custom_thresholds(sim_dir, tmp_path):
    out = tmp_path / "m"
    args = ["metrics", str(sim_dir / "scenarios"), str(sim_dir / "truth"), "--out", str(out), "--thresholds", "0,2.5"]
    assert main(args) == EXIT_OK
    assert _report(out)["thresholds"] == [0.0, 2.5]


def test_metrics_id_mismatch_lists_offenders(sim_dir, tmp_path, caplog):
    partial = _one(sim_dir, tmp_path, n=3)
    missing = sorted(p.stem for p in (sim_dir / "scenarios").glob("*.json"))[3:]
    code = main(["metrics", str(sim_dir / "scenarios"), str(partial), "--out", str(tmp_path / "m")])
    assert code == EXIT_VALIDATION
    assert all(sid in caplog.text for sid in missing)


@pytest.mark.parametrize("bad", ["1,0", "a,b", "-1,2", ""])
def test_bad_thresholds_usage_error(bad, tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["metrics", "a", "b", "--out", str(tmp_path), "--thresholds", bad])
    assert err.value.code == EXIT_USAGE


# ----------------------------------------------------------- calibrate


def test_calibrate_singleton_grid(sim_dir, tmp_path):
    combo = {"a_green": 1.5, "a_red": -1.0, "v_green": 3.5, "v_red": 0.5, "theta": 0.8}
    grid = _write(tmp_path / "g.json", {k: [v] for k, v in combo.items()})
    out = tmp_path / "cal"
    assert main(["calibrate", "--grid", grid, "--sets", str(sim_dir), "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "best_params.json").read_text()) == combo
    rows = (out / "accuracy_table.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[0].startswith("a_green,a_red,v_green,v_red,theta,acc_")


def test_calibrate_missing_truth(sim_dir, tmp_path):
    d = tmp_path / "set"
    shutil.copytree(sim_dir / "scenarios", d / "scenarios")
    (d / "truth").mkdir()
    grid = _write(tmp_path / "g.json", {"theta": [1.0]})
    assert main(["calibrate", "--grid", grid, "--sets", str(d), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_calibrate_unknown_grid_key(sim_dir, tmp_path):
    grid = _write(tmp_path / "g.json", {"w_big": [1.0]})
    assert main(["calibrate", "--grid", grid, "--sets", str(sim_dir), "--out", str(tmp_path / "o")]) == EXIT_USAGE


# ---------------------------------------------------------------- usage


@pytest.mark.parametrize("argv", [[], ["nope"], ["impute"], ["impute", "a", "b", "--jobs", "0"]])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as err:
        main(argv)
    assert err.value.code == EXIT_USAGE
