import json

import numpy as np
import pytest
import yaml

from doekit import cli, scenario
from doekit.scenario import (ConfigError, build_design, build_feeder, draw_groups, group_size,
                             load_config, run_solve, run_sweep)

FAST = {"stress": {"count": 200}, "volume": {"sample_budget": 20000}}


def _strip(report):
    report = dict(report)
    report.pop("timing", None)
    return cli.dumps(report)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_config({"nonsense": 1})
    with pytest.raises(ConfigError):
        load_config({"fairness": {"sigma_plus": 2.0}})
    with pytest.raises(ConfigError):
        load_config({"partition": {"fraction": 1.5}})
    with pytest.raises(ConfigError):
        load_config({"v_band": [1.01, 1.05]})
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.yaml")
    cfg = load_config("basecase")
    with pytest.raises(ConfigError, match="unknown coordinated"):
        build_design(cfg.with_overrides({"partition": {"coordinated": ["NOPE"]}}))
    with pytest.raises(ConfigError, match="axis"):
        run_sweep(cfg, "bogus")


def test_overrides_merge_deeply():
    cfg = load_config("basecase").with_overrides({"limits": {"p_max_kw": 3.0}})
    assert cfg["limits"]["p_max_kw"] == 3.0 and cfg["limits"]["q_max_kvar"] == 2.0


def test_feeder_applies_limits_and_loads():
    cfg = load_config("basecase")
    f = build_feeder(cfg)
    s = f.s_base_kva
    cust = f.customer_index
    np.testing.assert_allclose(f.p_max[cust] * s, 5.0)
    p_load = -f.s_fixed[cust] * s
    assert np.all((p_load >= 0) & (p_load <= 1.0))
    q_load = -f.s_fixed[f.n + cust] * s
    np.testing.assert_allclose(q_load, p_load * np.tan(np.arccos(0.95)))
    doubled = build_feeder(cfg.with_overrides({"fixed_load": {"loading": 2.0}}))
    np.testing.assert_allclose(doubled.s_fixed, 2 * f.s_fixed)


def test_groups_are_deterministic_and_distinct(basecase):
    _, design, _ = basecase
    f = design.feeder
    a = draw_groups(f, 0.3, 10, seed=0, key=300)
    assert a == draw_groups(f, 0.3, 10, seed=0, key=300)
    assert all(len(g) == group_size(0.3, 55) == 16 for g in a)
    assert len({tuple(g) for g in a}) == len(a)
    assert len(draw_groups(f, 1.0, 10, seed=0)) == 1


def test_basecase_report():
    rep = run_solve(load_config("basecase").with_overrides(FAST))
    sol = rep["solution"]
    assert np.array(sol["W_kw"]).shape == (3, 3)
    assert len(sol["intervals"]) == 52
    assert rep["flags"]["nominal_problem"] and rep["flags"]["homogeneous_limits"]
    assert rep["stress"]["within_limits"]
    assert rep["metrics"]["aggregate_range"]["span_kw"] > 0
    assert all(iv["p_minus_kw"] <= 0 <= iv["p_plus_kw"] for iv in sol["intervals"])


def test_report_is_deterministic():
    cfg = load_config("basecase").with_overrides(FAST)
    assert _strip(run_solve(cfg)) == _strip(run_solve(cfg))


def test_cli_solve_and_report(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = tmp_path / "fast.yaml"
    doc = load_config("basecase").to_document()
    doc.update(FAST)
    cfg.write_text(yaml.safe_dump(doc))
    assert cli.main(["solve", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["scenario"] == "basecase"
    for name in ("intervals", "coordinated", "stress_nodes", "stress_lines"):
        assert (out / f"{name}.csv").stat().st_size > 0
    (out / "intervals.csv").unlink()
    assert cli.main(["report", "--input", str(out)]) == 0
    assert (out / "intervals.csv").exists()
    assert "span" in capsys.readouterr().out


def test_cli_build(tmp_path):
    assert cli.main(["build", "--out", str(tmp_path)]) == 0
    cs = json.loads((tmp_path / "constraints.json").read_text())
    assert len(cs["c"]) == len(cs["A"]) and (tmp_path / "feeder.json").exists()


def test_cli_exit_codes(tmp_path):
    missing_feeder = tmp_path / "scn.yaml"
    missing_feeder.write_text("feeder: nowhere.json\n")
    assert cli.main(["solve", "--config", str(missing_feeder), "--out", str(tmp_path)]) == 1
    assert cli.main(["solve", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == 1
    heavy = tmp_path / "heavy.yaml"
    heavy.write_text("fixed_load: {p_kw: [40.0, 50.0], loading: 1.0}\n")
    assert cli.main(["solve", "--no-stress", "--config", str(heavy), "--out", str(tmp_path)]) == 2


def test_tiny_sweeps(tmp_path):
    cfg = load_config("basecase").with_overrides({
        "volume": {"sample_budget": 5000},
        "sweeps": {"coordination": {"levels": [0.05], "trials": 2},
                   "fairness": {"sigma": [1.0, 0.0]},
                   "uncertainty": {"eta": [0.3], "gamma": [0, 20], "loading": [1.0]}}})
    serial = run_sweep(cfg, "coordination", jobs=1)
    parallel = run_sweep(cfg, "coordination", jobs=2)
    assert [r.get("span_kw") for r in serial["rows"]] == [r.get("span_kw") for r in parallel["rows"]]
    assert len(serial["rows"]) == 3 and serial["summary"][0]["trials"] == 2
    fair = run_sweep(cfg, "fairness")
    assert fair["rows"][1]["gini"] <= fair["rows"][0]["gini"]
    unc = run_sweep(cfg, "uncertainty")
    assert unc["summary"][0]["reduction_pct"] > 0
    path = tmp_path / "sweep.json"
    path.write_text(cli.dumps(fair))
    assert cli.main(["report", "--input", str(path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sweep_fairness.csv").exists()


def test_cli_sweep_writes_tables(tmp_path):
    doc = load_config("basecase").to_document()
    doc["sweeps"] = {"coordination": {"levels": [0.05], "trials": 1}}
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump(doc))
    assert cli.main(["sweep", "--axis", "coordination", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for name in ("sweep_coordination.json", "sweep_coordination.csv", "sweep_coordination_summary.csv"):
        assert (tmp_path / name).exists()


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "doekit", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep" in res.stdout
    assert scenario.SWEEPS.keys() == {"coordination", "uncertainty", "fairness"}
