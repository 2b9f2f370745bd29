import csv
import json
import subprocess
import sys

import pytest

from ld3.cli import main
from ld3.graph import load_fixture, save_dag


def simulate(tmp_path, fixture, n, seed, name="d.csv", extra=()):
    out = tmp_path / name
    assert main(["simulate", "--fixture", fixture, "--n", str(n), "--seed", str(seed), "--out", str(out), *extra]) == 0
    return out


def read_json(path):
    return json.loads(path.read_text())


def test_simulate_shape_and_determinism(tmp_path):
    a = simulate(tmp_path, "fig_c1", 1000, 1, "a.csv")
    b = simulate(tmp_path, "fig_c1", 1000, 1, "b.csv")
    assert a.read_bytes() == b.read_bytes()
    with a.open() as fh:
        rows = list(csv.reader(fh))
    assert len(rows[0]) == 16 and len(rows) == 1001
    assert (tmp_path / "a.schema.json").exists() and (tmp_path / "a.scm.json").exists()


def test_simulate_from_scm_and_drop(tmp_path):
    a = simulate(tmp_path, "sfm5", 200, 2, "a.csv", ["--drop", "W"])
    with a.open() as fh:
        assert next(csv.reader(fh)) == ["C", "X", "M", "Y"]
    out = tmp_path / "b.csv"
    assert main(["simulate", "--scm", str(tmp_path / "a.scm.json"), "--n", "50", "--seed", "2", "--out", str(out)]) == 0
    assert main(["simulate", "--scm", str(tmp_path / "a.scm.json"), "--n", "0", "--seed", "2", "--out", str(out)]) == 2


def test_simulate_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--fixture", "nope", "--n", "5", "--seed", "1"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--fixture", "fig_c1", "--n", "5"])
    assert exc.value.code == 2


def test_discover_fig_c1(tmp_path):
    data = simulate(tmp_path, "fig_c1", 50_000, 1)
    out = tmp_path / "r.json"
    rc = main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--alpha", "0.01", "--out", str(out)])
    rep = read_json(out)
    assert rc == 3 and rep["sdc"] == 1
    truth = {"Z1", "B2", "B3", "Z3c", "Z3d", "Z4b", "M2"}
    pred = set(rep["a_de"])
    tp = len(pred & truth)
    assert 2 * tp / (len(pred) + len(truth)) >= 0.9
    assert "wall_time_ms" in rep["timing"] and "wall_time_ms" not in rep


def test_discover_reruns_identical_except_timing(tmp_path):
    data = simulate(tmp_path, "fig_c1", 2000, 3)
    outs = []
    for name in ("r1.json", "r2.json"):
        out = tmp_path / name
        main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--out", str(out), "--trace", str(tmp_path / (name + ".jsonl"))])
        d = read_json(out)
        d.pop("timing")
        outs.append(d)
    assert outs[0] == outs[1]
    assert (tmp_path / "r1.json.jsonl").read_bytes() == (tmp_path / "r2.json.jsonl").read_bytes()


def test_discover_null_exit_zero_and_oracle(tmp_path):
    data = simulate(tmp_path, "fig_c1_null", 200, 3)
    dag = tmp_path / "g.json"
    save_dag(load_fixture("fig_c1").without_edges([("X", "Y")]), dag)
    out = tmp_path / "r.json"
    rc = main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--test", "oracle", "--dag", str(dag), "--out", str(out)])
    assert rc == 0 and read_json(out)["sdc"] == 0
    rc = main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--test", "oracle", "--dag", str(dag),
               "--sdc-conditioning", "paper_exact", "--out", str(out)])
    assert rc == 3


def test_discover_usage_errors(tmp_path, capsys):
    data = simulate(tmp_path, "fig_c1", 100, 1)
    assert main(["discover", "--data", str(data), "--x", "X", "--y", "X"]) == 2
    assert main(["discover", "--data", str(data), "--x", "X", "--y", "Q"]) == 2
    assert main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--test", "chi2"]) == 2
    assert main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--test", "oracle"]) == 2
    assert main(["discover", "--data", str(tmp_path / "missing.csv"), "--x", "X", "--y", "Y"]) == 2
    assert "error" in capsys.readouterr().err


def test_discover_chi2_with_bins(tmp_path):
    data = simulate(tmp_path, "fig_c1", 5000, 2)
    bins = [f"{c}=3" for c in ("X", "Y", "Z1", "B2", "B3")]
    out = tmp_path / "r.json"
    rc = main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--z", "Z1,B2,B3", "--test", "chi2",
               "--bins", *bins, "--out", str(out)])
    assert rc in (0, 3) and read_json(out)["test"] == "chi2"
    assert main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--bins", "X"]) == 2


def test_estimate_ols_and_report(tmp_path):
    data = simulate(tmp_path, "fig_c1", 100_000, 4)
    rep = tmp_path / "r.json"
    main(["discover", "--data", str(data), "--x", "X", "--y", "Y", "--out", str(rep)])
    out = tmp_path / "e.json"
    assert main(["estimate", "--data", str(data), "--x", "X", "--y", "Y", "--report", str(rep), "--out", str(out)]) == 0
    est = read_json(out)
    assert est["value"] == pytest.approx(1.25, abs=0.02) and est["p_value"] < 0.01
    assert main(["estimate", "--data", str(data), "--x", "X", "--y", "Y", "--adjust", "Z1,B2", "--out", str(out)]) == 0
    assert main(["estimate", "--data", str(data), "--x", "X", "--y", "Y"]) == 2


def test_audit_null_ci_covers_zero(tmp_path):
    data = simulate(tmp_path, "fig_c1_null", 20_000, 5)
    out = tmp_path / "a.json"
    rc = main(["audit", "--data", str(data), "--x", "X", "--y", "Y", "--out", str(out)])
    res = read_json(out)
    assert rc == 0 and res["report"]["sdc"] == 0
    lo, hi = res["estimate"]["ci"]
    assert lo <= 0.0 <= hi


def test_audit_stratified_with_split(tmp_path):
    data = simulate(tmp_path, "sfm5", 1_000_000, 6)
    split = tmp_path / "split.json"
    split.write_text(json.dumps({"s_set": ["C", "W"], "m_set": ["M"]}))
    out = tmp_path / "a.json"
    rc = main(["audit", "--data", str(data), "--x", "X", "--y", "Y", "--test", "chi2", "--estimator", "stratified",
               "--split", str(split), "--n-boot", "50", "--out", str(out)])
    from ld3.scm import fixture_scm, true_wcde_discrete

    res = read_json(out)
    assert rc == 3
    assert res["estimate"]["value"] == pytest.approx(true_wcde_discrete(fixture_scm("sfm5"), "X", "Y"), abs=0.01)
    rc = main(["audit", "--data", str(data), "--x", "X", "--y", "Y", "--test", "chi2", "--estimator", "stratified"])
    assert rc == 2


def test_estimate_failure_exit_4(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("X,Y\n1,0\n1,1\n1,0\n")
    cols = [{"name": c, "type": "categorical", "levels": 2} for c in "XY"]
    (tmp_path / "d.schema.json").write_text(json.dumps({"columns": cols}))
    split = tmp_path / "s.json"
    split.write_text(json.dumps({"s_set": [], "m_set": []}))
    rc = main(["estimate", "--data", str(path), "--x", "X", "--y", "Y", "--estimator", "stratified", "--split", str(split)])
    assert rc == 4
    (tmp_path / "d.schema.json").write_text(json.dumps({"X": "categorical"}))
    assert main(["estimate", "--data", str(path), "--x", "X", "--y", "Y", "--adjust", ""]) == 2


def test_bench_small_suite(tmp_path):
    suite = tmp_path / "s.json"
    suite.write_text(json.dumps({"experiments": [
        {"name": "er", "kind": "er", "n_graphs": 5, "node_min": 5, "node_max": 30, "expected_degree": 2}]}))
    for name in ("o1", "o2"):
        assert main(["bench", "--suite", str(suite), "--out", str(tmp_path / name), "--seed", "9"]) == 0
    for f in ("cells.jsonl", "aggregate.csv", "plot.csv"):
        assert (tmp_path / "o1" / f).read_bytes() == (tmp_path / "o2" / f).read_bytes()
    with (tmp_path / "o1" / "aggregate.csv").open() as fh:
        assert all(float(r["f1_mean"]) == 1.0 for r in csv.DictReader(fh))
    assert main(["bench", "--suite", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o3"), "--seed", "1"]) == 2


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "ld3", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "discover", "estimate", "audit", "bench"):
        assert cmd in res.stdout
