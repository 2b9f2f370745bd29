"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line at session end."""
import itertools
from collections import defaultdict

import numpy as np
import pytest

from conftest import random_dag, unlabeled_dags
from ld3.algorithm import Ld3Config, run_ld3
from ld3.citest import CiQuery, chi_square, fisher_z
from ld3.estimate import AdjustmentSpec, wcde_stratified
from ld3.evalkit import brute_force_parents, linear_fit, load_suite, run_benchmark, vas_violations
from ld3.graph import d_separated, d_separated_by_paths, load_fixture, random_er_dag
from ld3.scm import Dataset, fixture_scm, sample, true_wcde_discrete
from ld3.sweep import exhaustive_sweep, graph_from_code, iter_codes

ORACLE = Ld3Config(test="oracle")
pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def oracle_er():
    return run_benchmark(load_suite("oracle_er"))


@pytest.fixture(scope="module")
def sweeps():
    return {n: exhaustive_sweep(n) for n in range(2, 8)}


def _agg(res, experiment, drop=""):
    return {r["n"]: r for r in res.aggregate if r["experiment"] == experiment and r["drop"] == drop}


# 1 ----------------------------------------------------------------------------


def test_criterion_01_oracle_exactness(acceptance, oracle_er, sweeps):
    er_ok = all(
        r["metrics"]["f1"] == r["metrics"]["precision"] == r["metrics"]["recall"] == r["metrics"]["sdc_accuracy"] == 1.0
        for r in oracle_er.records
    )
    requested = [r["n_nodes"] for r in oracle_er.records]
    sizes = [r["nodes"] for r in oracle_er.records]
    sweep_ok = all(s.a_de_mismatches == 0 and s.sdc_mismatches == 0 and s.f1 == 1.0 for s in sweeps.values())
    # library implementation, independent of the kernels, on every covering graph up to six nodes
    lib_bad = 0
    lib_graphs = 0
    for n in range(2, 7):
        for code, xpos, ypar in iter_codes(n):
            g = graph_from_code(n, code, xpos, ypar)
            rep = run_ld3(g, "X", "Y", cfg=ORACLE)
            lib_graphs += 1
            lib_bad += set(rep.a_de) != g.parents("Y") - {"X"} or rep.sdc != int(g.has_edge("X", "Y"))
    ok = er_ok and sweep_ok and lib_bad == 0 and len(oracle_er.records) == 90
    total = sum(s.graphs for s in sweeps.values())
    acceptance(
        1,
        ok,
        f"ER suite {len(oracle_er.records)} graphs (requested {min(requested)}-{max(requested)} nodes, "
        f"{min(sizes)}-{max(sizes)} after removing de(Y)) exact={er_ok}; "
        f"{total} covering graphs <=7 nodes: {sum(s.a_de_mismatches for s in sweeps.values())} A_DE / "
        f"{sum(s.sdc_mismatches for s in sweeps.values())} SDC mismatches; library on {lib_graphs} graphs <=6: {lib_bad} mismatches",
    )
    assert ok


# 2 ----------------------------------------------------------------------------


def test_criterion_02_linear_test_complexity(acceptance, oracle_er, sweeps):
    bound_er = all(r["report"]["test_count"] <= 7 * r["z_size"] + 1 for r in oracle_er.records)
    bound_sweep = all(s.max_excess_tests <= 0 for s in sweeps.values())
    by_z = defaultdict(list)
    for r in oracle_er.records:
        by_z[r["z_size"]].append(r["report"]["test_count"])
    zs = sorted(by_z)
    slope, _, r2 = linear_fit(zs, [np.mean(by_z[z]) for z in zs])
    ok = bound_er and bound_sweep and r2 >= 0.95
    acceptance(2, ok, f"bound held on ER suite and all sweeps; mean tests vs |Z| slope {slope:.3f}, R^2 {r2:.4f}")
    assert ok


# 3 ----------------------------------------------------------------------------


def test_criterion_03_cross_oracle_equivalence(acceptance):
    bad = []
    for seed in range(1000):
        n = 5 + seed % 96
        g = random_er_dag(n, min(1.0, (2.0 + seed % 3) / (n - 1)), 10_000 + seed)
        rep = run_ld3(g, g.x, g.y, cfg=ORACLE)
        if set(brute_force_parents(g, g.x, g.y, test="oracle")) != set(rep.a_de):
            bad.append(seed)
    for name in ("fig_c1", "fig_d5"):
        g = load_fixture(name)
        if set(brute_force_parents(g, "X", "Y", test="oracle")) != set(run_ld3(g, "X", "Y", cfg=ORACLE).a_de):
            bad.append(name)
    acceptance(3, not bad, f"1000 ER DAGs + 2 fixtures, {len(bad)} disagreements")
    assert not bad


# 4 ----------------------------------------------------------------------------


def test_criterion_04_vas_property(acceptance, sweeps):
    sweep_bad = sum(s.vas_violations for s in sweeps.values())
    fixture_bad = {}
    for name in ("fig_c1", "fig_d5"):
        g = load_fixture(name)
        for h in (g, g.without_edges([("X", "Y")])):
            rep = run_ld3(h, "X", "Y", cfg=ORACLE)
            fixture_bad[name] = fixture_bad.get(name, 0) + len(vas_violations(h, "X", "Y", rep.a_de))
    ok = sweep_bad == 0 and not any(fixture_bad.values())
    acceptance(4, ok, f"{sum(s.graphs for s in sweeps.values())} covering graphs <=7 nodes: {sweep_bad} violations; fixtures: {fixture_bad}")
    assert ok


# 5 ----------------------------------------------------------------------------


def test_criterion_05_finite_sample_convergence(acceptance):
    res = run_benchmark(load_suite("convergence_c1"))
    agg = _agg(res, "convergence_c1")
    ns = sorted(agg)
    f1 = [agg[n]["f1_median"] for n in ns]
    sdc = [agg[n]["sdc_accuracy_mean"] for n in ns]
    wcde = agg[50_000]["wcde_mean"]
    mono = all(a <= b for a, b in zip(f1, f1[1:])) and all(a <= b for a, b in zip(sdc, sdc[1:]))
    ok = mono and f1[-1] >= 0.95 and sdc[-1] >= 0.95 and abs(wcde - 1.25) <= 0.05
    acceptance(
        5,
        ok,
        f"n={ns}: median F1 {[round(v, 3) for v in f1]}, SDC acc {[round(v, 3) for v in sdc]}, WCDE mean {wcde:.4f}",
    )
    assert ok


# 6 ----------------------------------------------------------------------------


def test_criterion_06_variance_inflation(acceptance):
    res = run_benchmark(load_suite("variance_d5"))
    agg = _agg(res, "variance_d5")
    ns = sorted(agg)
    ratios = [agg[n]["var_ratio"] for n in ns]
    big = agg[10_000]
    m_true, m_all = big["wcde_true_a_de_mean"], big["wcde_all_z_mean"]
    ok = all(r > 1.5 for r in ratios) and abs(m_true - 7) <= 0.3 and abs(m_all - 7) <= 0.3
    acceptance(
        6,
        ok,
        f"n={ns}: var ratio {[round(r, 2) for r in ratios]}; means at n=10000 A_DE {m_true:.4f}, all-Z {m_all:.4f}",
    )
    assert ok


# 7 ----------------------------------------------------------------------------


def test_criterion_07_latent_robustness(acceptance):
    res = run_benchmark(load_suite("latent_c1"))
    parts, ok = [], True
    for drop in ("B1", "M1", "Z4a", "Z3c"):
        row = _agg(res, "latent_c1", drop)[50_000]
        good = row["f1_median"] >= 0.95 and abs(row["wcde_mean"] - 1.25) <= 0.05
        ok &= good
        parts.append(f"-{drop}: F1 {row['f1_median']:.2f} WCDE {row['wcde_mean']:.4f}")
    row = _agg(res, "latent_c1", "Z1")[50_000]
    ok &= row["precision_mean"] < 1.0
    parts.append(f"-Z1: precision {row['precision_mean']:.3f} F1 {row['f1_median']:.2f}")
    acceptance(7, ok, "; ".join(parts))
    assert ok


# 8 ----------------------------------------------------------------------------


def test_criterion_08_discrete_estimator(acceptance):
    scm = fixture_scm("sfm5")
    truth = true_wcde_discrete(scm, "X", "Y")
    adj = AdjustmentSpec.split(["C", "W"], ["M"])
    errs, covered = [], 0
    for seed in range(20):
        data = sample(scm, 1_000_000, 500 + seed)
        est = wcde_stratified(data, "X", "Y", 1, 0, adj, n_boot=500, seed=seed)
        errs.append(abs(est.value - truth))
        covered += est.covers(truth)
    ok = max(errs) <= 0.01 and covered >= 18
    acceptance(8, ok, f"truth {truth:.5f}; max |error| {max(errs):.5f} over 20 seeds; CI coverage {covered}/20")
    assert ok


# 9 ----------------------------------------------------------------------------


def test_criterion_09_ci_calibration(acceptance):
    n, reps = 10_000, 1000
    rejections = {("fisherz", 0.01): 0, ("fisherz", 0.05): 0, ("chi2", 0.01): 0, ("chi2", 0.05): 0}
    for r in range(reps):
        rng = np.random.default_rng([9, r])
        cont = Dataset({"a": rng.standard_normal(n), "b": rng.standard_normal(n)})
        p = fisher_z(cont, CiQuery("a", "b", (), 0.05)).p_value
        cat = Dataset({"a": rng.integers(0, 2, n), "b": rng.integers(0, 2, n)}, {"a": 2, "b": 2})
        q = chi_square(cat, CiQuery("a", "b", (), 0.05)).p_value
        for alpha in (0.01, 0.05):
            rejections[("fisherz", alpha)] += p <= alpha
            rejections[("chi2", alpha)] += q <= alpha
    rates = {k: v / reps for k, v in rejections.items()}
    ok = all(abs(rate - alpha) <= 0.02 for (_, alpha), rate in rates.items())
    acceptance(9, ok, ", ".join(f"{t}@{a}: {rate:.3f}" for (t, a), rate in rates.items()))
    assert ok


# 10 ---------------------------------------------------------------------------


def test_criterion_10_d_separation(acceptance):
    queries = bad = 0
    for n in range(1, 7):
        for g in unlabeled_dags(n):
            for a, b in itertools.combinations(g.nodes, 2):
                rest = [v for v in g.nodes if v not in (a, b)]
                for k in range(len(rest) + 1):
                    for s in itertools.combinations(rest, k):
                        queries += 1
                        bad += d_separated(g, a, b, s) != d_separated_by_paths(g, a, b, s)
    rng = np.random.default_rng(10)
    random_bad = 0
    for _ in range(10_000):
        n = int(rng.integers(7, 13))
        g = random_dag(rng, n, float(rng.uniform(0.1, 0.5)))
        a, b = rng.choice(g.nodes, 2, replace=False)
        s = [v for v in g.nodes if v not in (a, b) and rng.random() < 0.35]
        random_bad += d_separated(g, a, b, s) != d_separated_by_paths(g, a, b, s)
    ok = bad == 0 and random_bad == 0
    acceptance(10, ok, f"{queries} exhaustive queries on DAGs <=6 nodes: {bad} disagreements; 10000 random queries (7-12 nodes): {random_bad}")
    assert ok
