"""Metrics, the brute-force parent baseline, and the benchmark harness."""
from __future__ import annotations

import csv
import json
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ld3.algorithm import Ld3Config, run_ld3
from ld3.citest import CiTester, make_tester
from ld3.estimate import AdjustmentSpec, EstimationError, wcde_ols
from ld3.graph import Dag, GraphError, iter_paths, oracle_partition, path_is_open, PartitionLabel, random_er_dag
from ld3.scm import SCM_FIXTURES, Dataset, LinearGaussianScm, fixture_scm, sample, true_wcde_linear


@dataclass(frozen=True)
class ParentMetrics:
    f1: float
    precision: float
    recall: float
    sdc_accuracy: float | None = None


def score_parents(
    predicted: Iterable[str], truth: Iterable[str], sdc_pred: int | None = None, sdc_true: int | None = None
) -> ParentMetrics:
    """Set precision/recall/F1. Two empty sets count as a perfect match."""
    p, t = set(predicted), set(truth)
    tp = len(p & t)
    if not p and not t:
        prec = rec = f1 = 1.0
    else:
        prec = tp / len(p) if p else 0.0
        rec = tp / len(t) if t else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    acc = None if sdc_pred is None or sdc_true is None else float(sdc_pred == sdc_true)
    return ParentMetrics(f1, prec, rec, acc)


def brute_force_parents(
    data: Dataset | Dag | None,
    x: str,
    y: str,
    z: Sequence[str] | None = None,
    test: str = "fisherz",
    alpha: float = 0.01,
    *,
    dag: Dag | None = None,
    tester: CiTester | None = None,
) -> list[str]:
    """Members of ``z`` that stay dependent on ``y`` given ``x`` and every other member of ``z``."""
    if tester is None:
        if test == "oracle":
            g = dag if dag is not None else data
            tester = make_tester("oracle", alpha, dag=g)
        else:
            tester = make_tester(test, alpha, data=data)
    if z is None:
        cols = data.names if isinstance(data, Dataset) else list((dag or data).nodes)
        z = [c for c in cols if c not in (x, y)]
    z = list(z)
    tester.check_columns([x, y, *z])
    out = []
    for v in z:
        rest = [x, *(w for w in z if w != v)]
        if not tester.independent(v, y, rest):
            out.append(v)
    return out


def latent_truth(g: Dag, x: str, y: str, latent: Iterable[str]) -> set[str]:
    """Parents of ``y`` once ``latent`` is marginalized out.

    An observed node counts when a directed path reaches ``y`` through latent
    nodes only, so hiding a parent promotes its observed ancestors along
    latent chains.
    """
    hidden = set(latent)
    out, stack, seen = set(), list(g.parents(y)), set()
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        if v in hidden:
            stack.extend(g.parents(v))
        elif v != x:
            out.add(v)
    return out


def vas_violations(g: Dag, x: str, y: str, adj: Iterable[str]) -> list[tuple[str, list[str]]]:
    """Paths left open by ``adj`` and colliders it contains.

    Checked: backdoor paths X <- ... Y, backdoor paths M <- ... Y for every
    mediator M (with X also conditioned on), directed paths X -> ... -> Y of
    length >= 2, and any member labeled Z2.
    """
    adj = set(adj)
    bad = []
    for p in iter_paths(g, x, y):
        if len(p) < 3:
            continue
        if g.has_edge(p[1], x) and path_is_open(g, p, adj):
            bad.append(("backdoor_xy", p))
        elif all(g.has_edge(a, b) for a, b in zip(p, p[1:])) and path_is_open(g, p, adj):
            bad.append(("directed_xy", p))
    mediators = g.descendants(x) & g.ancestors(y)
    for m in sorted(mediators):
        cond = (adj | {x}) - {m}
        for p in iter_paths(g, m, y):
            if g.has_edge(p[1], m) and path_is_open(g, p, cond):
                bad.append(("backdoor_my", p))
    labels = oracle_partition(g, x, y)
    for v in sorted(adj):
        if labels.get(v) is PartitionLabel.Z2_NOT_DE_Y:
            bad.append(("collider", [v]))
    return bad


# ---------------------------------------------------------------------------
# benchmark harness
# ---------------------------------------------------------------------------


def load_suite(path: str | Path) -> dict:
    """Read a suite spec from a path, or by bare name from the bundled suites."""
    p = Path(path)
    if p.exists():
        return json.loads(p.read_text())
    name = p.name if p.suffix == ".json" else p.name + ".json"
    bundled = resources.files("ld3.suites").joinpath(name)
    if bundled.is_file():
        return json.loads(bundled.read_text())
    raise FileNotFoundError(f"suite {path} not found")


def er_node_counts(n_graphs: int, node_min: int, node_max: int) -> list[int]:
    return [int(v) for v in np.round(np.geomspace(node_min, node_max, n_graphs))]


def expand_cells(suite: Mapping) -> list[dict]:
    """Flatten a suite spec into independent, fully specified cells."""
    base_seed = int(suite.get("seed", 0))
    cells = []
    for e_idx, exp in enumerate(suite["experiments"]):
        kind = exp["kind"]
        common = {
            "experiment": exp["name"],
            "test": exp.get("test", "oracle"),
            "alpha": float(exp.get("alpha", 0.01)),
            "sdc_conditioning": exp.get("sdc_conditioning", "full_a_de"),
        }
        if kind == "er":
            counts = er_node_counts(int(exp["n_graphs"]), int(exp["node_min"]), int(exp["node_max"]))
            for i, n_nodes in enumerate(counts):
                p = exp.get("edge_prob") or min(1.0, float(exp.get("expected_degree", 2.0)) / max(n_nodes - 1, 1))
                cells.append({
                    **common,
                    "kind": "er",
                    "graph_index": i,
                    "n_nodes": n_nodes,
                    "edge_prob": p,
                    "seed": base_seed + 1000 * e_idx + i,
                    "brute_force": bool(exp.get("brute_force", True)),
                })
        elif kind == "fixture":
            fixture = exp["fixture"]
            if fixture not in SCM_FIXTURES:
                raise GraphError(f"unknown fixture {fixture!r}")
            for drop in exp.get("drop", [None]):
                for n in exp["sample_sizes"]:
                    for r in range(int(exp["replicates"])):
                        cells.append({
                            **common,
                            "kind": "fixture",
                            "fixture": fixture,
                            "n": int(n),
                            "replicate": r,
                            "drop": drop,
                            "seed": base_seed + 1000 * e_idx + r,
                            "compare_all_z": bool(exp.get("compare_all_z", False)),
                            "compare_true_a_de": bool(exp.get("compare_true_a_de", False)),
                            "estimate": exp.get("estimator", "ols"),
                        })
        else:
            raise ValueError(f"unknown experiment kind {kind!r}")
    return cells


def _check_cell(cell: Mapping) -> None:
    if cell["kind"] == "fixture" and cell["test"] == "chi2":
        scm = fixture_scm(cell["fixture"])
        if isinstance(scm, LinearGaussianScm):
            raise ValueError(f"chi2 cannot run on the continuous fixture {cell['fixture']!r}")


def _metrics_dict(m: ParentMetrics) -> dict:
    return {k: v for k, v in asdict(m).items() if v is not None}


def run_cell(cell: Mapping) -> dict:
    if cell["kind"] == "er":
        return _run_er_cell(cell)
    return _run_fixture_cell(cell)


def _run_er_cell(cell: Mapping) -> dict:
    g = random_er_dag(cell["n_nodes"], cell["edge_prob"], cell["seed"])
    x, y = g.x, g.y
    z = [v for v in g.nodes if v not in (x, y)]
    cfg = Ld3Config(cell["alpha"], "oracle", cell["sdc_conditioning"])
    rep = run_ld3(g, x, y, z, cfg)
    truth = sorted(g.parents(y) - {x})
    sdc_true = int(g.has_edge(x, y))
    out = {
        **cell,
        "nodes": len(g.nodes),
        "edges": len(g.edges),
        "z_size": len(z),
        "truth": {"a_de": truth, "sdc": sdc_true},
        "report": rep.to_dict(include_time=False),
        "metrics": _metrics_dict(score_parents(rep.a_de, truth, rep.sdc, sdc_true)),
        "wall_time_ms": round(rep.wall_time * 1000.0, 3),
    }
    if cell.get("brute_force"):
        t = make_tester("oracle", cell["alpha"], dag=g)
        bf = brute_force_parents(g, x, y, z, tester=t)
        out["brute_force"] = {
            "parents": bf,
            "test_count": t.counter.total,
            "mean_conditioning_size": t.counter.mean_conditioning_size(),
            "agrees": set(bf) == set(rep.a_de),
        }
    return out


def _run_fixture_cell(cell: Mapping) -> dict:
    _check_cell(cell)
    scm = fixture_scm(cell["fixture"])
    g = scm.dag
    data = sample(scm, cell["n"], cell["seed"])
    drop = cell.get("drop")
    latent = [drop] if drop else []
    if latent:
        data = data.drop(latent)
    x, y = g.x, g.y
    z = [v for v in data.names if v not in (x, y)]
    cfg = Ld3Config(cell["alpha"], cell["test"], cell["sdc_conditioning"])
    rep = run_ld3(g if cfg.test == "oracle" else data, x, y, z, cfg, dag=g)
    truth = sorted(latent_truth(g, x, y, latent))
    sdc_true = int(g.has_edge(x, y))
    out = {
        **cell,
        "z_size": len(z),
        "truth": {"a_de": truth, "sdc": sdc_true},
        "report": rep.to_dict(include_time=False),
        "metrics": _metrics_dict(score_parents(rep.a_de, truth, rep.sdc, sdc_true)),
        "wall_time_ms": round(rep.wall_time * 1000.0, 3),
    }
    if isinstance(scm, LinearGaussianScm) and cell.get("estimate") == "ols":
        out["truth"]["wcde"] = true_wcde_linear(scm, x, y)
        try:
            out["estimate"] = wcde_ols(data, x, y, AdjustmentSpec(tuple(rep.a_de))).to_dict()
            if cell.get("compare_all_z"):
                out["estimate_all_z"] = wcde_ols(data, x, y, AdjustmentSpec(tuple(z))).to_dict()
            if cell.get("compare_true_a_de"):
                out["estimate_true_a_de"] = wcde_ols(data, x, y, AdjustmentSpec(tuple(truth))).to_dict()
        except EstimationError as exc:
            out["estimate_error"] = str(exc)
    return out


def _mean_ci(vals: Sequence[float]) -> tuple[float, float, float, float]:
    a = np.asarray(vals, dtype=float)
    k = len(a)
    m = float(a.mean())
    half = 1.96 * float(a.std(ddof=1)) / math.sqrt(k) if k > 1 else 0.0
    return m, m - half, m + half, float(np.median(a))


AGG_METRICS = ("f1", "precision", "recall", "sdc_accuracy", "test_count", "z_size", "wcde", "wcde_true_a_de", "wcde_all_z")
ESTIMATE_KEYS = {"wcde": "estimate", "wcde_true_a_de": "estimate_true_a_de", "wcde_all_z": "estimate_all_z"}
AGG_COLUMNS = (
    ["experiment", "drop", "n", "replicates"]
    + [f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "lo", "hi", "median")]
    + ["wcde_bias", "wcde_var", "wcde_true_a_de_var", "wcde_all_z_var", "var_ratio", "var_ratio_pred"]
    + ["brute_force_agreement", "test_count_fit_r2", "test_count_fit_slope"]
)


def _group_key(rec: Mapping) -> tuple:
    if rec["kind"] == "er":
        return rec["experiment"], "", rec["n_nodes"]
    return rec["experiment"], rec.get("drop") or "", rec["n"]


def _values(rows: Sequence[Mapping], metric: str) -> list[float]:
    out = []
    for r in rows:
        if metric in r["metrics"]:
            out.append(r["metrics"][metric])
        elif metric == "test_count":
            out.append(r["report"]["test_count"])
        elif metric == "z_size":
            out.append(r["z_size"])
        elif metric in ESTIMATE_KEYS and ESTIMATE_KEYS[metric] in r:
            out.append(r[ESTIMATE_KEYS[metric]]["value"])
    return out


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line through (x, y): slope, intercept, R^2."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _aggregate_rows(rows: Sequence[Mapping], key: tuple) -> dict:
    exp, drop, n = key
    out: dict = {"experiment": exp, "drop": drop, "n": n, "replicates": len(rows)}
    for m in AGG_METRICS:
        vals = _values(rows, m)
        if vals:
            mean, lo, hi, med = _mean_ci(vals)
            out.update({f"{m}_mean": mean, f"{m}_lo": lo, f"{m}_hi": hi, f"{m}_median": med})
    est = _values(rows, "wcde")
    if est and "wcde" in rows[0]["truth"]:
        out["wcde_bias"] = float(np.mean(est) - rows[0]["truth"]["wcde"])
        out["wcde_var"] = float(np.var(est, ddof=1)) if len(est) > 1 else 0.0
    for m in ("wcde_true_a_de", "wcde_all_z"):
        vals = _values(rows, m)
        if len(vals) > 1:
            out[f"{m}_var"] = float(np.var(vals, ddof=1))
    # inflation from adjusting for everything: against the true set when estimated, and against LD3's set
    if "wcde_all_z_var" in out:
        if out.get("wcde_var"):
            out["var_ratio_pred"] = out["wcde_all_z_var"] / out["wcde_var"]
        base = out.get("wcde_true_a_de_var") or out.get("wcde_var")
        if base:
            out["var_ratio"] = out["wcde_all_z_var"] / base
    bf = [r["brute_force"]["agrees"] for r in rows if "brute_force" in r]
    if bf:
        out["brute_force_agreement"] = float(np.mean(bf))
    return out


def aggregate(records: Sequence[Mapping]) -> list[dict]:
    """Per-group summaries; ER experiments also get an all-graphs row with the test-count fit."""
    groups: dict[tuple, list] = defaultdict(list)
    by_exp: dict[str, list] = defaultdict(list)
    # canonical order inside each group so float sums do not depend on input order
    for r in sorted(records, key=lambda r: (r.get("graph_index", -1), r.get("replicate", -1), r["seed"])):
        groups[_group_key(r)].append(r)
        by_exp[r["experiment"]].append(r)

    def sort_key(k):
        return (k[0], str(k[1]), k[2])

    rows = [_aggregate_rows(groups[k], k) for k in sorted(groups, key=sort_key)]
    for exp, recs in sorted(by_exp.items()):
        if recs[0]["kind"] != "er":
            continue
        recs = sorted(recs, key=lambda r: r["graph_index"])
        row = _aggregate_rows(recs, (exp, "", "all"))
        slope, _, r2 = linear_fit([r["z_size"] for r in recs], [r["report"]["test_count"] for r in recs])
        row["test_count_fit_slope"] = slope
        row["test_count_fit_r2"] = r2
        rows.append(row)
    return rows


def plot_rows(records: Sequence[Mapping], agg: Sequence[Mapping]) -> list[dict]:
    """Long-format (x, y, ci_lo, ci_hi, series) rows for plotting."""
    out = []
    for r in sorted((r for r in records if r["kind"] == "er"), key=lambda r: (r["experiment"], r["graph_index"])):
        tc = r["report"]["test_count"]
        out.append({"series": f"{r['experiment']}/test_count_vs_z", "x": r["z_size"], "y": tc, "ci_lo": tc, "ci_hi": tc})
    for a in agg:
        if a["n"] == "all" or a["experiment"] in {r["experiment"] for r in records if r["kind"] == "er"}:
            continue
        tag = a["experiment"] + (f"[-{a['drop']}]" if a["drop"] else "")
        for m in ("f1", "precision", "recall", "sdc_accuracy", "wcde", "wcde_true_a_de", "wcde_all_z"):
            if f"{m}_mean" in a:
                out.append({"series": f"{tag}/{m}", "x": a["n"], "y": a[f"{m}_mean"], "ci_lo": a[f"{m}_lo"], "ci_hi": a[f"{m}_hi"]})
        for m in ("var_ratio", "var_ratio_pred"):
            if m in a:
                out.append({"series": f"{tag}/{m}", "x": a["n"], "y": a[m], "ci_lo": "", "ci_hi": ""})
    return out


def _write_csv(path: Path, rows: Sequence[Mapping], columns: Sequence[str]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c, "")) for c in columns})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


@dataclass
class BenchmarkResult:
    records: list[dict]
    aggregate: list[dict]
    plot: list[dict]
    files: dict[str, Path]
    wall_time: float


def run_benchmark(
    suite_spec: str | Path | Mapping, out: str | Path | None = None, workers: int | None = None
) -> BenchmarkResult:
    """Run every cell of a suite and write ``cells.jsonl``, ``aggregate.csv``, ``plot.csv``, ``timing.csv``.

    Cells run in a process pool when ``workers`` > 1. Records are ordered by
    cell index, so outputs do not depend on completion order.
    """
    suite = suite_spec if isinstance(suite_spec, Mapping) else load_suite(suite_spec)
    cells = expand_cells(suite)
    for c in cells:
        _check_cell(c)
    workers = workers if workers is not None else int(suite.get("workers", 1))
    t0 = time.perf_counter()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_cell, cells, chunksize=max(1, len(cells) // (4 * workers))))
    else:
        records = [run_cell(c) for c in cells]
    for i, r in enumerate(records):
        r["cell"] = i
    agg = aggregate(records)
    plot = plot_rows(records, agg)
    files: dict[str, Path] = {}
    if out is not None:
        outdir = Path(out)
        outdir.mkdir(parents=True, exist_ok=True)
        files = {k: outdir / f"{k}{ext}" for k, ext in (("cells", ".jsonl"), ("aggregate", ".csv"), ("plot", ".csv"), ("timing", ".csv"))}
        with files["cells"].open("w") as fh:
            for r in records:
                fh.write(json.dumps({k: v for k, v in r.items() if k != "wall_time_ms"}, sort_keys=True) + "\n")
        _write_csv(files["aggregate"], agg, AGG_COLUMNS)
        _write_csv(files["plot"], plot, ("series", "x", "y", "ci_lo", "ci_hi"))
        _write_csv(
            files["timing"],
            [{"cell": r["cell"], "experiment": r["experiment"], "z_size": r["z_size"], "wall_time_ms": r["wall_time_ms"]} for r in records],
            ("cell", "experiment", "z_size", "wall_time_ms"),
        )
    return BenchmarkResult(records, agg, plot, files, time.perf_counter() - t0)
