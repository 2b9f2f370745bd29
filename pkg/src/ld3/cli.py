"""Command-line interface: simulate, discover, estimate, audit, bench.

Exit codes: 0 success (and no direct effect detected), 2 usage or
configuration error, 3 direct effect detected (discover/audit), 4 estimation
failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ld3.algorithm import SDC_MODES, Ld3Config, Ld3Report, run_ld3, write_trace
from ld3.citest import TEST_NAMES
from ld3.estimate import AdjustmentSpec, EstimationError, wcde_ols, wcde_stratified
from ld3.evalkit import load_suite, run_benchmark
from ld3.graph import GraphError, load_dag
from ld3.scm import SCM_FIXTURES, Dataset, discretize, fixture_scm, load_scm, sample, save_scm

EXIT_OK, EXIT_USAGE, EXIT_SDC, EXIT_ESTIMATION = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _write_json(path: str | Path | None, obj: dict) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _parse_bins(specs: list[str] | None) -> dict[str, int]:
    out = {}
    for spec in specs or []:
        name, sep, k = spec.partition("=")
        if not sep or not k.isdigit():
            raise UsageError(f"--bins expects column=k, got {spec!r}")
        out[name] = int(k)
    return out


def _load_data(args) -> Dataset:
    data = Dataset.from_csv(args.data, args.schema)
    bins = _parse_bins(getattr(args, "bins", None))
    if bins:
        data = discretize(data, bins)
    return data


def _split_cols(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [c for c in (s.strip() for s in text.split(",")) if c]


def _check_xy(args, data: Dataset) -> None:
    if args.x == args.y:
        raise UsageError("--x and --y must name different columns")
    for c in (args.x, args.y):
        if c not in data.columns:
            raise UsageError(f"column {c!r} is not in the data")


def _discover(args, data: Dataset) -> Ld3Report:
    _check_xy(args, data)
    cfg = Ld3Config(args.alpha, args.test, args.sdc_conditioning, keep_trace=bool(args.trace))
    dag = None
    if args.test == "oracle":
        if not args.dag:
            raise UsageError("--test oracle needs --dag")
        dag = load_dag(args.dag)
    z = _split_cols(args.z)
    try:
        rep = run_ld3(data if dag is None else dag, args.x, args.y, z, cfg, dag=dag)
    except (TypeError, KeyError) as exc:
        raise UsageError(str(exc)) from exc
    if args.trace:
        write_trace(rep, args.trace)
    return rep


def _report_json(rep: Ld3Report) -> dict:
    d = rep.to_dict(include_time=False)
    d["timing"] = {"wall_time_ms": round(rep.wall_time * 1000.0, 3)}
    return d


def _estimate(args, data: Dataset, covariates: list[str]):
    if args.estimator == "ols":
        return wcde_ols(data, args.x, args.y, AdjustmentSpec(tuple(covariates)))
    if not args.split:
        raise UsageError("the stratified estimator needs --split")
    split = json.loads(Path(args.split).read_text())
    adj = AdjustmentSpec.split(split.get("s_set", []), split.get("m_set", []))
    try:
        return wcde_stratified(data, args.x, args.y, args.x_val, args.x_star, adj, n_boot=args.n_boot, seed=args.seed)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if bool(args.fixture) == bool(args.scm):
        raise UsageError("give exactly one of --fixture or --scm")
    scm = fixture_scm(args.fixture) if args.fixture else load_scm(args.scm)
    data = sample(scm, args.n, args.seed)
    drop = _split_cols(args.drop)
    if drop:
        data = data.drop(drop)
    out = Path(args.out)
    data.to_csv(out)
    save_scm(scm, out.with_name(out.stem + ".scm.json"))
    return EXIT_OK


def cmd_discover(args) -> int:
    data = _load_data(args)
    rep = _discover(args, data)
    _write_json(args.out, _report_json(rep))
    return EXIT_SDC if rep.sdc else EXIT_OK


def cmd_estimate(args) -> int:
    data = _load_data(args)
    _check_xy(args, data)
    if args.report:
        covariates = json.loads(Path(args.report).read_text())["a_de"]
    elif args.adjust is not None:
        covariates = _split_cols(args.adjust)
    elif args.estimator == "ols":
        raise UsageError("give --adjust or --report")
    else:
        covariates = []
    est = _estimate(args, data, covariates)
    _write_json(args.out, est.to_dict())
    return EXIT_OK


def cmd_audit(args) -> int:
    data = _load_data(args)
    rep = _discover(args, data)
    est = _estimate(args, data, rep.a_de)
    _write_json(args.out, {"report": _report_json(rep), "estimate": est.to_dict()})
    return EXIT_SDC if rep.sdc else EXIT_OK


def cmd_bench(args) -> int:
    suite = load_suite(args.suite)
    suite = {**suite, "seed": args.seed}
    res = run_benchmark(suite, args.out, workers=args.workers)
    for path in res.files.values():
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="input CSV with a header row")
    p.add_argument("--schema", help="column-type sidecar (default: <data>.schema.json)")
    p.add_argument("--x", required=True, help="exposure column")
    p.add_argument("--y", required=True, help="outcome column")
    p.add_argument("--bins", nargs="*", metavar="COL=K", help="quantile-bin continuous columns into K levels")
    p.add_argument("--out", default="-", help="output JSON path (default: stdout)")


def _add_discovery_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--z", help="comma-separated candidate columns (default: all others)")
    p.add_argument("--test", choices=TEST_NAMES, default="fisherz")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--sdc-conditioning", choices=SDC_MODES, default="full_a_de")
    p.add_argument("--dag", help="true DAG (JSON or edge list), required for --test oracle")
    p.add_argument("--trace", help="write one JSON line per CI query here")


def _add_estimation_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=("ols", "stratified"), default="ols")
    p.add_argument("--split", help="JSON with s_set and m_set, required by the stratified estimator")
    p.add_argument("--x-val", type=int, default=1, help="exposure level for the stratified contrast")
    p.add_argument("--x-star", type=int, default=0, help="reference exposure level")
    p.add_argument("--n-boot", type=int, default=500)
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ld3", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a dataset from a fixture or SCM file")
    p.add_argument("--fixture", choices=SCM_FIXTURES)
    p.add_argument("--scm", help="SCM JSON file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--drop", help="comma-separated columns to hide")
    p.add_argument("--out", default="data.csv", help="CSV path; schema and SCM JSON are written beside it")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("discover", help="run LD3 and write the report")
    _add_data_args(p)
    _add_discovery_args(p)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("estimate", help="estimate the weighted controlled direct effect")
    _add_data_args(p)
    p.add_argument("--adjust", help="comma-separated adjustment columns")
    p.add_argument("--report", help="take the adjustment set from a discover report")
    _add_estimation_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("audit", help="discover and estimate in one pass")
    _add_data_args(p)
    _add_discovery_args(p)
    _add_estimation_args(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", required=True, help="suite JSON path or bundled suite name")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EstimationError as exc:
        print(f"ld3: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (UsageError, GraphError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"ld3: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
