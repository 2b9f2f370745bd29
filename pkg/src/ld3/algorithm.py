"""LD3: local discovery of the outcome's parents with a linear number of CI tests."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ld3.citest import TEST_NAMES, CiTester, make_tester
from ld3.graph import Dag, PartitionLabel as L
from ld3.scm import Dataset

SDC_MODES = ("full_a_de", "paper_exact")


@dataclass(frozen=True)
class Ld3Config:
    alpha: float = 0.01
    test: str = "fisherz"
    sdc_conditioning: str = "full_a_de"
    keep_trace: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.test not in TEST_NAMES:
            raise ValueError(f"unknown test {self.test!r}; choose from {', '.join(TEST_NAMES)}")
        if self.sdc_conditioning not in SDC_MODES:
            raise ValueError(f"sdc_conditioning must be one of {SDC_MODES}")


@dataclass
class Ld3Report:
    x: str
    y: str
    labels: dict[str, L]
    a_de: list[str]
    sdc: int
    test_count: int
    wall_time: float
    alpha: float
    test: str
    sdc_conditioning: str
    degenerate_queries: int = 0
    by_conditioning_size: dict[int, int] = field(default_factory=dict)
    sdc_set: list[str] = field(default_factory=list)
    trace: list[dict] | None = None

    def members(self, *labels: L) -> list[str]:
        return [v for v, lab in self.labels.items() if lab in labels]

    def to_dict(self, include_time: bool = True) -> dict:
        d = {
            "x": self.x,
            "y": self.y,
            "labels": {k: str(v) for k, v in self.labels.items()},
            "a_de": list(self.a_de),
            "sdc": int(self.sdc),
            "sdc_conditioning_set": list(self.sdc_set),
            "test_count": int(self.test_count),
            "tests_by_conditioning_size": {str(k): int(v) for k, v in sorted(self.by_conditioning_size.items())},
            "alpha": self.alpha,
            "test": self.test,
            "sdc_conditioning": self.sdc_conditioning,
            "degenerate_queries": int(self.degenerate_queries),
        }
        if include_time:
            d["wall_time_ms"] = round(self.wall_time * 1000.0, 3)
        return d

    def to_json(self, include_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_time), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "Ld3Report":
        return cls(
            x=d["x"],
            y=d["y"],
            labels={k: L(v) for k, v in d["labels"].items()},
            a_de=list(d["a_de"]),
            sdc=int(d["sdc"]),
            test_count=int(d["test_count"]),
            wall_time=float(d.get("wall_time_ms", 0.0)) / 1000.0,
            alpha=float(d["alpha"]),
            test=d["test"],
            sdc_conditioning=d["sdc_conditioning"],
            degenerate_queries=int(d.get("degenerate_queries", 0)),
            by_conditioning_size={int(k): v for k, v in d.get("tests_by_conditioning_size", {}).items()},
            sdc_set=list(d.get("sdc_conditioning_set", [])),
        )


def _resolve_tester(
    data: Dataset | Dag | None, cfg: Ld3Config, dag: Dag | None, tester: CiTester | None
) -> CiTester:
    if tester is not None:
        return tester
    if cfg.test == "oracle":
        g = dag if dag is not None else data
        if not isinstance(g, Dag):
            raise ValueError("the oracle test needs the true DAG")
        return make_tester("oracle", cfg.alpha, dag=g, keep_trace=cfg.keep_trace)
    if not isinstance(data, Dataset):
        raise ValueError(f"the {cfg.test} test needs a Dataset")
    return make_tester(cfg.test, cfg.alpha, data=data, keep_trace=cfg.keep_trace)


def _columns(data: Dataset | Dag | None, dag: Dag | None) -> list[str]:
    if isinstance(data, Dataset):
        return data.names
    g = dag if dag is not None else data
    if g is None:
        raise ValueError("run_ld3 needs a Dataset or, for the oracle test, a DAG")
    return list(g.nodes)


def run_ld3(
    data: Dataset | Dag | None,
    x: str,
    y: str,
    z: Sequence[str] | None = None,
    cfg: Ld3Config | None = None,
    *,
    dag: Dag | None = None,
    tester: CiTester | None = None,
) -> Ld3Report:
    """Label candidates, build the parent adjustment set, and decide the structural direct criterion.

    ``data`` is a Dataset for statistical tests, or the DAG itself for the
    oracle test. ``z`` defaults to every other column. A custom ``tester``
    overrides ``cfg.test``.
    """
    cfg = cfg or Ld3Config()
    cols = _columns(data, dag)
    if x == y:
        raise ValueError("exposure and outcome must differ")
    for v in (x, y):
        if v not in cols:
            raise KeyError(f"unknown column {v!r}")
    z = [c for c in cols if c not in (x, y)] if z is None else list(z)
    if x in z or y in z:
        raise ValueError("z may not contain the exposure or outcome")
    if len(set(z)) != len(z):
        raise ValueError("z has duplicate entries")
    t = _resolve_tester(data, cfg, dag, tester)
    t.check_columns([x, y, *z])
    start_count, start_degen = t.counter.total, t.counter.degenerate
    start_hist = dict(t.counter.by_conditioning_size)
    start_trace = len(t.trace)
    t0 = time.perf_counter()

    labels: dict[str, L] = {}
    z8, z57, z4 = [], [], []
    for v in z:
        ind_x = t.independent(v, x)
        ind_y = t.independent(v, y)
        if ind_x and ind_y:
            labels[v] = L.Z8
            z8.append(v)
        elif not ind_y and t.independent(v, y, [x]):
            labels[v] = L.Z5_OR_7
            z57.append(v)
        elif ind_x and not t.independent(v, x, [y]):
            labels[v] = L.Z4
            z4.append(v)

    screened = set(z8) | set(z57) | set(z4)
    z_prime = [v for v in z if v not in screened]
    z13 = []
    for v in z_prime:
        cond = [x, *z4, *(w for w in z_prime if w != v)]
        if not t.independent(v, y, cond):
            z13.append(v)
    z4_pa = []
    for v in z4:
        cond = [x, *z13, *(w for w in z4 if w != v)]
        if not t.independent(v, y, cond):
            z4_pa.append(v)

    for v in z_prime:
        labels[v] = L.Z1_OR_3_PARENT if v in z13 else L.UNRESOLVED
    for v in z4_pa:
        labels[v] = L.Z4_PARENT
    in_ade = set(z13) | set(z4_pa)
    a_de = [v for v in z if v in in_ade]
    sdc_set = list(z13) if cfg.sdc_conditioning == "paper_exact" else a_de
    sdc = evaluate_sdc(None, x, y, sdc_set, cfg, tester=t)
    wall = time.perf_counter() - t0

    hist = {k: n - start_hist.get(k, 0) for k, n in t.counter.by_conditioning_size.items()}
    trace = None
    if t.keep_trace:
        trace = [
            {"a": q.a, "b": q.b, "s": list(q.s), **d.to_dict()} for q, d in t.trace[start_trace:]
        ]
    return Ld3Report(
        x=x,
        y=y,
        labels={v: labels[v] for v in z},
        a_de=a_de,
        sdc=sdc,
        test_count=t.counter.total - start_count,
        wall_time=wall,
        alpha=t.alpha,
        test=getattr(t, "name", cfg.test),
        sdc_conditioning=cfg.sdc_conditioning,
        degenerate_queries=t.counter.degenerate - start_degen,
        by_conditioning_size={k: v for k, v in sorted(hist.items()) if v},
        sdc_set=list(sdc_set),
        trace=trace,
    )


def evaluate_sdc(
    data: Dataset | Dag | None,
    x: str,
    y: str,
    conditioning: Iterable[str],
    cfg: Ld3Config | None = None,
    *,
    dag: Dag | None = None,
    tester: CiTester | None = None,
) -> int:
    """1 if X and Y stay dependent given ``conditioning`` (a direct edge is inferred), else 0."""
    cfg = cfg or Ld3Config()
    t = _resolve_tester(data, cfg, dag, tester)
    return 0 if t.independent(x, y, list(conditioning)) else 1


def write_trace(report: Ld3Report, path) -> None:
    if report.trace is None:
        raise ValueError("report was produced without keep_trace")
    with open(path, "w") as fh:
        for row in report.trace:
            fh.write(json.dumps(row) + "\n")
