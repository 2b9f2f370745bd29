"""Structural causal model simulators and exact direct-effect oracles."""
from __future__ import annotations

import csv
import itertools
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ld3.graph import Dag, GraphError, load_fixture

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
MAX_ENUMERATION_STATES = 10**7


class CapacityError(RuntimeError):
    """Exact enumeration would exceed the state-space budget."""


@dataclass
class Dataset:
    """Columnar data. ``levels[name]`` is ``None`` for continuous columns."""

    columns: dict[str, np.ndarray]
    levels: dict[str, int | None] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ValueError("columns have different lengths")
        for name, col in self.columns.items():
            k = self.levels.setdefault(name, None)
            if k is not None:
                col = np.asarray(col)
                if col.size and (col.min() < 0 or col.max() >= k):
                    raise ValueError(f"column {name!r} has values outside [0, {k})")
                self.columns[name] = col.astype(np.int64, copy=False)
            else:
                self.columns[name] = np.asarray(col, dtype=float)
            if not np.all(np.isfinite(self.columns[name])):
                raise ValueError(f"column {name!r} has missing or non-finite values")

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def is_categorical(self, name: str) -> bool:
        return self.levels[name] is not None

    def column_type(self, name: str) -> str:
        return CATEGORICAL if self.is_categorical(name) else CONTINUOUS

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.columns[n] for n in names]).astype(float)

    def drop(self, names: Iterable[str]) -> "Dataset":
        names = set(names)
        return Dataset(
            {k: v for k, v in self.columns.items() if k not in names},
            {k: v for k, v in self.levels.items() if k not in names},
        )

    def select(self, names: Sequence[str]) -> "Dataset":
        return Dataset({k: self.columns[k] for k in names}, {k: self.levels[k] for k in names})

    def take(self, rows: np.ndarray) -> "Dataset":
        return Dataset({k: v[rows] for k, v in self.columns.items()}, dict(self.levels))

    def schema(self) -> dict:
        cols = []
        for name in self.columns:
            k = self.levels[name]
            if k is None:
                cols.append({"name": name, "type": CONTINUOUS})
            else:
                cols.append({"name": name, "type": CATEGORICAL, "levels": int(k)})
        return {"columns": cols}

    def to_csv(self, path: str | Path, schema_path: str | Path | None = None) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.names)
            cols = []
            for name in self.names:
                col = self.columns[name]
                if self.levels[name] is None:
                    cols.append([repr(float(v)) for v in col])
                else:
                    cols.append([str(int(v)) for v in col])
            w.writerows(zip(*cols))
        schema_path = Path(schema_path) if schema_path else default_schema_path(path)
        schema_path.write_text(json.dumps(self.schema(), indent=2) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path, schema_path: str | Path | None = None) -> "Dataset":
        path = Path(path)
        schema_path = Path(schema_path) if schema_path else default_schema_path(path)
        schema = json.loads(schema_path.read_text())
        if not isinstance(schema, dict) or not isinstance(schema.get("columns"), list):
            raise ValueError(f"{schema_path}: schema must be an object with a 'columns' list")
        types = {c["name"]: c for c in schema["columns"]}
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        missing = [h for h in header if h not in types]
        if missing:
            raise ValueError(f"columns missing from schema: {missing}")
        raw = np.array(rows, dtype=object).reshape(len(rows), len(header))
        columns, levels = {}, {}
        for j, name in enumerate(header):
            spec = types[name]
            if spec["type"] == CATEGORICAL:
                columns[name] = raw[:, j].astype(np.int64)
                levels[name] = int(spec["levels"])
            elif spec["type"] == CONTINUOUS:
                columns[name] = raw[:, j].astype(float)
                levels[name] = None
            else:
                raise ValueError(f"unknown column type {spec['type']!r} for {name!r}")
        return cls(columns, levels)


def default_schema_path(csv_path: str | Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".schema.json")


def discretize(data: Dataset, bins: Mapping[str, int]) -> Dataset:
    """Quantile-bin the named continuous columns into ``k`` categorical levels."""
    cols = dict(data.columns)
    levels = dict(data.levels)
    for name, k in bins.items():
        if levels[name] is not None:
            raise ValueError(f"column {name!r} is already categorical")
        if k < 2:
            raise ValueError("need at least two bins")
        edges = np.quantile(cols[name], np.linspace(0, 1, k + 1)[1:-1])
        codes = np.searchsorted(edges, cols[name], side="right")
        cols[name] = codes
        levels[name] = k
    return Dataset(cols, levels)


def _node_stream(seed: int, name: str) -> np.random.Generator:
    # one RNG per (seed, node) so dropping or reordering nodes leaves the others untouched
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


# ---------------------------------------------------------------------------
# linear-Gaussian
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearGaussianScm:
    dag: Dag
    edge_coefficients: Mapping[tuple[str, str], float]
    noise_std: Mapping[str, float]

    def __post_init__(self):
        coef_keys = set(self.edge_coefficients)
        if coef_keys != set(self.dag.edges):
            raise ValueError("coefficients must be given for exactly the DAG's edges")
        for v in self.dag.nodes:
            if self.noise_std.get(v, 0) <= 0:
                raise ValueError(f"noise_std for {v!r} must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": "linear_gaussian",
            "dag": self.dag.to_dict(),
            "edge_coefficients": [[p, c, float(b)] for (p, c), b in sorted(self.edge_coefficients.items())],
            "noise_std": {v: float(self.noise_std[v]) for v in self.dag.nodes},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearGaussianScm":
        return cls(
            Dag.from_dict(d["dag"]),
            {(p, c): float(b) for p, c, b in d["edge_coefficients"]},
            {k: float(v) for k, v in d["noise_std"].items()},
        )


def random_linear_scm(
    dag: Dag,
    seed: int,
    low: float = 0.5,
    high: float = 1.5,
    pinned: Mapping[tuple[str, str], float] | None = None,
    noise_std: float = 1.0,
) -> LinearGaussianScm:
    """Coefficients uniform on ±[low, high] with random sign; ``pinned`` edges override."""
    rng = np.random.default_rng(seed)
    coefs = {}
    for e in sorted(dag.edges):
        coefs[e] = float(rng.uniform(low, high) * rng.choice([-1.0, 1.0]))
    for e, b in (pinned or {}).items():
        if e not in dag.edges:
            raise GraphError(f"pinned edge {e} is not in the DAG")
        coefs[e] = float(b)
    return LinearGaussianScm(dag, coefs, {v: noise_std for v in dag.nodes})


def sample_linear(scm: LinearGaussianScm, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be positive")
    g = scm.dag
    values: dict[str, np.ndarray] = {}
    for v in g.topological_order():
        col = _node_stream(seed, v).standard_normal(n) * scm.noise_std[v]
        for p in sorted(g.parents(v)):
            col = col + scm.edge_coefficients[(p, v)] * values[p]
        values[v] = col
    return Dataset({v: values[v] for v in g.nodes}, {v: None for v in g.nodes})


def true_wcde_linear(scm: LinearGaussianScm, x: str, y: str) -> float:
    # no interactions, so the controlled direct effect does not depend on the mediator values
    return float(scm.edge_coefficients.get((x, y), 0.0))


# ---------------------------------------------------------------------------
# discrete
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteScm:
    """Categorical SCM; ``cpt[v]`` has shape ``(*parent_cards, card[v])``.

    Parent axes follow the order of ``dag.nodes``.
    """

    dag: Dag
    cardinality: Mapping[str, int]
    cpt: Mapping[str, np.ndarray]

    def __post_init__(self):
        for v in self.dag.nodes:
            k = self.cardinality.get(v, 0)
            if k < 2:
                raise ValueError(f"cardinality of {v!r} must be >= 2")
            table = np.asarray(self.cpt[v], dtype=float)
            shape = tuple(self.cardinality[p] for p in self.parent_order(v)) + (k,)
            if table.shape != shape:
                raise ValueError(f"CPT for {v!r} has shape {table.shape}, expected {shape}")
            if np.any(table < 0) or not np.allclose(table.sum(axis=-1), 1.0, atol=1e-9):
                raise ValueError(f"CPT rows for {v!r} must be probability vectors")

    def parent_order(self, v: str) -> list[str]:
        pa = self.dag.parents(v)
        return [u for u in self.dag.nodes if u in pa]

    def to_dict(self) -> dict:
        return {
            "kind": "discrete",
            "dag": self.dag.to_dict(),
            "cardinality": {v: int(self.cardinality[v]) for v in self.dag.nodes},
            "cpt": {v: np.asarray(self.cpt[v]).tolist() for v in self.dag.nodes},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiscreteScm":
        return cls(
            Dag.from_dict(d["dag"]),
            {k: int(v) for k, v in d["cardinality"].items()},
            {k: np.asarray(v, dtype=float) for k, v in d["cpt"].items()},
        )


def random_discrete_scm(
    dag: Dag, cardinality: Mapping[str, int] | int, seed: int, scale: float = 1.0
) -> DiscreteScm:
    """CPTs from softmaxed quadratic scores of the parent levels.

    Each child level gets an intercept, linear terms and all pairwise products
    of parent levels (squares included) with coefficients uniform on
    ``[-scale, scale]``.
    """
    if isinstance(cardinality, int):
        cardinality = {v: cardinality for v in dag.nodes}
    rng = np.random.default_rng(seed)
    cpts = {}
    for v in dag.nodes:
        pa = [u for u in dag.nodes if u in dag.parents(v)]
        k = cardinality[v]
        grids = [np.arange(cardinality[p], dtype=float) for p in pa]
        configs = np.array(list(itertools.product(*grids))) if pa else np.zeros((1, 0))
        quad = [configs[:, i] * configs[:, j] for i in range(len(pa)) for j in range(i, len(pa))]
        feats = np.column_stack([np.ones(len(configs)), configs] + quad) if quad else np.column_stack(
            [np.ones(len(configs)), configs]
        )
        w = rng.uniform(-scale, scale, size=(feats.shape[1], k))
        logits = feats @ w
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        cpts[v] = probs.reshape(tuple(cardinality[p] for p in pa) + (k,))
    return DiscreteScm(dag, dict(cardinality), cpts)


def sample_discrete(scm: DiscreteScm, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be positive")
    g = scm.dag
    values: dict[str, np.ndarray] = {}
    for v in g.topological_order():
        u = _node_stream(seed, v).random(n)
        pa = scm.parent_order(v)
        table = np.asarray(scm.cpt[v])
        rows = table[tuple(values[p] for p in pa)] if pa else np.broadcast_to(table, (n, table.shape[-1]))
        cum = np.cumsum(rows, axis=1)
        values[v] = (u[:, None] >= cum[:, :-1]).sum(axis=1).astype(np.int64)
    return Dataset({v: values[v] for v in g.nodes}, {v: int(scm.cardinality[v]) for v in g.nodes})


def joint_distribution(scm: DiscreteScm, do: Mapping[str, int] | None = None) -> np.ndarray:
    """Exact joint probability array with one axis per node in ``dag.nodes`` order."""
    g = scm.dag
    do = dict(do or {})
    shape = tuple(scm.cardinality[v] for v in g.nodes)
    if int(np.prod(shape, dtype=float)) > MAX_ENUMERATION_STATES:
        raise CapacityError(f"joint state space {np.prod(shape, dtype=float):.3g} exceeds {MAX_ENUMERATION_STATES}")
    joint = np.ones(shape)
    axis = {v: i for i, v in enumerate(g.nodes)}
    for v in g.nodes:
        if v in do:
            factor = np.zeros(scm.cardinality[v])
            factor[do[v]] = 1.0
            bshape = [1] * len(shape)
            bshape[axis[v]] = scm.cardinality[v]
            joint = joint * factor.reshape(bshape)
            continue
        pa = scm.parent_order(v)
        table = np.asarray(scm.cpt[v])
        # parent axes already come in dag order, so a reshape aligns them
        bshape = [1] * len(shape)
        for p in pa:
            bshape[axis[p]] = scm.cardinality[p]
        bshape[axis[v]] = scm.cardinality[v]
        joint = joint * table.reshape(bshape)
    return joint


def _marginal(joint: np.ndarray, g: Dag, keep: Sequence[str]) -> np.ndarray:
    axes = [g.nodes.index(v) for v in keep]
    other = tuple(i for i in range(len(g.nodes)) if i not in axes)
    marg = joint.sum(axis=other)
    # sum keeps remaining axes in ascending order; reorder to match ``keep``
    order = np.argsort(np.argsort(axes))
    return np.transpose(marg, order) if len(axes) > 1 else marg


def _expected_outcome(joint: np.ndarray, g: Dag, y: str) -> float:
    py = _marginal(joint, g, [y])
    return float(np.dot(np.arange(len(py)), py))


def mediator_parents(dag: Dag, x: str, y: str) -> list[str]:
    """Parents of ``y`` that descend from ``x`` (the mediators the WCDE weights over)."""
    de_x = dag.descendants(x)
    return [v for v in dag.nodes if v in dag.parents(y) and v in de_x]


def true_cde(scm: DiscreteScm, x: str, y: str, x_val: int, x_star: int, m: Mapping[str, int]) -> float:
    """E[Y | do(x, m)] - E[Y | do(x*, m)] by exact enumeration."""
    g = scm.dag
    hi = _expected_outcome(joint_distribution(scm, {x: x_val, **m}), g, y)
    lo = _expected_outcome(joint_distribution(scm, {x: x_star, **m}), g, y)
    return hi - lo


def true_wcde_discrete(
    scm: DiscreteScm,
    x: str,
    y: str,
    x_val: int = 1,
    x_star: int = 0,
    mediators: Sequence[str] | None = None,
) -> float:
    """Exact weighted CDE: interventional CDE per mediator configuration, weighted by P(m')."""
    g = scm.dag
    med = list(mediators) if mediators is not None else mediator_parents(g, x, y)
    if not med:
        return true_cde(scm, x, y, x_val, x_star, {})
    pm = _marginal(joint_distribution(scm), g, med)
    total = 0.0
    for config in itertools.product(*(range(scm.cardinality[v]) for v in med)):
        w = float(pm[config])
        if w == 0.0:
            continue
        total += w * true_cde(scm, x, y, x_val, x_star, dict(zip(med, config)))
    return total


def population_wcde_adjusted(
    scm: DiscreteScm,
    x: str,
    y: str,
    x_val: int,
    x_star: int,
    s_set: Sequence[str],
    m_set: Sequence[str],
    joint_weights: bool = False,
) -> float:
    """Adjustment-formula WCDE on the exact observational distribution.

    With ``joint_weights=False`` strata are weighted by P(s)P(m'); with
    ``True`` by the joint P(s, m'), which is the wrong weighting whenever S
    and M' are dependent.
    """
    g = scm.dag
    keep = [x, *s_set, *m_set, y]
    p = _marginal(joint_distribution(scm), g, keep)
    ky = scm.cardinality[y]
    ps_m = p.sum(axis=(0, -1))  # P(s, m)
    ns = len(s_set)
    ps = ps_m.sum(axis=tuple(range(ns, ns + len(m_set)))) if m_set else ps_m
    pm = ps_m.sum(axis=tuple(range(ns))) if s_set else ps_m
    total = 0.0
    for s_cfg in itertools.product(*(range(scm.cardinality[v]) for v in s_set)):
        for m_cfg in itertools.product(*(range(scm.cardinality[v]) for v in m_set)):
            cells = []
            for xv in (x_val, x_star):
                py = p[(xv, *s_cfg, *m_cfg)]
                if py.sum() == 0:
                    break
                cells.append(float(np.dot(np.arange(ky), py) / py.sum()))
            else:
                w = float(ps_m[s_cfg + m_cfg]) if joint_weights else float(ps[s_cfg] * pm[m_cfg])
                total += (cells[0] - cells[1]) * w
    return total


# ---------------------------------------------------------------------------
# serialization and fixtures
# ---------------------------------------------------------------------------


def scm_from_dict(d: Mapping) -> LinearGaussianScm | DiscreteScm:
    kind = d.get("kind")
    if kind == "linear_gaussian":
        return LinearGaussianScm.from_dict(d)
    if kind == "discrete":
        return DiscreteScm.from_dict(d)
    raise ValueError(f"unknown SCM kind {kind!r}")


def load_scm(path: str | Path) -> LinearGaussianScm | DiscreteScm:
    return scm_from_dict(json.loads(Path(path).read_text()))


def save_scm(scm: LinearGaussianScm | DiscreteScm, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scm.to_dict(), indent=1) + "\n")


def sample(scm: LinearGaussianScm | DiscreteScm, n: int, seed: int) -> Dataset:
    if isinstance(scm, LinearGaussianScm):
        return sample_linear(scm, n, seed)
    return sample_discrete(scm, n, seed)


FIG_C1_EFFECT = 1.25
FIG_D5_EFFECT = 7.0
FIXTURE_COEF_SEED = 0
SFM5_SEED = 11


def sfm5_dag() -> Dag:
    """Five-node binary fairness model: confounder C, mediator M, outcome-only cause W."""
    return Dag(
        ["C", "W", "X", "M", "Y"],
        [("C", "X"), ("C", "M"), ("C", "Y"), ("X", "M"), ("X", "Y"), ("M", "Y"), ("W", "Y")],
        "X",
        "Y",
    )


SCM_FIXTURES = ("fig_c1", "fig_c1_null", "fig_d5", "sfm5", "sfm5_null")


def fixture_scm(name: str, seed: int | None = None) -> LinearGaussianScm | DiscreteScm:
    """Named simulation fixtures.

    ``fig_c1``/``fig_d5`` are linear-Gaussian with the exposure effect pinned
    (1.25 and 7); ``*_null`` variants drop the X -> Y edge. ``sfm5`` is binary.
    """
    if name in ("fig_c1", "fig_c1_null"):
        full = random_linear_scm(
            load_fixture("fig_c1"), FIXTURE_COEF_SEED if seed is None else seed, pinned={("X", "Y"): FIG_C1_EFFECT}
        )
        if not name.endswith("_null"):
            return full
        # same coefficients as the non-null twin, minus the direct edge
        g = full.dag.without_edges([("X", "Y")])
        coefs = {e: b for e, b in full.edge_coefficients.items() if e != ("X", "Y")}
        return LinearGaussianScm(g, coefs, dict(full.noise_std))
    if name == "fig_d5":
        g = load_fixture("fig_d5")
        return random_linear_scm(g, FIXTURE_COEF_SEED if seed is None else seed, pinned={("X", "Y"): FIG_D5_EFFECT})
    if name in ("sfm5", "sfm5_null"):
        g = sfm5_dag()
        if name.endswith("_null"):
            g = g.without_edges([("X", "Y")])
        return random_discrete_scm(g, 2, SFM5_SEED if seed is None else seed)
    raise GraphError(f"unknown SCM fixture {name!r}; known: {', '.join(SCM_FIXTURES)}")
