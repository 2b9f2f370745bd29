"""Conditional-independence tests with per-run accounting.

Three tests share one contract: Fisher-z for continuous columns, a stratified
Pearson chi-square for categorical columns, and a d-separation oracle that
reads answers off a known DAG.
"""
from __future__ import annotations

import threading
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from ld3.graph import Dag, d_separated
from ld3.scm import Dataset

TEST_NAMES = ("fisherz", "chi2", "oracle")
R_CLAMP = 1.0 - 1e-12
MIN_EXPECTED = 5.0


@dataclass(frozen=True)
class CiQuery:
    a: str
    b: str
    s: tuple[str, ...] = ()
    alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(self.s))
        if self.a == self.b:
            raise ValueError("a and b must differ")
        if self.a in self.s or self.b in self.s:
            raise ValueError("a and b may not appear in the conditioning set")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class CiDecision:
    independent: bool
    p_value: float
    statistic: float
    dof_or_n_eff: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "independent": bool(self.independent),
            "p_value": float(self.p_value),
            "statistic": float(self.statistic),
            "dof_or_n_eff": float(self.dof_or_n_eff),
            "degenerate": bool(self.degenerate),
        }


class TestCounter:
    """Thread-safe tally of CI tests, bucketed by conditioning-set size."""

    __test__ = False  # not a pytest class

    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0
        self.degenerate = 0
        self.by_conditioning_size: Counter[int] = Counter()

    def record(self, size: int, degenerate: bool = False) -> None:
        with self._lock:
            self.total += 1
            self.by_conditioning_size[size] += 1
            if degenerate:
                self.degenerate += 1

    def mean_conditioning_size(self) -> float:
        if not self.total:
            return 0.0
        return sum(k * v for k, v in self.by_conditioning_size.items()) / self.total


def _decide(p: float, stat: float, dof: float, alpha: float) -> CiDecision:
    p = float(min(max(p, 0.0), 1.0))
    return CiDecision(p > alpha, p, float(stat), float(dof))


def _degenerate(dof: float = 0.0) -> CiDecision:
    return CiDecision(True, 1.0, 0.0, dof, degenerate=True)


# ---------------------------------------------------------------------------
# Fisher-z
# ---------------------------------------------------------------------------


def _partial_corr(corr: np.ndarray) -> float | None:
    """Partial correlation of the first two variables given the rest.

    Uses the Schur complement with a pseudo-inverse so collinear conditioning
    columns are harmless. Returns None when a or b is a deterministic
    function of the conditioning set.
    """
    if corr.shape[0] == 2:
        return float(corr[0, 1])
    ab = corr[:2, :2]
    cross = corr[:2, 2:]
    resid = ab - cross @ np.linalg.pinv(corr[2:, 2:], hermitian=True) @ cross.T
    va, vb = resid[0, 0], resid[1, 1]
    if va <= 1e-12 or vb <= 1e-12:
        return None
    return float(resid[0, 1] / np.sqrt(va * vb))


def _fisher_z_from_corr(corr: np.ndarray, n: int, n_cond: int, alpha: float) -> CiDecision:
    n_eff = n - n_cond - 3
    if n_eff <= 0:
        raise ValueError(f"Fisher-z needs more than {n_cond + 3} rows, got {n}")
    if not np.all(np.isfinite(corr)):
        # a constant column has no correlation with anything
        return _degenerate(n_eff)
    r = _partial_corr(corr)
    if r is None:
        return _degenerate(n_eff)
    r = float(np.clip(r, -R_CLAMP, R_CLAMP))
    stat = np.sqrt(n_eff) * np.arctanh(r)
    p = 2.0 * stats.norm.sf(abs(stat))
    return _decide(p, stat, n_eff, alpha)


def _corr(x: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.atleast_2d(np.corrcoef(x, rowvar=False))


def fisher_z(data: Dataset, q: CiQuery) -> CiDecision:
    cols = [q.a, q.b, *q.s]
    _require_types(data, cols, categorical=False, test="fisherz")
    return _fisher_z_from_corr(_corr(data.matrix(cols)), data.n_rows, len(q.s), q.alpha)


# ---------------------------------------------------------------------------
# chi-square
# ---------------------------------------------------------------------------


def _stratum_codes(data: Dataset, s: Sequence[str]) -> np.ndarray:
    n = data.n_rows
    if not s:
        return np.zeros(n, dtype=np.int64)
    code = np.zeros(n, dtype=np.int64)
    span = 1
    for name in s:
        k = data.levels[name]
        if span * k > 2**62:
            # too many configurations to index directly; compress what we have
            code = np.unique(code, return_inverse=True)[1].astype(np.int64)
            span = int(code.max()) + 1
        code = code * k + data.columns[name]
        span *= k
    return np.unique(code, return_inverse=True)[1].reshape(-1).astype(np.int64)


def chi_square_from_codes(
    a: np.ndarray, ka: int, b: np.ndarray, kb: int, strata: np.ndarray, alpha: float,
    min_expected: float = MIN_EXPECTED,
) -> CiDecision:
    n_strata = int(strata.max()) + 1 if strata.size else 0
    counts = np.bincount((strata * ka + a) * kb + b, minlength=n_strata * ka * kb)
    counts = counts.reshape(n_strata, ka, kb).astype(float)
    rows = counts.sum(axis=2)
    cols = counts.sum(axis=1)
    tot = rows.sum(axis=1)
    r_obs = (rows > 0).sum(axis=1)
    c_obs = (cols > 0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        expected = rows[:, :, None] * cols[:, None, :] / tot[:, None, None]
    live = (rows > 0)[:, :, None] & (cols > 0)[:, None, :]
    # a stratum counts only if its reduced table is at least 2x2 with every expected count >= threshold
    sparse = np.where(live, expected < min_expected, False).any(axis=(1, 2))
    keep = (r_obs >= 2) & (c_obs >= 2) & ~sparse
    if not keep.any():
        return _degenerate()
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(live, (counts - expected) ** 2 / expected, 0.0)
    stat = float(terms[keep].sum())
    dof = float(((r_obs[keep] - 1) * (c_obs[keep] - 1)).sum())
    p = float(stats.chi2.sf(stat, dof))
    return _decide(p, stat, dof, alpha)


def chi_square(data: Dataset, q: CiQuery, min_expected: float = MIN_EXPECTED) -> CiDecision:
    cols = [q.a, q.b, *q.s]
    _require_types(data, cols, categorical=True, test="chi2")
    if data.n_rows == 0:
        raise ValueError("chi-square needs at least one row")
    strata = _stratum_codes(data, q.s)
    return chi_square_from_codes(
        data.columns[q.a], data.levels[q.a], data.columns[q.b], data.levels[q.b], strata, q.alpha, min_expected
    )


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def oracle_test(g: Dag, q: CiQuery) -> CiDecision:
    indep = d_separated(g, q.a, q.b, q.s)
    return CiDecision(indep, 1.0 if indep else 0.0, 0.0, float(len(q.s)))


# ---------------------------------------------------------------------------
# stateful testers used by the discovery routines
# ---------------------------------------------------------------------------


def _require_types(data: Dataset, cols: Iterable[str], categorical: bool, test: str) -> None:
    for c in cols:
        if c not in data.columns:
            raise KeyError(f"unknown column {c!r}")
        if data.is_categorical(c) != categorical:
            want = "categorical" if categorical else "continuous"
            raise TypeError(f"{test} needs {want} columns; {c!r} is {data.column_type(c)}")


@dataclass
class CiTester:
    """Base class: subclasses implement ``_decide``; ``test`` counts and traces."""

    alpha: float = 0.05
    keep_trace: bool = False
    counter: TestCounter = field(default_factory=TestCounter)
    trace: list[tuple[CiQuery, CiDecision]] = field(default_factory=list)

    name = "base"

    def test(self, a: str, b: str, s: Iterable[str] = ()) -> CiDecision:
        q = CiQuery(a, b, tuple(s), self.alpha)
        d = self._decide(q)
        self.counter.record(len(q.s), d.degenerate)
        if self.keep_trace:
            self.trace.append((q, d))
        return d

    def independent(self, a: str, b: str, s: Iterable[str] = ()) -> bool:
        return self.test(a, b, s).independent

    def check_columns(self, cols: Iterable[str]) -> None:
        pass

    def _decide(self, q: CiQuery) -> CiDecision:
        raise NotImplementedError


@dataclass
class FisherZTester(CiTester):
    data: Dataset | None = None
    name = "fisherz"

    def __post_init__(self):
        if self.data is None:
            raise ValueError("FisherZTester needs data")
        self._cols = {c: i for i, c in enumerate(self.data.names) if not self.data.is_categorical(c)}
        self._corr = _corr(self.data.matrix(list(self._cols))) if self._cols else np.zeros((0, 0))

    def check_columns(self, cols):
        _require_types(self.data, cols, categorical=False, test=self.name)

    def _decide(self, q):
        self.check_columns([q.a, q.b, *q.s])
        idx = [self._cols[c] for c in (q.a, q.b, *q.s)]
        return _fisher_z_from_corr(self._corr[np.ix_(idx, idx)], self.data.n_rows, len(q.s), q.alpha)


@dataclass
class ChiSquareTester(CiTester):
    data: Dataset | None = None
    min_expected: float = MIN_EXPECTED
    name = "chi2"

    def __post_init__(self):
        if self.data is None:
            raise ValueError("ChiSquareTester needs data")
        if self.data.n_rows == 0:
            raise ValueError("chi-square needs at least one row")

    def check_columns(self, cols):
        _require_types(self.data, cols, categorical=True, test=self.name)

    def _decide(self, q):
        d = chi_square(self.data, q, self.min_expected)
        if d.degenerate:
            warnings.warn(f"chi-square query {q.a} _||_ {q.b} | {list(q.s)} has no usable strata", stacklevel=3)
        return d


@dataclass
class OracleTester(CiTester):
    dag: Dag | None = None
    name = "oracle"

    def __post_init__(self):
        if self.dag is None:
            raise ValueError("OracleTester needs a DAG")

    def check_columns(self, cols):
        for c in cols:
            if c not in self.dag.index:
                raise KeyError(f"unknown node {c!r}")

    def _decide(self, q):
        return oracle_test(self.dag, q)


def make_tester(
    test: str, alpha: float, data: Dataset | None = None, dag: Dag | None = None, keep_trace: bool = False
) -> CiTester:
    if test == "fisherz":
        return FisherZTester(alpha=alpha, keep_trace=keep_trace, data=data)
    if test == "chi2":
        return ChiSquareTester(alpha=alpha, keep_trace=keep_trace, data=data)
    if test == "oracle":
        return OracleTester(alpha=alpha, keep_trace=keep_trace, dag=dag)
    raise ValueError(f"unknown test {test!r}; choose from {', '.join(TEST_NAMES)}")
