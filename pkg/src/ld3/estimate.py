"""Weighted controlled direct effect estimators: OLS and a stratified plug-in."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from ld3.scm import Dataset

Z_975 = stats.norm.ppf(0.975)


class EstimationError(RuntimeError):
    """The data cannot support the requested estimate."""


@dataclass(frozen=True)
class WcdeEstimate:
    value: float
    ci_low: float
    ci_high: float
    p_value: float
    n_used: int
    estimator: str
    dropped_mass: float | None = None
    dropped_covariates: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = {
            "value": self.value,
            "ci": [self.ci_low, self.ci_high],
            "p_value": self.p_value,
            "n_used": self.n_used,
            "estimator": self.estimator,
        }
        if self.dropped_mass is not None:
            d["dropped_mass"] = self.dropped_mass
        if self.dropped_covariates:
            d["dropped_covariates"] = list(self.dropped_covariates)
        return d

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


@dataclass(frozen=True)
class AdjustmentSpec:
    """Adjustment covariates, optionally split into non-mediators S and mediator parents M'."""

    covariates: tuple[str, ...]
    s_set: tuple[str, ...] | None = None
    m_set: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if (self.s_set is None) != (self.m_set is None):
            raise ValueError("give both s_set and m_set or neither")
        if self.s_set is not None:
            object.__setattr__(self, "s_set", tuple(self.s_set))
            object.__setattr__(self, "m_set", tuple(self.m_set))
            if set(self.s_set) & set(self.m_set):
                raise ValueError("s_set and m_set overlap")
            if set(self.s_set) | set(self.m_set) != set(self.covariates):
                raise ValueError("s_set and m_set must partition the covariates")

    @classmethod
    def split(cls, s_set: Sequence[str], m_set: Sequence[str]) -> "AdjustmentSpec":
        return cls(tuple(s_set) + tuple(m_set), tuple(s_set), tuple(m_set))

    @property
    def has_split(self) -> bool:
        return self.s_set is not None

    def to_dict(self) -> dict:
        d = {"covariates": list(self.covariates)}
        if self.has_split:
            d["s_set"] = list(self.s_set)
            d["m_set"] = list(self.m_set)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AdjustmentSpec":
        if "s_set" in d or "m_set" in d:
            return cls.split(d.get("s_set", []), d.get("m_set", []))
        return cls(tuple(d["covariates"]))


def _check_columns(data: Dataset, cols: Sequence[str]) -> None:
    missing = [c for c in cols if c not in data.columns]
    if missing:
        raise KeyError(f"unknown columns: {missing}")


# ---------------------------------------------------------------------------
# OLS
# ---------------------------------------------------------------------------


def _independent_columns(z: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent subset of the columns of ``z``."""
    if z.shape[1] == 0:
        return np.arange(0)
    _, r, piv = scipy.linalg.qr(z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0)))
    return np.sort(piv[:rank])


def wcde_ols(data: Dataset, x: str, y: str, adj: AdjustmentSpec) -> WcdeEstimate:
    """Coefficient on ``x`` from OLS of ``y`` on ``x``, the covariates and an intercept."""
    cov = list(adj.covariates)
    _check_columns(data, [x, y, *cov])
    if x in cov or y in cov:
        raise ValueError("covariates may not include the exposure or outcome")
    n = data.n_rows
    if n <= len(cov) + 2:
        raise EstimationError(f"need more than {len(cov) + 2} rows for OLS, got {n}")
    yv = data.columns[y].astype(float)
    base = np.column_stack([np.ones(n), data.columns[x].astype(float)])
    zmat = data.matrix(cov) if cov else np.empty((n, 0))
    # collinearity among covariates is judged after projecting out intercept and exposure
    q, _ = np.linalg.qr(base)
    resid = zmat - q @ (q.T @ zmat)
    if np.ptp(base[:, 1]) == 0:
        raise EstimationError("exposure column is constant")
    scale = np.linalg.norm(zmat, axis=0)
    scale[scale == 0] = 1.0
    keep = _independent_columns(resid / scale)
    dropped = tuple(c for i, c in enumerate(cov) if i not in set(keep.tolist()))
    if dropped:
        warnings.warn(f"dropping collinear covariates: {list(dropped)}", stacklevel=2)
    design = np.column_stack([base, zmat[:, keep]])
    beta, _, rank, _ = np.linalg.lstsq(design, yv, rcond=None)
    if rank < design.shape[1]:
        raise EstimationError("exposure is collinear with the covariates")
    dof = n - design.shape[1]
    rss = float(np.sum((yv - design @ beta) ** 2))
    sigma2 = rss / dof
    xtx_inv = np.linalg.inv(design.T @ design)
    se = float(np.sqrt(max(sigma2 * xtx_inv[1, 1], 0.0)))
    value = float(beta[1])
    if se == 0.0:
        p = 0.0 if value != 0 else 1.0
    else:
        p = float(2 * stats.norm.sf(abs(value) / se))
    return WcdeEstimate(value, float(value - Z_975 * se), float(value + Z_975 * se), p, n, "ols", None, dropped)


# ---------------------------------------------------------------------------
# stratified plug-in
# ---------------------------------------------------------------------------


def _codes(data: Dataset, cols: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Integer code per row for the joint configuration of ``cols`` plus the configurations seen."""
    n = data.n_rows
    if not cols:
        return np.zeros(n, dtype=np.int64), np.zeros((1, 0), dtype=np.int64)
    levels = [data.levels[c] for c in cols]
    if all(k is not None for k in levels) and np.prod(levels, dtype=float) <= 1e7:
        code = np.ravel_multi_index([data.columns[c] for c in cols], levels)
        present = np.bincount(code, minlength=int(np.prod(levels))) > 0
        seen = np.flatnonzero(present)
        inv = (np.cumsum(present) - 1)[code]
        return inv.astype(np.int64), np.column_stack(np.unravel_index(seen, levels))
    mat = np.column_stack([data.columns[c] for c in cols])
    configs, inv = np.unique(mat, axis=0, return_inverse=True)
    return inv.reshape(-1).astype(np.int64), configs


@dataclass
class _Cells:
    """Sufficient statistics for the plug-in: counts and outcome sums per (s, m, x) cell."""

    n_s: np.ndarray  # (S,)
    n_m: np.ndarray  # (M,)
    cnt: np.ndarray  # (S, M, 2) rows with x = x_val / x_star
    ysum: np.ndarray  # (S, M, 2)
    n: float


def _plugin(cells: _Cells) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Per-m CDE, per-m supported s-mass, the weighted CDE and the dropped mass."""
    ps = cells.n_s / cells.n
    pm = cells.n_m / cells.n
    with np.errstate(invalid="ignore", divide="ignore"):
        means = cells.ysum / cells.cnt
    ok = (cells.cnt > 0).all(axis=2)  # (S, M)
    diff = np.where(ok, means[..., 0] - means[..., 1], 0.0)
    mass = (ok * ps[:, None]).sum(axis=0)  # supported s-mass per m
    with np.errstate(invalid="ignore", divide="ignore"):
        cde = (diff * ps[:, None]).sum(axis=0) / mass
    has = mass > 0
    if not has.any():
        return cde, mass, np.nan, 1.0
    w = pm * has
    wcde = float(np.sum(np.where(has, cde, 0.0) * w) / w.sum())
    dropped = float(1.0 - np.sum(pm * mass))
    return cde, mass, wcde, max(dropped, 0.0)


def _build_cells(
    s_code, n_s_levels, m_code, n_m_levels, xv, yv, x_val, x_star, weights=None
) -> _Cells:
    w = np.ones(len(xv)) if weights is None else weights
    n_s = np.bincount(s_code, weights=w, minlength=n_s_levels)
    n_m = np.bincount(m_code, weights=w, minlength=n_m_levels)
    cnt = np.zeros((n_s_levels, n_m_levels, 2))
    ysum = np.zeros((n_s_levels, n_m_levels, 2))
    flat = s_code * n_m_levels + m_code
    for k, level in enumerate((x_val, x_star)):
        sel = xv == level
        cnt[..., k] = np.bincount(flat[sel], weights=w[sel], minlength=n_s_levels * n_m_levels).reshape(
            n_s_levels, n_m_levels
        )
        ysum[..., k] = np.bincount(
            flat[sel], weights=(w * yv)[sel], minlength=n_s_levels * n_m_levels
        ).reshape(n_s_levels, n_m_levels)
    return _Cells(n_s, n_m, cnt, ysum, float(w.sum()))


def _require_split(data: Dataset, x: str, y: str, adj: AdjustmentSpec) -> None:
    if not adj.has_split:
        raise ValueError("the stratified estimator needs an explicit s_set / m_set split")
    _check_columns(data, [x, y, *adj.covariates])
    for c in (x, *adj.covariates):
        if not data.is_categorical(c):
            raise TypeError(f"stratified estimation needs categorical columns; {c!r} is continuous")
    if data.n_rows == 0:
        raise EstimationError("no rows")


def _prepare(data: Dataset, x: str, y: str, x_val, x_star, adj: AdjustmentSpec):
    _require_split(data, x, y, adj)
    s_code, s_cfg = _codes(data, adj.s_set)
    m_code, m_cfg = _codes(data, adj.m_set)
    xv = data.columns[x]
    yv = data.columns[y].astype(float)
    return s_code, s_cfg, m_code, m_cfg, xv, yv


def cde_at_m(
    data: Dataset,
    x: str,
    y: str,
    x_val: int,
    x_star: int,
    m_val: Mapping[str, int] | Sequence[int],
    adj: AdjustmentSpec,
) -> float:
    """Plug-in CDE at one mediator configuration: sum over s of the mean contrast times P(s)."""
    s_code, s_cfg, m_code, m_cfg, xv, yv = _prepare(data, x, y, x_val, x_star, adj)
    if isinstance(m_val, Mapping):
        m_val = [m_val[c] for c in adj.m_set]
    target = np.asarray(m_val, dtype=np.int64)
    if len(target) != len(adj.m_set):
        raise ValueError("m_val must give one level per mediator")
    hit = np.nonzero((m_cfg == target).all(axis=1))[0]
    if len(hit) == 0:
        raise EstimationError(f"mediator configuration {list(m_val)} never occurs")
    cells = _build_cells(s_code, len(s_cfg), m_code, len(m_cfg), xv, yv, x_val, x_star)
    cde, mass, _, _ = _plugin(cells)
    j = int(hit[0])
    if mass[j] == 0:
        raise EstimationError(f"no stratum supports both exposure levels at m={list(m_val)}")
    if mass[j] < 1.0 - 1e-12:
        warnings.warn(f"{1.0 - mass[j]:.4f} of the stratum mass lacks support at m={list(m_val)}", stacklevel=2)
    return float(cde[j])


def wcde_stratified(
    data: Dataset,
    x: str,
    y: str,
    x_val: int,
    x_star: int,
    adj: AdjustmentSpec,
    n_boot: int = 500,
    seed: int = 0,
    joint_weights: bool = False,
) -> WcdeEstimate:
    """Double-sum plug-in with product-of-marginals weights P(s)P(m'), bootstrap CI.

    ``joint_weights=True`` swaps in the joint P(s, m') and exists only to show
    the difference.
    """
    s_code, s_cfg, m_code, m_cfg, xv, yv = _prepare(data, x, y, x_val, x_star, adj)
    n_s, n_m = len(s_cfg), len(m_cfg)
    # rows collapse onto (s, m, x, y) cells; resampling rows is multinomial resampling of cells
    if data.is_categorical(y):
        ky, kx = data.levels[y], data.levels[x]
        flat = ((s_code * n_m + m_code) * kx + xv) * ky + data.columns[y]
        counts = np.bincount(flat, minlength=n_s * n_m * kx * ky)
        idx = np.flatnonzero(counts)
        counts = counts[idx]
        cells_u = np.column_stack(np.unravel_index(idx, (n_s, n_m, kx, ky)))
    else:
        key = np.column_stack([s_code, m_code, xv, yv])
        cells_u, counts = np.unique(key, axis=0, return_counts=True)
    cs, cm = cells_u[:, 0].astype(np.int64), cells_u[:, 1].astype(np.int64)
    cx, cy = cells_u[:, 2], cells_u[:, 3]

    def estimate(weights):
        cells = _build_cells(cs, n_s, cm, n_m, cx, cy, x_val, x_star, weights.astype(float))
        if not joint_weights:
            return _plugin(cells)[2:]
        return _joint_weighted(cells)

    value, dropped = estimate(counts)
    if not np.isfinite(value):
        raise EstimationError("no stratum has support for both exposure levels")

    rng = np.random.default_rng(seed)
    n = data.n_rows
    probs = counts / n
    boots = np.array([estimate(rng.multinomial(n, probs))[0] for _ in range(n_boot)])
    boots = boots[np.isfinite(boots)]
    if len(boots) < 2:
        raise EstimationError("bootstrap failed: resamples lacked support")
    lo, hi = np.percentile(boots, [2.5, 97.5])
    lo, hi = min(lo, value), max(hi, value)
    se = float(np.std(boots, ddof=1))
    p = float(2 * stats.norm.sf(abs(value) / se)) if se > 0 else (0.0 if value != 0 else 1.0)
    return WcdeEstimate(float(value), float(lo), float(hi), p, n, "stratified", float(dropped))


def _joint_weighted(cells: _Cells) -> tuple[float, float]:
    p_sm = (cells.cnt.sum(axis=2) / cells.n)  # approximates P(s, m') over rows with x in the pair
    with np.errstate(invalid="ignore", divide="ignore"):
        means = cells.ysum / cells.cnt
    ok = (cells.cnt > 0).all(axis=2)
    diff = np.where(ok, means[..., 0] - means[..., 1], 0.0)
    w = p_sm * ok
    if w.sum() == 0:
        return np.nan, 1.0
    return float((diff * w).sum() / w.sum()), float(1.0 - w.sum() / max(p_sm.sum(), 1e-300))
