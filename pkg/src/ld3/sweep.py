"""Exhaustive oracle sweeps over every small DAG in which the outcome is a sink.

Every such DAG on n nodes is isomorphic, after relabeling the candidates, to
one whose non-outcome nodes sit at positions 0..n-2 in topological order with
the exposure at some position p and the outcome last. Enumerating edge sets
over that ordering (with all p and all outcome parent sets) therefore covers
every graph at least once. For n=7 that is 12.6M graphs, so the per-graph work
runs in compiled bitmask kernels; ``graph_from_code`` and ``kernel_report``
let the library implementation be checked against the kernels graph by graph.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ld3.graph import Dag, PartitionLabel

# label codes used by the kernels
_LABELS = (
    PartitionLabel.Z1,
    PartitionLabel.Z2_NOT_DE_Y,
    PartitionLabel.Z3,
    PartitionLabel.Z4,
    PartitionLabel.Z5,
    PartitionLabel.Z6,
    PartitionLabel.Z7,
    PartitionLabel.Z8,
)
Z1, Z2, Z3, Z4, Z5, Z6, Z7, Z8 = range(8)

ONE = np.int64(1)


@njit(cache=True)
def _closure(start, rel, n, avoid):
    seen = start
    frontier = start
    while frontier:
        nxt = np.int64(0)
        for i in range(n):
            if (frontier >> i) & 1:
                nxt |= rel[i]
        nxt &= ~avoid
        frontier = nxt & ~seen
        seen |= nxt
    return seen


@njit(cache=True)
def _dsep(pa, ch, n, a, b, s):
    anc = _closure((ONE << a) | (ONE << b) | s, pa, n, np.int64(0))
    seen = (ONE << a) | s
    frontier = ONE << a
    while frontier:
        nbrs = np.int64(0)
        for v in range(n):
            if (frontier >> v) & 1:
                kids = ch[v] & anc
                nbrs |= (pa[v] & anc) | kids
                for c in range(n):
                    if (kids >> c) & 1:
                        nbrs |= pa[c] & anc
        nbrs &= ~seen
        if (nbrs >> b) & 1:
            return False
        seen |= nbrs
        frontier = nbrs
    return True


@njit(cache=True)
def _ld3(pa, ch, n, x, y, zmask, full):
    """Returns (a_de, z13, sdc, test_count) for the oracle run."""
    count = 0
    z8 = np.int64(0)
    z57 = np.int64(0)
    z4 = np.int64(0)
    bx = ONE << x
    for v in range(n):
        b = ONE << v
        if not zmask & b:
            continue
        ix = _dsep(pa, ch, n, v, x, np.int64(0))
        iy = _dsep(pa, ch, n, v, y, np.int64(0))
        count += 2
        if ix and iy:
            z8 |= b
            continue
        if not iy:
            count += 1
            if _dsep(pa, ch, n, v, y, bx):
                z57 |= b
                continue
        if ix:
            count += 1
            if not _dsep(pa, ch, n, v, x, ONE << y):
                z4 |= b
    zp = zmask & ~(z8 | z57 | z4)
    z13 = np.int64(0)
    for v in range(n):
        b = ONE << v
        if zp & b:
            count += 1
            if not _dsep(pa, ch, n, v, y, bx | z4 | (zp & ~b)):
                z13 |= b
    z4p = np.int64(0)
    for v in range(n):
        b = ONE << v
        if z4 & b:
            count += 1
            if not _dsep(pa, ch, n, v, y, bx | z13 | (z4 & ~b)):
                z4p |= b
    a_de = z13 | z4p
    cond = a_de if full else z13
    count += 1
    sdc = 0 if _dsep(pa, ch, n, x, y, cond) else 1
    return a_de, z13, sdc, count


@njit(cache=True)
def _brute_parents(pa, ch, n, x, y, zmask):
    out = np.int64(0)
    for v in range(n):
        b = ONE << v
        if zmask & b:
            if not _dsep(pa, ch, n, v, y, (ONE << x) | (zmask & ~b)):
                out |= b
    return out


@njit(cache=True)
def _partition(pa, ch, n, x, y, labels):
    bx = ONE << x
    by = ONE << y
    zero = np.int64(0)
    de_x = _closure(bx, ch, n, zero) & ~bx
    de_y = _closure(by, ch, n, zero) & ~by
    an_x = _closure(bx, pa, n, zero) & ~bx
    an_y = _closure(by, pa, n, zero) & ~by
    mediated = _closure(de_x & an_y, ch, n, zero)
    confounded = _closure(an_x & (_closure(by, pa, n, bx) & ~by), ch, n, zero)
    cut_pa = pa.copy()
    cut_ch = ch.copy()
    cut_ch[x] = zero
    for i in range(n):
        cut_pa[i] &= ~bx
    for v in range(n):
        if v == x or v == y:
            labels[v] = -1
            continue
        b = ONE << v
        sep_x = _dsep(pa, ch, n, v, x, zero)
        sep_y = _dsep(pa, ch, n, v, y, zero)
        if sep_x and sep_y:
            labels[v] = Z8
        elif de_y & b:
            labels[v] = Z6
        elif (de_x & b) and _dsep(pa, ch, n, v, y, bx):
            labels[v] = Z7
        elif (not sep_x) and _dsep(cut_pa, cut_ch, n, v, y, zero):
            labels[v] = Z5
        elif sep_x:
            labels[v] = Z4
        elif (de_x & b) and (mediated & b):
            labels[v] = Z3
        elif (not (de_x & b)) and (confounded & b):
            labels[v] = Z1
        else:
            labels[v] = Z2


@njit(cache=True)
def _open_path_exists(pa, ch, n, start, end, cond, backdoor, directed):
    """Is there an open simple path start ... end given ``cond``?

    ``backdoor`` requires the first edge to point into ``start``; ``directed``
    requires a directed path of length >= 2.
    """
    path = np.empty(n, np.int64)
    into = np.empty(n, np.bool_)  # arrived at path[d] along an edge pointing into it
    nxt = np.empty(n, np.int64)
    path[0] = start
    into[0] = False
    nxt[0] = 0
    visited = ONE << start
    d = 0
    while d >= 0:
        v = path[d]
        u = nxt[d]
        if u >= n:
            visited &= ~(ONE << v)
            d -= 1
            continue
        nxt[d] = u + 1
        bu = ONE << u
        if visited & bu:
            continue
        fwd = (ch[v] & bu) != 0
        back = (pa[v] & bu) != 0
        if not (fwd or back):
            continue
        if directed and not fwd:
            continue
        if backdoor and d == 0 and not back:
            continue
        if d > 0:
            # v becomes interior: collider iff both edges point into it
            if into[d] and back:
                if not (_closure(ONE << v, ch, n, np.int64(0)) & cond):
                    continue
            elif (cond >> v) & 1:
                continue
        if u == end:
            if directed and d == 0:
                continue
            return True
        d += 1
        path[d] = u
        into[d] = fwd
        nxt[d] = 0
        visited |= bu
    return False


@njit(cache=True)
def _vas_violations(pa, ch, n, x, y, adj, labels):
    bad = 0
    if _open_path_exists(pa, ch, n, x, y, adj, True, False):
        bad += 1
    if _open_path_exists(pa, ch, n, x, y, adj, False, True):
        bad += 1
    bx = ONE << x
    by = ONE << y
    mediators = (_closure(bx, ch, n, np.int64(0)) & ~bx) & (_closure(by, pa, n, np.int64(0)) & ~by)
    for m in range(n):
        bm = ONE << m
        if mediators & bm:
            if _open_path_exists(pa, ch, n, m, y, (adj | bx) & ~bm, True, False):
                bad += 1
    for v in range(n):
        if (adj >> v) & 1 and labels[v] == Z2:
            bad += 1
    return bad


@njit(cache=True)
def _graph_arrays(n, code, xpos, ypar):
    """Decode a covering-graph index into parent/child bitmask arrays.

    Positions 0..n-2 are the ordered non-outcome nodes; bit k of ``code`` is
    the k-th pair (i<j) in row-major order; the outcome is node n-1.
    """
    pa = np.zeros(n, np.int64)
    ch = np.zeros(n, np.int64)
    k = 0
    for j in range(n - 1):
        for i in range(j):
            if (code >> k) & 1:
                pa[j] |= ONE << i
                ch[i] |= ONE << j
            k += 1
    y = n - 1
    for i in range(n - 1):
        if (ypar >> i) & 1:
            pa[y] |= ONE << i
            ch[i] |= ONE << y
    return pa, ch


# stats columns
GRAPHS, ADE_MISMATCH, SDC_MISMATCH, BRUTE_MISMATCH, VAS_BAD, EXCESS_TESTS, TP, FP, FN, TESTS, Z_TOTAL, EDGE_X_Y = range(12)
N_STATS = 12


@njit(cache=True)
def _sweep(n, stats, first_bad):
    m = n - 1
    n_pairs = m * (m - 1) // 2
    x_y_full = True
    labels = np.empty(n, np.int64)
    for code in range(ONE << n_pairs):
        for xpos in range(m):
            for ypar in range(ONE << m):
                pa, ch = _graph_arrays(n, code, xpos, ypar)
                x = xpos
                y = n - 1
                zmask = ((ONE << n) - 1) & ~(ONE << x) & ~(ONE << y)
                nz = n - 2
                a_de, z13, sdc, count = _ld3(pa, ch, n, x, y, zmask, x_y_full)
                truth = pa[y] & ~(ONE << x)
                edge = 1 if (pa[y] >> x) & 1 else 0
                brute = _brute_parents(pa, ch, n, x, y, zmask)
                _partition(pa, ch, n, x, y, labels)
                bad = _vas_violations(pa, ch, n, x, y, a_de, labels)
                stats[GRAPHS] += 1
                stats[TESTS] += count
                stats[Z_TOTAL] += nz
                stats[EDGE_X_Y] += edge
                ok = True
                if a_de != truth:
                    stats[ADE_MISMATCH] += 1
                    ok = False
                if sdc != edge:
                    stats[SDC_MISMATCH] += 1
                    ok = False
                if brute != a_de:
                    stats[BRUTE_MISMATCH] += 1
                    ok = False
                if bad:
                    stats[VAS_BAD] += 1
                    ok = False
                excess = count - (7 * nz + 1)
                if excess > stats[EXCESS_TESTS]:
                    stats[EXCESS_TESTS] = excess
                if excess > 0:
                    ok = False
                for v in range(n):
                    b = ONE << v
                    if (a_de & b) and (truth & b):
                        stats[TP] += 1
                    elif a_de & b:
                        stats[FP] += 1
                    elif truth & b:
                        stats[FN] += 1
                if not ok and first_bad[0] < 0:
                    first_bad[0] = code
                    first_bad[1] = xpos
                    first_bad[2] = ypar


@dataclass(frozen=True)
class SweepResult:
    n_nodes: int
    graphs: int
    a_de_mismatches: int
    sdc_mismatches: int
    brute_force_mismatches: int
    vas_violations: int
    max_excess_tests: int  # max over graphs of test_count - (7|Z| + 1); <= 0 means the bound held
    tp: int
    fp: int
    fn: int
    total_tests: int
    graphs_with_direct_edge: int
    first_failure: tuple[int, int, int] | None

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def sdc_accuracy(self) -> float:
        return 1.0 - self.sdc_mismatches / self.graphs

    @property
    def exact(self) -> bool:
        return (
            self.a_de_mismatches == 0
            and self.sdc_mismatches == 0
            and self.brute_force_mismatches == 0
            and self.vas_violations == 0
            and self.max_excess_tests <= 0
        )


def exhaustive_sweep(n_nodes: int) -> SweepResult:
    """Oracle LD3 on every covering graph with ``n_nodes`` nodes (outcome a sink)."""
    if not 2 <= n_nodes <= 8:
        raise ValueError("exhaustive sweeps are limited to 2..8 nodes")
    stats = np.zeros(N_STATS, np.int64)
    stats[EXCESS_TESTS] = np.iinfo(np.int64).min
    first = np.full(3, -1, np.int64)
    _sweep(n_nodes, stats, first)
    return SweepResult(
        n_nodes,
        int(stats[GRAPHS]),
        int(stats[ADE_MISMATCH]),
        int(stats[SDC_MISMATCH]),
        int(stats[BRUTE_MISMATCH]),
        int(stats[VAS_BAD]),
        int(stats[EXCESS_TESTS]),
        int(stats[TP]),
        int(stats[FP]),
        int(stats[FN]),
        int(stats[TESTS]),
        int(stats[EDGE_X_Y]),
        None if first[0] < 0 else (int(first[0]), int(first[1]), int(first[2])),
    )


def n_covering_graphs(n_nodes: int) -> int:
    m = n_nodes - 1
    return (1 << (m * (m - 1) // 2)) * m * (1 << m)


def iter_codes(n_nodes: int):
    m = n_nodes - 1
    for code in range(1 << (m * (m - 1) // 2)):
        for xpos in range(m):
            for ypar in range(1 << m):
                yield code, xpos, ypar


def graph_from_code(n_nodes: int, code: int, xpos: int, ypar: int) -> Dag:
    """The covering graph as a named Dag: exposure X, outcome Y, candidates Z0, Z1, ..."""
    pa, _ = _graph_arrays(n_nodes, np.int64(code), xpos, np.int64(ypar))
    names = []
    zi = 0
    for i in range(n_nodes - 1):
        if i == xpos:
            names.append("X")
        else:
            names.append(f"Z{zi}")
            zi += 1
    names.append("Y")
    edges = [(names[i], names[j]) for j in range(n_nodes) for i in range(n_nodes) if (int(pa[j]) >> i) & 1]
    return Dag(names, edges, "X", "Y")


def _dag_arrays(g: Dag) -> tuple[np.ndarray, np.ndarray]:
    return np.array(g._pa, dtype=np.int64), np.array(g._ch, dtype=np.int64)


def kernel_report(g: Dag, x: str | None = None, y: str | None = None, full_a_de: bool = True) -> dict:
    """Kernel results for one named DAG, for comparison with the library routines."""
    x = x or g.x
    y = y or g.y
    if len(g.nodes) > 62:
        raise ValueError("kernels use 64-bit masks")
    pa, ch = _dag_arrays(g)
    n = len(g.nodes)
    ix, iy = g.index[x], g.index[y]
    zmask = ((1 << n) - 1) & ~(1 << ix) & ~(1 << iy)
    a_de, z13, sdc, count = _ld3(pa, ch, n, ix, iy, np.int64(zmask), full_a_de)
    brute = _brute_parents(pa, ch, n, ix, iy, np.int64(zmask))
    labels = np.empty(n, np.int64)
    _partition(pa, ch, n, ix, iy, labels)
    bad = _vas_violations(pa, ch, n, ix, iy, np.int64(a_de), labels)
    return {
        "a_de": g.names(int(a_de)),
        "z1or3_parent": g.names(int(z13)),
        "sdc": int(sdc),
        "test_count": int(count),
        "brute_force": g.names(int(brute)),
        "labels": {g.nodes[i]: _LABELS[int(c)] for i, c in enumerate(labels) if c >= 0},
        "vas_violations": int(bad),
    }
