"""Directed acyclic graphs, d-separation and ground-truth partition oracles.

Node sets are handled internally as Python ``int`` bitmasks indexed by the
position of each node in ``Dag.nodes``; this keeps d-separation cheap enough
for exhaustive sweeps over small graphs and for oracle runs on graphs with a
few hundred nodes.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Invalid graph construction or query."""


class PartitionLabel(str, enum.Enum):
    Z1 = "Z1"
    Z2_NOT_DE_Y = "Z2_not_de_Y"
    Z3 = "Z3"
    Z4 = "Z4"
    Z5 = "Z5"
    Z6 = "Z6"
    Z7 = "Z7"
    Z8 = "Z8"
    # labels emitted by LD3 itself
    Z5_OR_7 = "Z5or7"
    Z1_OR_3_PARENT = "Z1or3_parent"
    Z4_PARENT = "Z4_parent"
    UNRESOLVED = "Unresolved"

    def __str__(self) -> str:
        return self.value


ORACLE_LABELS = frozenset(
    {
        PartitionLabel.Z1,
        PartitionLabel.Z2_NOT_DE_Y,
        PartitionLabel.Z3,
        PartitionLabel.Z4,
        PartitionLabel.Z5,
        PartitionLabel.Z6,
        PartitionLabel.Z7,
        PartitionLabel.Z8,
    }
)
LD3_LABELS = frozenset(
    {
        PartitionLabel.Z8,
        PartitionLabel.Z5_OR_7,
        PartitionLabel.Z4,
        PartitionLabel.Z1_OR_3_PARENT,
        PartitionLabel.Z4_PARENT,
        PartitionLabel.UNRESOLVED,
    }
)


def iter_bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


@dataclass(frozen=True)
class Dag:
    """Immutable DAG over named variables, optionally with exposure ``x`` and outcome ``y``."""

    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    x: str | None = None
    y: str | None = None
    _order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __init__(
        self,
        nodes: Iterable[str],
        edges: Iterable[tuple[str, str]],
        x: str | None = None,
        y: str | None = None,
    ):
        nodes = tuple(nodes)
        edge_list = [tuple(e) for e in edges]
        if len(set(nodes)) != len(nodes):
            raise GraphError("duplicate node names")
        known = set(nodes)
        seen = set()
        for p, c in edge_list:
            if p not in known or c not in known:
                raise GraphError(f"edge {p}->{c} references an unknown node")
            if p == c:
                raise GraphError(f"self-loop on {p}")
            if (p, c) in seen:
                raise GraphError(f"duplicate edge {p}->{c}")
            seen.add((p, c))
        for v in (x, y):
            if v is not None and v not in known:
                raise GraphError(f"unknown designated node {v!r}")
        if x is not None and x == y:
            raise GraphError("exposure and outcome must differ")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", frozenset(edge_list))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        order = _topological_order(len(nodes), self._pa, self._ch)
        if order is None:
            raise GraphError("graph contains a cycle")
        object.__setattr__(self, "_order", order)
        if x is not None and y is not None and self.is_ancestor(y, x):
            raise GraphError(f"outcome {y} is an ancestor of exposure {x}")

    # -- indexing -----------------------------------------------------------
    @cached_property
    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.nodes)}

    @cached_property
    def _pa(self) -> list[int]:
        idx = {v: i for i, v in enumerate(self.nodes)}
        pa = [0] * len(self.nodes)
        for p, c in self.edges:
            pa[idx[c]] |= 1 << idx[p]
        return pa

    @cached_property
    def _ch(self) -> list[int]:
        idx = {v: i for i, v in enumerate(self.nodes)}
        ch = [0] * len(self.nodes)
        for p, c in self.edges:
            ch[idx[p]] |= 1 << idx[c]
        return ch

    def _i(self, v: str) -> int:
        try:
            return self.index[v]
        except KeyError:
            raise GraphError(f"unknown node {v!r}") from None

    def mask(self, vs: Iterable[str]) -> int:
        m = 0
        for v in vs:
            m |= 1 << self._i(v)
        return m

    def names(self, mask: int) -> set[str]:
        return {self.nodes[i] for i in iter_bits(mask)}

    def topological_order(self) -> list[str]:
        return [self.nodes[i] for i in self._order]

    # -- relatives ----------------------------------------------------------
    def _closure(self, mask: int, rel: list[int], avoid: int = 0) -> int:
        seen = mask
        frontier = mask
        while frontier:
            nxt = 0
            for i in iter_bits(frontier):
                nxt |= rel[i]
            nxt &= ~avoid
            frontier = nxt & ~seen
            seen |= nxt
        return seen

    def ancestors_mask(self, mask: int, avoid: int = 0) -> int:
        """Ancestors of ``mask``, including the nodes themselves.

        Nodes in ``avoid`` are neither returned nor walked through.
        """
        return self._closure(mask, self._pa, avoid)

    def descendants_mask(self, mask: int) -> int:
        return self._closure(mask, self._ch)

    def parents(self, v: str) -> set[str]:
        return self.names(self._pa[self._i(v)])

    def children(self, v: str) -> set[str]:
        return self.names(self._ch[self._i(v)])

    def ancestors(self, v: str) -> set[str]:
        """Proper ancestors of ``v``."""
        i = self._i(v)
        return self.names(self.ancestors_mask(1 << i) & ~(1 << i))

    def descendants(self, v: str) -> set[str]:
        """Proper descendants of ``v``."""
        i = self._i(v)
        return self.names(self.descendants_mask(1 << i) & ~(1 << i))

    def is_ancestor(self, a: str, b: str) -> bool:
        return a != b and bool(self.ancestors_mask(1 << self._i(b)) >> self._i(a) & 1)

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self.edges

    # -- derived graphs -----------------------------------------------------
    def with_designation(self, x: str | None, y: str | None) -> "Dag":
        return Dag(self.nodes, self.edges, x, y)

    def without_edges(self, drop: Iterable[tuple[str, str]]) -> "Dag":
        drop = set(drop)
        return Dag(self.nodes, [e for e in self.edges if e not in drop], self.x, self.y)

    def with_edges(self, add: Iterable[tuple[str, str]]) -> "Dag":
        return Dag(self.nodes, list(self.edges) + [e for e in add if e not in self.edges], self.x, self.y)

    def subgraph(self, keep: Iterable[str]) -> "Dag":
        keep = set(keep)
        nodes = [v for v in self.nodes if v in keep]
        edges = [(p, c) for p, c in self.edges if p in keep and c in keep]
        x = self.x if self.x in keep else None
        y = self.y if self.y in keep else None
        return Dag(nodes, edges, x, y)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": sorted([list(e) for e in self.edges]),
            "x": self.x,
            "y": self.y,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Dag":
        return cls(d["nodes"], [tuple(e) for e in d["edges"]], d.get("x"), d.get("y"))

    def to_edge_list(self) -> str:
        lines = [f"{p} -> {c}" for p, c in sorted(self.edges)]
        lines += [v for v in self.nodes if not (self._pa[self.index[v]] or self._ch[self.index[v]])]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text: str, x: str | None = None, y: str | None = None) -> "Dag":
        """Parse ``parent -> child`` lines; a bare name declares an isolated node."""
        nodes: list[str] = []
        edges = []

        def add(v):
            if v not in nodes:
                nodes.append(v)

        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" in line:
                p, c = (s.strip() for s in line.split("->", 1))
                if not p or not c:
                    raise GraphError(f"malformed edge line: {raw!r}")
                add(p)
                add(c)
                edges.append((p, c))
            else:
                add(line)
        return cls(nodes, edges, x, y)


def _topological_order(n: int, pa: list[int], ch: list[int]) -> tuple[int, ...] | None:
    indeg = [bin(m).count("1") for m in pa]
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in iter_bits(ch[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    return tuple(order) if len(order) == n else None


def save_dag(g: Dag, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(g.to_dict(), indent=2) + "\n")
    else:
        path.write_text(g.to_edge_list())


def load_dag(path: str | Path, x: str | None = None, y: str | None = None) -> Dag:
    path = Path(path)
    if path.suffix == ".json":
        g = Dag.from_dict(json.loads(path.read_text()))
        if x is not None or y is not None:
            g = g.with_designation(x or g.x, y or g.y)
        return g
    return Dag.from_edge_list(path.read_text(), x, y)


FIXTURE_IDS = ("fig_c1", "fig_d5")


def load_fixture(name: str) -> Dag:
    if name not in FIXTURE_IDS:
        raise GraphError(f"unknown fixture {name!r}; known: {', '.join(FIXTURE_IDS)}")
    text = resources.files("ld3.fixtures").joinpath(f"{name}.json").read_text()
    return Dag.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# d-separation
# ---------------------------------------------------------------------------


def _dsep_masks(g: Dag, ia: int, ib: int, smask: int) -> bool:
    pa, ch = g._pa, g._ch
    anc = g.ancestors_mask((1 << ia) | (1 << ib) | smask)
    target = 1 << ib
    blocked = smask
    seen = (1 << ia) | blocked
    stack = [ia]
    while stack:
        v = stack.pop()
        kids = ch[v] & anc
        nbrs = (pa[v] & anc) | kids
        # moral edges between co-parents of a common child
        for c in iter_bits(kids):
            nbrs |= pa[c] & anc
        nbrs &= ~seen
        if nbrs & target:
            return False
        seen |= nbrs
        stack.extend(iter_bits(nbrs))
    return True


def d_separated(g: Dag, a: str, b: str, s: Iterable[str] = ()) -> bool:
    """True iff ``a`` and ``b`` are d-separated by ``s`` in ``g``.

    Uses the ancestral moral graph criterion: restrict to the ancestors of
    ``{a, b} | s``, marry co-parents, drop edge directions, delete ``s`` and
    test whether ``a`` still reaches ``b``.
    """
    ia, ib = g._i(a), g._i(b)
    smask = g.mask(s)
    if ia == ib:
        raise GraphError("d-separation query needs two distinct nodes")
    if smask >> ia & 1 or smask >> ib & 1:
        raise GraphError("query endpoints may not be in the conditioning set")
    return _dsep_masks(g, ia, ib, smask)


def iter_paths(g: Dag, a: str, b: str) -> Iterator[list[str]]:
    """All simple paths between ``a`` and ``b`` in the skeleton of ``g``."""
    adj = {v: g.parents(v) | g.children(v) for v in g.nodes}
    path = [a]
    on_path = {a}

    def walk(v):
        if v == b:
            yield list(path)
            return
        for w in sorted(adj[v]):
            if w in on_path:
                continue
            path.append(w)
            on_path.add(w)
            yield from walk(w)
            path.pop()
            on_path.discard(w)

    yield from walk(a)


def path_is_open(g: Dag, path: Sequence[str], s: Iterable[str]) -> bool:
    s = set(s)
    for k in range(1, len(path) - 1):
        prev, v, nxt = path[k - 1], path[k], path[k + 1]
        collider = g.has_edge(prev, v) and g.has_edge(nxt, v)
        if collider:
            if v not in s and not (g.descendants(v) & s):
                return False
        elif v in s:
            return False
    return True


def d_separated_by_paths(g: Dag, a: str, b: str, s: Iterable[str] = ()) -> bool:
    """Brute-force d-separation: enumerate every simple path and check blocking."""
    s = set(s)
    return not any(path_is_open(g, p, s) for p in iter_paths(g, a, b))


# ---------------------------------------------------------------------------
# ground-truth oracles
# ---------------------------------------------------------------------------


def parents(g: Dag, v: str) -> set[str]:
    return g.parents(v)


def _require_xy(g: Dag, x: str | None, y: str | None) -> tuple[str, str]:
    x = x if x is not None else g.x
    y = y if y is not None else g.y
    if x is None or y is None:
        raise GraphError("exposure and outcome must be designated")
    g._i(x), g._i(y)
    if x == y:
        raise GraphError("exposure and outcome must differ")
    if g.is_ancestor(y, x):
        raise GraphError(f"outcome {y} is an ancestor of exposure {x}")
    return x, y


def oracle_partition(g: Dag, x: str | None = None, y: str | None = None) -> dict[str, PartitionLabel]:
    """Ground-truth causal partition label for every node other than ``x`` and ``y``.

    Rows are tried in the order Z8, Z6, Z7, Z5, Z4, Z3, Z1, Z2 and the first
    match wins:

    * Z8: d-separated from both ``x`` and ``y`` given nothing.
    * Z6: descendant of ``y``.
    * Z7: descendant of ``x`` with ``Z ⊥ y | x``.
    * Z5: dependent on ``x`` and d-separated from ``y`` once the edges out of
      ``x`` are cut (instruments and their proxies).
    * Z4: marginally independent of ``x`` but dependent on ``y``.
    * Z3: descendant of ``x`` that is, or descends from, a node on a
      directed ``x -> ... -> y`` path.
    * Z1: non-descendant of ``x`` with a confounder among its ancestors
      (itself included); a confounder is an ancestor of ``x`` with a directed
      path into ``y`` avoiding ``x``.
    * Z2: everything left over (colliders and their proxies).
    """
    x, y = _require_xy(g, x, y)
    ix, iy = g.index[x], g.index[y]
    bx, by = 1 << ix, 1 << iy
    de_x = g.descendants_mask(bx) & ~bx
    de_y = g.descendants_mask(by) & ~by
    an_y = g.ancestors_mask(by) & ~by
    an_x = g.ancestors_mask(bx) & ~bx
    mediators = de_x & an_y
    mediated = g.descendants_mask(mediators)
    cut = g.without_edges([(x, c) for c in g.children(x)])
    an_y_avoiding_x = g.ancestors_mask(by, avoid=bx) & ~by
    confounders = an_x & an_y_avoiding_x
    confounded = g.descendants_mask(confounders)

    labels: dict[str, PartitionLabel] = {}
    for v in g.nodes:
        if v in (x, y):
            continue
        i = g.index[v]
        b = 1 << i
        sep_x = _dsep_masks(g, i, ix, 0)
        sep_y = _dsep_masks(g, i, iy, 0)
        if sep_x and sep_y:
            lab = PartitionLabel.Z8
        elif de_y & b:
            lab = PartitionLabel.Z6
        elif de_x & b and _dsep_masks(g, i, iy, bx):
            lab = PartitionLabel.Z7
        elif not sep_x and _dsep_masks(cut, i, iy, 0):
            lab = PartitionLabel.Z5
        elif sep_x:
            lab = PartitionLabel.Z4
        elif de_x & b and mediated & b:
            lab = PartitionLabel.Z3
        elif not de_x & b and confounded & b:
            lab = PartitionLabel.Z1
        else:
            lab = PartitionLabel.Z2_NOT_DE_Y
        labels[v] = lab
    return labels


def oracle_a_de(g: Dag, x: str | None = None, y: str | None = None) -> set[str]:
    """The true adjustment set: every parent of ``y`` except ``x``."""
    x, y = _require_xy(g, x, y)
    labels = oracle_partition(g, x, y)
    keep = {PartitionLabel.Z1, PartitionLabel.Z3, PartitionLabel.Z4}
    a_de = {v for v in g.parents(y) if v != x and labels[v] in keep}
    return a_de


@dataclass(frozen=True)
class SfmProjection:
    confounders: frozenset[str]
    mediators: frozenset[str]


def sfm_project(g: Dag, x: str | None = None, y: str | None = None) -> SfmProjection:
    labels = oracle_partition(g, x, y)
    return SfmProjection(
        frozenset(v for v, lab in labels.items() if lab is PartitionLabel.Z1),
        frozenset(v for v, lab in labels.items() if lab is PartitionLabel.Z3),
    )


# ---------------------------------------------------------------------------
# random graphs
# ---------------------------------------------------------------------------


def random_er_dag(n_nodes: int, edge_prob: float, seed: int, max_attempts: int = 100) -> Dag:
    """Erdős–Rényi DAG with a designated (X, Y) pair where Y has no descendants.

    Edges follow a random topological permutation. Y is drawn uniformly, its
    descendants are deleted, then X is drawn uniformly from what remains.
    """
    if n_nodes < 2:
        raise GraphError("need at least two nodes")
    if not 0 <= edge_prob <= 1:
        raise GraphError("edge_prob must lie in [0, 1]")
    names = [f"V{i}" for i in range(n_nodes)]
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt] if attempt else seed)
        perm = rng.permutation(n_nodes)
        upper = np.triu(rng.random((n_nodes, n_nodes)) < edge_prob, k=1)
        src, dst = np.nonzero(upper)
        edges = [(names[perm[i]], names[perm[j]]) for i, j in zip(src, dst)]
        g = Dag(names, edges)
        y = names[rng.integers(n_nodes)]
        keep = [v for v in names if v not in g.descendants(y)]
        candidates = [v for v in keep if v != y]
        if not candidates:
            continue
        x = candidates[rng.integers(len(candidates))]
        return g.subgraph(keep).with_designation(x, y)
    raise GraphError(f"no valid (X, Y) pair after {max_attempts} attempts")
