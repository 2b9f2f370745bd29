import itertools

import numpy as np
import pytest

from ld3.graph import Dag

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion, printed at session end."""

    def record(number: int, passed: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def unlabeled_dags(n: int) -> list[Dag]:
    """One representative per isomorphism class of DAGs on ``n`` nodes.

    Every DAG is isomorphic to one whose edges all go from lower to higher
    index, so enumerate those and keep the minimum adjacency code over all
    node permutations.
    """
    pairs = [(i, j) for j in range(n) for i in range(j)]
    m = len(pairs)
    codes = np.arange(1 << m, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(m)) & 1).astype(np.int64)
    best = np.full(len(codes), np.iinfo(np.int64).max)
    for perm in itertools.permutations(range(n)):
        weights = np.array([1 << (perm[i] * n + perm[j]) for i, j in pairs], dtype=np.int64)
        best = np.minimum(best, bits @ weights)
    _, first = np.unique(best, return_index=True)
    names = [f"V{i}" for i in range(n)]
    out = []
    for idx in first:
        edges = [(names[i], names[j]) for k, (i, j) in enumerate(pairs) if bits[idx, k]]
        out.append(Dag(names, edges))
    return out


def random_dag(rng: np.random.Generator, n: int, p: float) -> Dag:
    perm = rng.permutation(n)
    names = [f"V{i}" for i in range(n)]
    edges = [
        (names[perm[i]], names[perm[j]]) for i in range(n) for j in range(i + 1, n) if rng.random() < p
    ]
    return Dag(names, edges)
