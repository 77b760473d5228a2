"""Shared test helpers: random grouped instances and dense reference operators.

The dense operators here are built directly from group labels with explicit
loops, independently of the blockwise code under test.
"""

import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from rankpursuit import ScoredDataset


def dense_W(groups, scores=None, exclude_ties=False):
    n = len(groups)
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and groups[i] == groups[j]:
                if exclude_ties and scores[i] == scores[j]:
                    continue
                W[i, j] = 1.0
    return W


def dense_L(groups, scores=None, exclude_ties=False):
    W = dense_W(groups, scores, exclude_ties)
    return np.diag(W.sum(axis=1)) - W


def dense_Lw(groups, beta):
    n = len(groups)
    return beta * np.eye(n) + (1.0 - beta) * dense_L(groups)


def random_groups(rng, n, max_groups=4, min_rank=1):
    """Group labels of n points whose Laplacian has rank at least ``min_rank``.

    The rank is n minus the number of groups.  Rank one makes every candidate
    column fit the residual exactly, so greedy comparisons become ties.
    """
    k = int(rng.integers(1, max_groups + 1))
    while True:
        g = rng.integers(0, k, n)
        if n - np.unique(g).size >= min(min_rank, n - 1):
            return g
        k = max(1, k - 1)


def random_scored(rng, n=12, d=3, max_groups=3, integer_scores=False):
    X = rng.normal(size=(n, d))
    s = rng.integers(0, 5, n).astype(float) if integer_scores else rng.normal(size=n)
    return ScoredDataset(X, s, random_groups(rng, n, max_groups))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# hypothesis strategy: (group labels, vector) with at least one pair
@st.composite
def grouped_vectors(draw, max_n=30, n_vectors=1):
    n = draw(st.integers(2, max_n))
    groups = draw(st.lists(st.integers(0, 4), min_size=n, max_size=n))
    vals = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
    vecs = [np.array(draw(st.lists(vals, min_size=n, max_size=n))) for _ in range(n_vectors)]
    return (np.array(groups), *vecs)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.REPORT):
        terminalreporter.write_line(mod.REPORT[key])
