"""Datasets, preference graphs and the Laplacian operators built on them.

Two points are *relevant* to each other when they share a group id (the same
query or test user).  The preference graph connects every relevant pair, so
each group is a complete graph and its Laplacian can be applied blockwise in
O(n) without ever materializing an n x n matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class DataPoint:
    """One instance-label tuple with its feature vector and optional score."""

    group_id: Hashable
    item_id: Hashable
    features: np.ndarray
    score: Optional[float] = None


class _Dataset:
    """Array-backed collection of points sharing one feature dimensionality."""

    features: np.ndarray
    group_ids: np.ndarray
    item_ids: np.ndarray

    def _init_arrays(self, features, group_ids, item_ids):
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D array (points x dims)")
        n = X.shape[0]
        groups = np.asarray(group_ids, dtype=object).reshape(-1)
        if groups.size != n:
            raise ValueError(f"got {groups.size} group ids for {n} points")
        if item_ids is None:
            items = np.arange(n).astype(object)
        else:
            items = np.asarray(item_ids, dtype=object).reshape(-1)
            if items.size != n:
                raise ValueError(f"got {items.size} item ids for {n} points")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "group_ids", groups)
        object.__setattr__(self, "item_ids", items)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def _take(self, idx):
        idx = np.asarray(idx, dtype=int)
        return self.features[idx], self.group_ids[idx], self.item_ids[idx]


class ScoredDataset(_Dataset):
    """Training points with real-valued scores.

    Parameters
    ----------
    features : array, shape (n, d)
    scores : array, shape (n,)
    group_ids : sequence of length n
        Points with equal group ids form relevant pairs.
    item_ids : sequence of length n, optional
    """

    def __init__(self, features, scores, group_ids, item_ids=None, *, allow_trivial=False):
        self._init_arrays(features, group_ids, item_ids)
        s = np.asarray(scores, dtype=float).reshape(-1)
        if s.size != len(self):
            raise ValueError(f"got {s.size} scores for {len(self)} points")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        s.setflags(write=False)
        self.scores = s
        if not allow_trivial:
            if len(self) < 2:
                raise ValueError("a scored dataset needs at least 2 points")
            _, counts = np.unique(_group_codes(self.group_ids), return_counts=True)
            if counts.max() < 2:
                raise ValueError("no group contains two points; there are no relevant pairs")

    @classmethod
    def from_points(cls, points: Iterable[DataPoint], **kwargs) -> "ScoredDataset":
        points = list(points)
        if any(p.score is None for p in points):
            raise ValueError("every point of a scored dataset needs a score")
        return cls(
            np.array([np.asarray(p.features, dtype=float) for p in points]),
            [p.score for p in points],
            [p.group_id for p in points],
            [p.item_id for p in points],
            **kwargs,
        )

    @property
    def points(self) -> list[DataPoint]:
        return [
            DataPoint(g, it, x, float(s))
            for g, it, x, s in zip(self.group_ids, self.item_ids, self.features, self.scores)
        ]

    def subset(self, idx, *, allow_trivial=False) -> "ScoredDataset":
        X, g, it = self._take(idx)
        return ScoredDataset(X, self.scores[np.asarray(idx, dtype=int)], g, it,
                             allow_trivial=allow_trivial)

    def unscored(self) -> "UnscoredDataset":
        return UnscoredDataset(self.features, self.group_ids, self.item_ids)

    def __repr__(self):
        return f"ScoredDataset(n={len(self)}, d={self.n_features})"


class UnscoredDataset(_Dataset):
    """Points without scoring information (possibly empty)."""

    def __init__(self, features, group_ids, item_ids=None, n_features: Optional[int] = None):
        X = np.asarray(features, dtype=float)
        if X.size == 0:
            X = np.zeros((0, n_features or (X.shape[1] if X.ndim == 2 else 0)))
        self._init_arrays(X, group_ids, item_ids)

    @classmethod
    def from_points(cls, points: Iterable[DataPoint], n_features: Optional[int] = None):
        points = list(points)
        return cls(
            np.array([np.asarray(p.features, dtype=float) for p in points]),
            [p.group_id for p in points],
            [p.item_id for p in points],
            n_features=n_features,
        )

    @property
    def points(self) -> list[DataPoint]:
        return [DataPoint(g, it, x) for g, it, x in zip(self.group_ids, self.item_ids, self.features)]

    def subset(self, idx) -> "UnscoredDataset":
        X, g, it = self._take(idx)
        return UnscoredDataset(X, g, it, n_features=self.n_features)

    def __repr__(self):
        return f"UnscoredDataset(l={len(self)}, d={self.n_features})"


def _group_codes(labels: Sequence[Any]) -> np.ndarray:
    """Map arbitrary hashable labels to dense integer codes in order of appearance."""
    codes = np.empty(len(labels), dtype=np.intp)
    seen: dict = {}
    for i, lab in enumerate(labels):
        codes[i] = seen.setdefault(lab, len(seen))
    return codes


def as_features(points) -> np.ndarray:
    """Feature matrix of a dataset, a list of DataPoints or a raw array."""
    if isinstance(points, _Dataset):
        return points.features
    if isinstance(points, (list, tuple)) and points and isinstance(points[0], DataPoint):
        return np.array([np.asarray(p.features, dtype=float) for p in points])
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    return X


@dataclass(frozen=True)
class PreferenceGraph:
    """Binary relevance graph over n points, stored as group codes.

    ``W[i, j] = 1`` iff points i and j share a group and ``i != j``.  When
    ``tie_codes`` is given, pairs that additionally share a tie code (equal
    true scores) are removed from the graph.
    """

    codes: np.ndarray
    tie_codes: Optional[np.ndarray] = None
    n_groups: int = field(init=False)
    group_sizes: np.ndarray = field(init=False, repr=False)
    tie_sizes: Optional[np.ndarray] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.intp)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        sizes = np.bincount(codes) if codes.size else np.zeros(0, dtype=np.intp)
        object.__setattr__(self, "n_groups", sizes.size)
        object.__setattr__(self, "group_sizes", sizes)
        if self.tie_codes is not None:
            tc = np.asarray(self.tie_codes, dtype=np.intp)
            tc.setflags(write=False)
            object.__setattr__(self, "tie_codes", tc)
            object.__setattr__(self, "tie_sizes", np.bincount(tc))

    @property
    def n(self) -> int:
        return self.codes.size

    @property
    def degree(self) -> np.ndarray:
        deg = self.group_sizes[self.codes] - 1
        if self.tie_codes is not None:
            deg = deg - (self.tie_sizes[self.tie_codes] - 1)
        return deg

    @property
    def n_ordered_pairs(self) -> int:
        """Number of ordered relevant pairs, i.e. the sum of all entries of W."""
        return int(self.degree.sum())

    def adjacency(self) -> np.ndarray:
        """Dense W.  Only meant for small problems and test oracles."""
        W = (self.codes[:, None] == self.codes[None, :]).astype(float)
        if self.tie_codes is not None:
            W[self.tie_codes[:, None] == self.tie_codes[None, :]] = 0.0
        np.fill_diagonal(W, 0.0)
        return W

    def dense_laplacian(self) -> np.ndarray:
        W = self.adjacency()
        return np.diag(W.sum(axis=1)) - W

    def apply(self, v) -> np.ndarray:
        return laplacian_apply(self, v)


def build_preference_graph(dataset, *, exclude_ties: bool = False) -> PreferenceGraph:
    """Preference graph of a scored or unscored dataset.

    With ``exclude_ties=True`` (scored datasets only) relevant pairs whose true
    scores are equal are dropped from W.
    """
    if len(dataset) == 0:
        return PreferenceGraph(np.zeros(0, dtype=np.intp))
    codes = _group_codes(dataset.group_ids)
    if not exclude_ties:
        return PreferenceGraph(codes)
    scores = getattr(dataset, "scores", None)
    if scores is None:
        raise ValueError("exclude_ties requires a scored dataset")
    tie_codes = _group_codes(list(zip(codes.tolist(), scores.tolist())))
    return PreferenceGraph(codes, tie_codes)


def _block_apply(codes: np.ndarray, sizes: np.ndarray, v: np.ndarray) -> np.ndarray:
    # L v for disjoint complete blocks: (L v)_i = m_g v_i - sum_{j in g} v_j
    if v.ndim == 1:
        sums = np.bincount(codes, weights=v, minlength=sizes.size)
        return sizes[codes] * v - sums[codes]
    sums = np.zeros((sizes.size,) + v.shape[1:])
    np.add.at(sums, codes, v)
    m = sizes[codes].reshape((-1,) + (1,) * (v.ndim - 1))
    return m * v - sums[codes]


def laplacian_apply(graph: PreferenceGraph, v) -> np.ndarray:
    """Compute ``L @ v`` blockwise in O(n).

    ``v`` may be a vector of length n or an array whose first axis has length
    n, in which case every column is transformed.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[:1] != (graph.n,):
        raise ValueError(f"length mismatch: graph has {graph.n} points, got shape {v.shape}")
    if graph.n == 0:
        return v.copy()
    out = _block_apply(graph.codes, graph.group_sizes, v)
    if graph.tie_codes is not None:
        out = out - _block_apply(graph.tie_codes, graph.tie_sizes, v)
    return out


@dataclass(frozen=True)
class WeightedLaplacian:
    """The operator ``beta * I + (1 - beta) * L``.

    ``beta = 0`` is the pure pairwise ranking loss, ``beta = 1`` plain squared
    error.
    """

    base: PreferenceGraph
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    @property
    def n(self) -> int:
        return self.base.n

    def apply(self, v) -> np.ndarray:
        return weighted_laplacian_apply(self, v)

    def dense(self) -> np.ndarray:
        return self.beta * np.eye(self.n) + (1.0 - self.beta) * self.base.dense_laplacian()


def weighted_laplacian_apply(wl: WeightedLaplacian, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if wl.beta == 1.0:
        if v.shape[:1] != (wl.n,):
            raise ValueError(f"length mismatch: graph has {wl.n} points, got shape {v.shape}")
        return v.copy()
    Lv = laplacian_apply(wl.base, v)
    if wl.beta == 0.0:
        return Lv
    return wl.beta * v + (1.0 - wl.beta) * Lv
