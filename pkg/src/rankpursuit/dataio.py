"""Rating-matrix loaders and per-user ranking task construction.

Two on-disk formats are supported:

* Jester CSV: one row per user, the first field is the (untrusted) number of
  rated jokes followed by one field per joke; ``99`` marks a missing rating.
* MovieLens: lines ``UserID::MovieID::Rating::Timestamp``.

A task for one test user contains one data point per item that user rated.
The features of an item are the ratings given to it by a set of reference
users (missing entries imputed with that reference user's median rating),
the score is the test user's own rating.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import ScoredDataset, UnscoredDataset

JESTER_MISSING = 99.0
JESTER_RANGE = (-10.0, 10.0)
MOVIELENS_RANGE = (1, 5)

GROUPS = {"20-40": (20, 40), "40-60": (40, 60), "60-80": (60, 80)}


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RatingsMatrix:
    """Sparse ratings stored row-compressed by user.

    ``user_ids[u]`` and ``item_ids[j]`` are the original identifiers of the
    dense indices u and j.
    """

    n_users: int
    n_items: int
    indptr: np.ndarray
    items: np.ndarray
    values: np.ndarray
    user_ids: np.ndarray = field(default=None)
    item_ids: np.ndarray = field(default=None)
    value_range: tuple = JESTER_RANGE

    def __post_init__(self):
        if self.user_ids is None:
            object.__setattr__(self, "user_ids", np.arange(self.n_users))
        if self.item_ids is None:
            object.__setattr__(self, "item_ids", np.arange(self.n_items))

    @classmethod
    def from_triples(cls, users, items, values, n_users=None, n_items=None, user_ids=None, item_ids=None,
                     value_range=JESTER_RANGE) -> "RatingsMatrix":
        users = np.asarray(users, dtype=np.intp)
        items = np.asarray(items, dtype=np.intp)
        values = np.asarray(values, dtype=float)
        n_users = int(users.max()) + 1 if n_users is None else n_users
        n_items = int(items.max()) + 1 if n_items is None else n_items
        order = np.lexsort((items, users))
        users, items, values = users[order], items[order], values[order]
        if users.size > 1:
            dup = (np.diff(users) == 0) & (np.diff(items) == 0)
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise DataFormatError(f"duplicate rating for user {users[k]}, item {items[k]}")
        lo, hi = value_range
        if values.size and (values.min() < lo or values.max() > hi):
            raise DataFormatError(f"rating outside [{lo}, {hi}]")
        indptr = np.zeros(n_users + 1, dtype=np.intp)
        np.add.at(indptr, users + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(n_users, n_items, indptr, items, values, user_ids, item_ids, value_range)

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_ratings(self) -> int:
        return int(self.values.size)

    def user_ratings(self, u: int):
        sl = slice(self.indptr[u], self.indptr[u + 1])
        return self.items[sl], self.values[sl]

    def to_dense(self, missing=np.nan) -> np.ndarray:
        D = np.full((self.n_users, self.n_items), missing, dtype=float)
        users = np.repeat(np.arange(self.n_users), self.counts)
        D[users, self.items] = self.values
        return D

    def triples(self):
        users = np.repeat(np.arange(self.n_users), self.counts)
        return users, self.items.copy(), self.values.copy()


def load_jester_csv(path, n_items: Optional[int] = None) -> RatingsMatrix:
    """Load a Jester ratings table.

    The field count of the first row fixes the number of jokes unless
    ``n_items`` is given; every row must then have ``n_items + 1`` fields.
    """
    users, items, values = [], [], []
    n_rows = 0
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if n_items is None:
                n_items = len(row) - 1
            if len(row) != n_items + 1:
                raise DataFormatError(f"line {lineno}: expected {n_items + 1} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from None
            for j, v in enumerate(vals):
                if abs(v - JESTER_MISSING) <= 1e-9:
                    continue
                if not JESTER_RANGE[0] <= v <= JESTER_RANGE[1]:
                    raise DataFormatError(f"line {lineno}: rating {v} outside [-10, 10]")
                users.append(n_rows)
                items.append(j)
                values.append(v)
            n_rows += 1
    if n_rows == 0:
        raise DataFormatError(f"{path}: no rows")
    return RatingsMatrix.from_triples(users, items, values, n_rows, n_items, value_range=JESTER_RANGE)


def write_jester_csv(ratings: RatingsMatrix, path) -> None:
    D = ratings.to_dense(missing=JESTER_MISSING)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for u in range(ratings.n_users):
            w.writerow([int(ratings.counts[u])] + [repr(float(v)) if v != JESTER_MISSING else "99" for v in D[u]])


def load_movielens(path) -> RatingsMatrix:
    raw_users, raw_items, values = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise DataFormatError(f"line {lineno}: expected 4 '::'-separated fields, got {len(parts)}")
            try:
                u, i, r = int(parts[0]), int(parts[1]), int(parts[2])
                int(parts[3])
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from None
            if not MOVIELENS_RANGE[0] <= r <= MOVIELENS_RANGE[1]:
                raise DataFormatError(f"line {lineno}: rating {r} outside 1-5")
            raw_users.append(u)
            raw_items.append(i)
            values.append(r)
    if not values:
        raise DataFormatError(f"{path}: no ratings")
    user_ids, users = np.unique(raw_users, return_inverse=True)
    item_ids, items = np.unique(raw_items, return_inverse=True)
    try:
        return RatingsMatrix.from_triples(users, items, values, user_ids.size, item_ids.size,
                                          user_ids, item_ids, value_range=MOVIELENS_RANGE)
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_movielens(ratings: RatingsMatrix, path, timestamp: int = 0) -> None:
    users, items, values = ratings.triples()
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, v in zip(users, items, values):
            fh.write(f"{ratings.user_ids[u]}::{ratings.item_ids[i]}::{int(v)}::{timestamp}\n")


def user_group(count: int) -> Optional[str]:
    """Activity group of a user; boundary counts go to the lower group."""
    for label, (lo, hi) in GROUPS.items():
        if lo <= count <= hi:
            return label
    return None


@dataclass(frozen=True)
class TaskSpec:
    group_label: str = "20-40"
    n_reference: int = 100
    n_test_users: int = 30
    test_user_rating_range: tuple = (50, 300)
    rng_seed: int = 0
    repeats: int = 3

    def __post_init__(self):
        if self.group_label not in GROUPS:
            raise ValueError(f"unknown group {self.group_label!r}; expected one of {list(GROUPS)}")
        lo, hi = self.test_user_rating_range
        if not 2 <= lo <= hi:
            raise ValueError(f"invalid test-user rating range {self.test_user_rating_range}")
        if self.n_reference < 1 or self.n_test_users < 1 or self.repeats < 1:
            raise ValueError("n_reference, n_test_users and repeats must be positive")


def group_members(ratings: RatingsMatrix, label: str) -> np.ndarray:
    counts = ratings.counts
    return np.array([u for u in range(ratings.n_users) if user_group(int(counts[u])) == label], dtype=int)


def eligible_test_users(ratings: RatingsMatrix, spec: TaskSpec) -> np.ndarray:
    lo, hi = spec.test_user_rating_range
    c = ratings.counts
    return np.flatnonzero((c >= lo) & (c <= hi))


def median_imputed(ratings: RatingsMatrix, users: Sequence[int], items: Sequence[int]) -> np.ndarray:
    """Ratings of ``users`` (columns) on ``items`` (rows), missing entries set to each user's median."""
    items = np.asarray(items, dtype=int)
    out = np.empty((items.size, len(users)))
    pos = {int(j): r for r, j in enumerate(items)}
    for c, u in enumerate(users):
        its, vals = ratings.user_ratings(int(u))
        if vals.size == 0:
            raise DataFormatError(f"reference user {u} has no ratings")
        out[:, c] = np.median(vals)
        for j, v in zip(its, vals):
            r = pos.get(int(j))
            if r is not None:
                out[r, c] = v
    return out


def build_user_task(ratings: RatingsMatrix, spec: TaskSpec, test_user: int, rng,
                    reference_pool: Optional[np.ndarray] = None):
    """Train/test ranking datasets of one test user.

    Returns ``(train, test)``; both share the single group id ``test_user``.
    Items are split uniformly at random, the train half getting the extra item
    of an odd count.
    """
    rng = np.random.default_rng(rng)
    items, scores = ratings.user_ratings(int(test_user))
    if items.size < 2:
        raise DataFormatError(f"test user {test_user} has fewer than 2 ratings")
    pool = group_members(ratings, spec.group_label) if reference_pool is None else np.asarray(reference_pool)
    pool = pool[pool != test_user]
    if pool.size < spec.n_reference:
        raise DataFormatError(
            f"group {spec.group_label} has {pool.size} candidate reference users, need {spec.n_reference}"
        )
    refs = np.sort(rng.choice(pool, size=spec.n_reference, replace=False))
    X = median_imputed(ratings, refs, items)
    perm = rng.permutation(items.size)
    n_train = math.ceil(items.size / 2)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    gid = int(test_user)
    train = ScoredDataset(X[tr], scores[tr], [gid] * tr.size, items[tr])
    test = ScoredDataset(X[te], scores[te], [gid] * te.size, items[te], allow_trivial=True)
    return train, test


def split_for_semisupervised(train: ScoredDataset, fraction: float, rng):
    """Random partition into a scored part (about ``fraction`` of the points) and an unscored part."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(rng)
    n = len(train)
    perm = rng.permutation(n)
    k = int(round(fraction * n))
    sc, un = np.sort(perm[:k]), np.sort(perm[k:])
    try:
        scored = train.subset(sc)
    except ValueError as exc:
        raise ValueError(f"scored part has no relevant pairs: {exc}") from None
    return scored, train.unscored().subset(un)


def synthetic_ratings(n_users: int = 2000, n_items: int = 100, n_factors: int = 4, user_bias_std: float = 3.0,
                      item_bias_std: float = 1.5, factor_std: float = 2.5, noise: float = 3.5,
                      seed: int = 0) -> RatingsMatrix:
    """Jester-like ratings in [-10, 10] from a biased low-rank model plus noise.

    Per-user rating counts are spread over the three activity groups and the
    50-100 range used for test users.
    """
    rng = np.random.default_rng(seed)
    item_bias = rng.normal(0.5, item_bias_std, n_items)
    user_bias = rng.normal(0.0, user_bias_std, n_users)
    V = rng.normal(0.0, 1.0, (n_items, n_factors))
    U = rng.normal(0.0, factor_std / math.sqrt(n_factors), (n_users, n_factors))
    full = item_bias[None, :] + user_bias[:, None] + U @ V.T
    full += rng.normal(0.0, noise, full.shape)
    full = np.clip(np.round(full, 2), -10.0, 10.0)
    # counts: mostly 20-80 for reference pools, a quarter in the test range
    lo_hi = [(20, 40), (41, 60), (61, 80), (50, min(100, n_items))]
    which = rng.integers(0, 4, n_users)
    users, items, values = [], [], []
    for u in range(n_users):
        lo, hi = lo_hi[which[u]]
        c = int(rng.integers(lo, min(hi, n_items) + 1))
        js = np.sort(rng.choice(n_items, size=c, replace=False))
        users.extend([u] * c)
        items.extend(js.tolist())
        values.extend(full[u, js].tolist())
    return RatingsMatrix.from_triples(users, items, values, n_users, n_items)
