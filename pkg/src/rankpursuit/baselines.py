"""Dense kernel baselines: RLS, RankRLS and subset-of-regressors sparse RankRLS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, lstsq, lu_factor, lu_solve

from .data import ScoredDataset, WeightedLaplacian, as_features, build_preference_graph
from .kernels import KernelSpec, kernel_matrix


@dataclass(frozen=True)
class BaselineConfig:
    lam: float = 1.0
    subset_size: Optional[int] = None
    rng_seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"regularization weight must be positive, got {self.lam}")
        if self.subset_size is not None and self.subset_size < 1:
            raise ValueError("subset_size must be positive")


@dataclass(frozen=True, eq=False)
class DenseExpansion:
    kernel: KernelSpec
    centers: np.ndarray
    coefficients: np.ndarray
    subset: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if np.asarray(self.centers).shape[0] != np.asarray(self.coefficients).size:
            raise ValueError("centers and coefficients must have equal length")

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    def predict(self, points) -> np.ndarray:
        X = as_features(points)
        if X.shape[1] != self.centers.shape[1]:
            raise ValueError(f"dimension mismatch: model expects {self.centers.shape[1]} features, got {X.shape[1]}")
        return kernel_matrix(self.kernel, X, self.centers) @ self.coefficients


def _solve_pairwise_rls(K, s, lap: WeightedLaplacian, lam):
    # stationarity of (s - Ka)' Lw (s - Ka) + lam a'Ka after cancelling one K
    A = lap.apply(K) + lam * np.eye(K.shape[0])
    try:
        return lu_solve(lu_factor(A, check_finite=True), lap.apply(s))
    except (LinAlgError, ValueError) as exc:
        raise LinAlgError(f"factorization failed: {exc}") from exc


def fit_weighted_rls(train: ScoredDataset, spec: KernelSpec, cfg: BaselineConfig, beta: float,
                     K=None) -> DenseExpansion:
    """Dense least squares under the weighted Laplacian ``beta I + (1 - beta) L``."""
    X = train.features
    if K is None:
        K = kernel_matrix(spec, X, X)
    lap = WeightedLaplacian(build_preference_graph(train), beta)
    a = _solve_pairwise_rls(K, np.asarray(train.scores, dtype=float), lap, cfg.lam)
    return DenseExpansion(spec, X, a)


def fit_rls(train: ScoredDataset, spec: KernelSpec, cfg: BaselineConfig, K=None) -> DenseExpansion:
    """Kernel ridge regression: ``(K + lam I) a = s``."""
    return fit_weighted_rls(train, spec, cfg, beta=1.0, K=K)


def fit_rankrls(train: ScoredDataset, spec: KernelSpec, cfg: BaselineConfig, K=None) -> DenseExpansion:
    """RankRLS: ``(L K + lam I) a = L s``."""
    return fit_weighted_rls(train, spec, cfg, beta=0.0, K=K)


def draw_subset(n: int, r: int, seed) -> np.ndarray:
    if not 1 <= r <= n:
        raise ValueError(f"subset size {r} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=r, replace=False))


def fit_sparse_rankrls(train: ScoredDataset, spec: KernelSpec, cfg: BaselineConfig,
                       subset=None, jitter: float = 0.0, K=None) -> DenseExpansion:
    """RankRLS restricted to ``r`` randomly chosen regressors.

    Solves ``(K_nR' L K_nR + lam K_RR) a_R = K_nR' L s`` where R is drawn
    uniformly without replacement from ``cfg.rng_seed`` unless ``subset`` is
    given.  ``K`` may pass the full n x n kernel matrix.
    """
    X = train.features
    n = X.shape[0]
    if subset is None:
        r = n if cfg.subset_size is None else cfg.subset_size
        R = draw_subset(n, r, cfg.rng_seed)
    else:
        R = np.asarray(subset, dtype=int)
    KnR = kernel_matrix(spec, X, X[R]) if K is None else np.asarray(K)[:, R]
    KRR = KnR[R]
    graph = build_preference_graph(train)
    # the normal equations square the condition number of K; solve the
    # equivalent stacked least-squares problem
    #   min || L^{1/2} (s - K_nR a) ||^2 + lam || C a ||^2,  C'C = K_RR
    w, V = np.linalg.eigh(0.5 * (KRR + KRR.T))
    C = np.sqrt(np.clip(w, 0.0, None))[:, None] * V.T
    rows = [_laplacian_sqrt_apply(graph, KnR), math.sqrt(cfg.lam) * C]
    rhs = [_laplacian_sqrt_apply(graph, np.asarray(train.scores, dtype=float)), np.zeros(len(R))]
    if jitter > 0:
        rows.append(math.sqrt(jitter) * np.eye(len(R)))
        rhs.append(np.zeros(len(R)))
    try:
        a = lstsq(np.vstack(rows), np.concatenate(rhs), check_finite=True)[0]
    except (LinAlgError, ValueError) as exc:
        raise LinAlgError(f"least-squares solve failed: {exc}") from exc
    return DenseExpansion(spec, X[R], a, R)


def _laplacian_sqrt_apply(graph, v):
    # per group L = m I - 11', whose square root is sqrt(m) times the centering projection
    v = np.asarray(v, dtype=float)
    sizes = graph.group_sizes[graph.codes].astype(float)
    sums = np.zeros((graph.n_groups,) + v.shape[1:])
    np.add.at(sums, graph.codes, v)
    shape = (-1,) + (1,) * (v.ndim - 1)
    return np.sqrt(sizes).reshape(shape) * (v - sums[graph.codes] / sizes.reshape(shape))


def rankrls_objective(model: DenseExpansion, train: ScoredDataset, lam: float) -> float:
    """``(s - f)' L (s - f) + lam ||f||_H^2`` of an expansion centered on training points."""
    lap = WeightedLaplacian(build_preference_graph(train), 0.0)
    e = np.asarray(train.scores, dtype=float) - model.predict(train)
    Kc = kernel_matrix(model.kernel, model.centers, model.centers)
    return float(e @ lap.apply(e) + lam * model.coefficients @ Kc @ model.coefficients)
