"""Semi-supervised ranking pursuit over several co-regularized views.

Each view v owns a sparse expansion f_v built from its own feature subset or
kernel.  A greedy step adds one basis function per view; the coefficients
solve a small M x M system that trades the ranking loss of every view on the
scored points against the disagreement of the views' increments on the
unscored points.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import PreferenceGraph, ScoredDataset, UnscoredDataset, as_features, build_preference_graph
from .kernels import Dictionary, KernelSpec, kernel_matrix
from .linalg import SingularSystemError, spd_solve
from .metrics import mean_squared_error, normalized_disagreement
from .pursuit import MIN_DENOMINATOR, TIE_RTOL, CandidatesExhausted, DegenerateCandidate, SparseExpansion, predict

logger = logging.getLogger(__name__)

# candidate evaluations allowed for the exhaustive per-view index scan
MAX_TUPLE_WORK = 10**7


@dataclass(frozen=True, eq=False)
class ViewSpec:
    """A feature subset (``None`` for all features) and the kernel used on it."""

    kernel: KernelSpec
    feature_slice: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.feature_slice is not None:
            sl = np.asarray(self.feature_slice, dtype=int).reshape(-1)
            if sl.size == 0:
                raise ValueError("a view needs at least one feature")
            object.__setattr__(self, "feature_slice", sl)

    def project(self, points) -> np.ndarray:
        X = as_features(points)
        return X if self.feature_slice is None else X[:, self.feature_slice]


def split_feature_views(n_features: int, kernel: KernelSpec, n_views: int = 2) -> list[ViewSpec]:
    """Views over disjoint, contiguous blocks of the features."""
    if not 1 <= n_views <= n_features:
        raise ValueError(f"cannot split {n_features} features into {n_views} views")
    return [ViewSpec(kernel, block) for block in np.array_split(np.arange(n_features), n_views)]


@dataclass(frozen=True)
class MultiViewFitOptions:
    nu: float = 1.0
    max_basis: int = 10
    shared_index: bool = True
    backfit_every_step: bool = False
    validation_set: Optional[ScoredDataset] = None
    validation_metric: str = "disagreement"
    patience: int = 3
    min_denominator: float = MIN_DENOMINATOR
    ridge_jitter: float = 0.0

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError(f"nu must be nonnegative, got {self.nu}")
        if self.max_basis < 0:
            raise ValueError("max_basis must be nonnegative")


@dataclass(frozen=True)
class MultiViewTrace:
    objective: list
    path: list
    validation: list = field(default_factory=list)
    best_step: Optional[int] = None
    exhausted: bool = False
    increment_disagreement: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class MultiViewModel:
    """Per-view expansions combined by averaging their predictions."""

    views: list
    nu: float = 0.0
    combination: str = "average"
    trace: Optional[MultiViewTrace] = field(default=None, repr=False)

    @property
    def n_views(self) -> int:
        return len(self.views)

    @property
    def specs(self) -> list[ViewSpec]:
        return [v for v, _ in self.views]

    @property
    def expansions(self) -> list[SparseExpansion]:
        return [m for _, m in self.views]

    @property
    def n_nonzero(self) -> int:
        return sum(m.n_nonzero for m in self.expansions)

    def predict(self, points) -> np.ndarray:
        return predict_average(self, points)

    def predict_views(self, points) -> np.ndarray:
        X = as_features(points)
        return np.array([predict(m, spec.project(X)) for spec, m in self.views])


def predict_average(model: MultiViewModel, points) -> np.ndarray:
    if model.combination != "average":
        raise ValueError(f"unsupported combination {model.combination!r}")
    X = as_features(points)
    if not model.views:
        return np.zeros(X.shape[0])
    return model.predict_views(X).mean(axis=0)


def _system(g, cross, nu, M):
    """Coefficient matrix; ``g`` has shape (..., M), ``cross`` shape (..., M, M)."""
    A = -2.0 * nu * cross
    idx = np.arange(M)
    A[..., idx, idx] = g + 2.0 * nu * (M - 1) * cross[..., idx, idx]
    return A


def _objective(a, rLr, rhs, g, cross, nu):
    """Value of the step objective for coefficients ``a`` (batched over leading axes)."""
    fit = np.sum(rLr - 2.0 * a * rhs + a * a * g, axis=-1)
    # sum over ordered (v, u) of (a_v kb_v - a_u kb_u)' Lb (a_v kb_v - a_u kb_u)
    M = a.shape[-1]
    diag = np.diagonal(cross, axis1=-2, axis2=-1)
    quad = np.einsum("...v,...vu,...u->...", a, cross, a)
    dis = 2.0 * M * np.sum(a * a * diag, axis=-1) - 2.0 * quad
    return fit + nu * dis, dis


def coefficient_system(kcols, kbars, residuals, L: PreferenceGraph, Lbar: PreferenceGraph, nu: float,
                       min_denominator: float = MIN_DENOMINATOR):
    """Jointly optimal per-view coefficients for one candidate tuple.

    Parameters
    ----------
    kcols : sequence of M vectors of length n
        Candidate basis column of each view on the scored points.
    kbars : sequence of M vectors of length l
        The same basis functions on the unscored points.
    residuals : sequence of M vectors of length n
    L, Lbar : preference graphs of the scored and unscored points

    Returns
    -------
    a : array of length M
    J : float
        Summed ranking loss of the updated residuals plus ``nu`` times the
        disagreement of the increments over all ordered view pairs.
    """
    K = np.column_stack([np.asarray(k, dtype=float) for k in kcols])
    R = np.column_stack([np.asarray(r, dtype=float) for r in residuals])
    Kb = np.column_stack([np.asarray(k, dtype=float) for k in kbars]) if len(kbars) else np.zeros((0, K.shape[1]))
    if Kb.shape[0] == 0:
        Kb = np.zeros((Lbar.n, K.shape[1]))
    M = K.shape[1]
    if R.shape != K.shape or Kb.shape != (Lbar.n, M):
        raise ValueError("inconsistent column lengths")
    LK = L.apply(K)
    LR = L.apply(R)
    g = np.einsum("iv,iv->v", K, LK)
    rhs = np.einsum("iv,iv->v", K, LR)
    rLr = np.einsum("iv,iv->v", R, LR)
    cross = Kb.T @ Lbar.apply(Kb) if Lbar.n else np.zeros((M, M))
    A = _system(g, cross, nu, M)
    A = 0.5 * (A + A.T)
    lam_min = np.linalg.eigvalsh(A).min()
    if lam_min < min_denominator:
        raise DegenerateCandidate(f"coefficient system is singular (smallest eigenvalue {lam_min:.3g})")
    a = np.linalg.solve(A, rhs)
    E = R - K * a
    Eb = Kb * a
    J = float(np.einsum("iv,iv->", E, L.apply(E)))
    if Lbar.n:
        LEb = Lbar.apply(Eb)
        G = Eb.T @ LEb
        d = np.diag(G)
        J += nu * float(np.sum(d[:, None] + d[None, :] - 2.0 * G))
    return a, J


class _ViewScan:
    """Per-view column quantities that stay fixed during a fit."""

    def __init__(self, Ks, Kbs, graph, graph_bar, nu):
        self.Ks = Ks
        self.M = len(Ks)
        self.graph = graph
        self.nu = nu
        self.LKs = [graph.apply(K) for K in Ks]
        self.g = [np.einsum("ij,ij->j", K, LK) for K, LK in zip(Ks, self.LKs)]
        LKbs = [graph_bar.apply(Kb) for Kb in Kbs] if graph_bar.n else [np.zeros_like(Kb) for Kb in Kbs]
        self.Kbs, self.LKbs = Kbs, LKbs

    def shared_cross(self):
        M, N = self.M, self.Ks[0].shape[1]
        C = np.zeros((N, M, M))
        for v in range(M):
            for u in range(v, M):
                c = np.einsum("ij,ij->j", self.Kbs[v], self.LKbs[u])
                C[:, v, u] = C[:, u, v] = c
        return C

    def full_cross(self, v, u):
        return self.Kbs[v].T @ self.LKbs[u]


def _admissible(A, min_denominator):
    if A.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    return np.linalg.eigvalsh(A)[:, 0] >= min_denominator


def _best_shared(scan: _ViewScan, cross, residuals, selected, min_denominator):
    M = scan.M
    N = scan.Ks[0].shape[1]
    rhs = np.stack([K.T @ scan.graph.apply(r) for K, r in zip(scan.Ks, residuals)], axis=1)  # (N, M)
    rLr = np.array([r @ scan.graph.apply(r) for r in residuals])
    g = np.stack(scan.g, axis=1)
    ok = np.ones(N, dtype=bool)
    if selected:
        ok[np.asarray(selected, dtype=int)] = False
    A = _system(g, cross.copy(), scan.nu, M)
    ok &= _admissible(A, min_denominator) if N else ok
    if not ok.any():
        raise CandidatesExhausted("no admissible shared index left")
    a = np.zeros((N, M))
    a[ok] = np.linalg.solve(A[ok], rhs[ok][..., None])[..., 0]
    J, dis = _objective(a, rLr, rhs, g, cross, scan.nu)
    J = np.where(ok, J, np.inf)
    tol = TIE_RTOL * max(1.0, float(rLr.sum()))
    gamma = int(np.flatnonzero(J <= J[ok].min() + tol)[0])
    return (gamma,) * M, a[gamma], float(J[gamma]), float(dis[gamma])


def _best_tuple(scan: _ViewScan, residuals, selected_per_view, min_denominator):
    M = scan.M
    Ns = [K.shape[1] for K in scan.Ks]
    n = scan.Ks[0].shape[0]
    if n * int(np.prod(Ns)) > MAX_TUPLE_WORK:
        raise ValueError(
            f"exhaustive index-tuple scan over {Ns} candidates is too large; use shared_index=True"
        )
    grids = np.indices(Ns).reshape(M, -1).T  # (T, M), C order = lexicographic
    T = grids.shape[0]
    rhs = np.stack([scan.Ks[v].T @ scan.graph.apply(residuals[v]) for v in range(M)], axis=0)
    rLr = np.array([r @ scan.graph.apply(r) for r in residuals])
    g = np.stack([scan.g[v][grids[:, v]] for v in range(M)], axis=1)
    b = np.stack([rhs[v][grids[:, v]] for v in range(M)], axis=1)
    cross = np.zeros((T, M, M))
    for v in range(M):
        for u in range(v, M):
            C = scan.full_cross(v, u)
            cross[:, v, u] = C[grids[:, v], grids[:, u]]
            cross[:, u, v] = cross[:, v, u]
    ok = np.ones(T, dtype=bool)
    for v in range(M):
        if selected_per_view[v]:
            ok &= ~np.isin(grids[:, v], selected_per_view[v])
    A = _system(g, cross.copy(), scan.nu, M)
    ok &= _admissible(A, min_denominator)
    if not ok.any():
        raise CandidatesExhausted("no admissible index tuple left")
    a = np.zeros((T, M))
    a[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    J, dis = _objective(a, rLr, b, g, cross, scan.nu)
    J = np.where(ok, J, np.inf)
    tol = TIE_RTOL * max(1.0, float(rLr.sum()))
    t = int(np.flatnonzero(J <= J[ok].min() + tol)[0])
    return tuple(int(x) for x in grids[t]), a[t], float(J[t]), float(dis[t])


def _joint_backfit(Ks, Kbs, s, graph, graph_bar, nu, jitter):
    """Re-solve all per-view coefficients against the full co-regularized loss."""
    M = len(Ks)
    sizes = [K.shape[1] for K in Ks]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    A = np.zeros((offs[-1], offs[-1]))
    b = np.zeros(offs[-1])
    LKbs = [graph_bar.apply(Kb) for Kb in Kbs] if graph_bar.n else [np.zeros_like(Kb) for Kb in Kbs]
    for v in range(M):
        sv = slice(offs[v], offs[v + 1])
        LK = graph.apply(Ks[v])
        A[sv, sv] += Ks[v].T @ LK + 2.0 * nu * (M - 1) * (Kbs[v].T @ LKbs[v])
        b[sv] = LK.T @ s
        for u in range(M):
            if u != v:
                A[sv, offs[u]:offs[u + 1]] -= 2.0 * nu * (Kbs[v].T @ LKbs[u])
    A = 0.5 * (A + A.T)
    a, _ = spd_solve(A, b, jitter)
    return [a[offs[v]:offs[v + 1]] for v in range(M)]


def _full_objective(Ks, Kbs, coefs, s, graph, graph_bar, nu):
    fit = sum(float((s - K @ c) @ graph.apply(s - K @ c)) for K, c in zip(Ks, coefs))
    if not graph_bar.n:
        return fit
    F = np.column_stack([Kb @ c for Kb, c in zip(Kbs, coefs)])
    G = F.T @ graph_bar.apply(F)
    d = np.diag(G)
    return fit + nu * float(np.sum(d[:, None] + d[None, :] - 2.0 * G))


def fit_semisupervised(train: ScoredDataset, unscored: Optional[UnscoredDataset], views: Sequence[ViewSpec],
                       opts: MultiViewFitOptions = MultiViewFitOptions(), columns=None) -> MultiViewModel:
    """Greedy co-regularized fit of one sparse expansion per view.

    The dictionary of every view is centered on the scored points (restricted
    to the view's features) and evaluated on both scored and unscored points.
    ``columns`` may pass precomputed per-view ``(scored, unscored)`` kernel
    values.
    """
    views = list(views)
    M = len(views)
    if M < 1:
        raise ValueError("at least one view is required")
    if unscored is None:
        unscored = UnscoredDataset(np.zeros((0, train.n_features)), [], n_features=train.n_features)
    graph = build_preference_graph(train)
    graph_bar = build_preference_graph(unscored)
    s = np.asarray(train.scores, dtype=float)

    dicts = [Dictionary(v.kernel, v.project(train)) for v in views]
    if columns is not None:
        Ks, Kbs = (list(c) for c in columns)
    else:
        Ks = [d.columns(v.project(train)) for d, v in zip(dicts, views)]
        Kbs = [kernel_matrix(d.kernel, v.project(unscored), d.centers) if len(unscored)
               else np.zeros((0, len(d))) for d, v in zip(dicts, views)]
    scan = _ViewScan(Ks, Kbs, graph, graph_bar, opts.nu)
    cross = scan.shared_cross() if opts.shared_index else None

    N = len(train)
    n_max = min(opts.max_basis, N)
    valset = opts.validation_set
    valgraph = build_preference_graph(valset) if valset is not None else None

    def model_of(sel, coefs, trace=None):
        exps = [SparseExpansion(d.kernel, d.centers[np.asarray(sel[v], dtype=int)], sel[v], coefs[v])
                for v, d in enumerate(dicts)]
        return MultiViewModel(list(zip(views, exps)), opts.nu, "average", trace)

    selected = [[] for _ in range(M)]
    coefs = [np.zeros(0) for _ in range(M)]
    residuals = [s.copy() for _ in range(M)]
    objective = [float(sum(r @ graph.apply(r) for r in residuals))]
    path, val_hist, inc_dis = [], [], []
    best_step, best_val, since_best = None, np.inf, 0
    exhausted = False

    for p in range(n_max):
        try:
            if opts.shared_index:
                gam, a, J, dis = _best_shared(scan, cross, residuals, selected[0], opts.min_denominator)
            else:
                gam, a, J, dis = _best_tuple(scan, residuals, selected, opts.min_denominator)
        except CandidatesExhausted:
            exhausted = True
            warnings.warn(f"no admissible candidates after {p} steps", RuntimeWarning, stacklevel=2)
            break
        for v in range(M):
            selected[v].append(gam[v])
            coefs[v] = np.append(coefs[v], a[v])
        if opts.backfit_every_step:
            cols = [K[:, sel] for K, sel in zip(Ks, selected)]
            bcols = [Kb[:, sel] for Kb, sel in zip(Kbs, selected)]
            try:
                new = _joint_backfit(cols, bcols, s, graph, graph_bar, opts.nu, opts.ridge_jitter)
                if (_full_objective(cols, bcols, new, s, graph, graph_bar, opts.nu)
                        <= _full_objective(cols, bcols, coefs, s, graph, graph_bar, opts.nu) + 1e-10):
                    coefs = new
            except SingularSystemError as exc:
                logger.debug("joint backfit skipped at step %d: %s", p + 1, exc)
        residuals = [s - K[:, sel] @ c for K, sel, c in zip(Ks, selected, coefs)]
        objective.append(J)
        inc_dis.append(dis)
        path.append(([np.array(sel) for sel in selected], [c.copy() for c in coefs]))

        if valset is not None:
            f = model_of(selected, coefs).predict(valset)
            if opts.validation_metric == "mse":
                err = mean_squared_error(valset.scores, f)
            else:
                err = normalized_disagreement(valset.scores, f, valgraph)
            val_hist.append(err)
            if err < best_val:
                best_step, best_val, since_best = p + 1, err, 0
            else:
                since_best += 1
                if since_best >= opts.patience:
                    break

    final = best_step if best_step is not None else len(path)
    if final:
        sel, cf = path[final - 1]
    else:
        sel, cf = [np.zeros(0, dtype=int)] * M, [np.zeros(0)] * M
    trace = MultiViewTrace(objective, path, val_hist, best_step, exhausted, inc_dis)
    model = model_of(sel, cf, trace)
    object.__setattr__(model, "_dicts", dicts)
    return model


def multiview_prefix(model: MultiViewModel, p: int) -> MultiViewModel:
    """The p-step model visited while fitting ``model``."""
    dicts = getattr(model, "_dicts", None)
    if model.trace is None or dicts is None or p > len(model.trace.path):
        raise ValueError(f"no {p}-step model recorded")
    if p == 0:
        sel = [np.zeros(0, dtype=int)] * model.n_views
        cf = [np.zeros(0)] * model.n_views
    else:
        sel, cf = model.trace.path[p - 1]
    exps = [SparseExpansion(d.kernel, d.centers[np.asarray(sv, dtype=int)], sv, c)
            for d, sv, c in zip(dicts, sel, cf)]
    return MultiViewModel(list(zip(model.specs, exps)), model.nu, model.combination)
