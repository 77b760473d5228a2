"""Greedy ranking pursuit under a weighted Laplacian loss.

With ``beta = 0`` the loss is the pairwise squared ranking loss
``(s - f)' L (s - f)``; with ``beta = 1`` it is the plain squared error and
the fit is kernel matching pursuit; values in between give the combined
ranking and regression pursuit (CRRP).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data import ScoredDataset, WeightedLaplacian, as_features, build_preference_graph
from .kernels import Dictionary, KernelSpec, kernel_matrix
from .linalg import SingularSystemError, spd_solve
from .metrics import mean_squared_error, normalized_disagreement

logger = logging.getLogger(__name__)

MIN_DENOMINATOR = 1e-12
TIE_RTOL = 1e-15


class PursuitError(RuntimeError):
    pass


class DegenerateCandidate(PursuitError):
    """The candidate column lies (numerically) in the null space of the loss."""


class CandidatesExhausted(PursuitError):
    """Every dictionary entry is either already selected or degenerate."""


class BackfitError(PursuitError):
    pass


@dataclass(frozen=True)
class FitTrace:
    """Diagnostics of a greedy fit.

    ``objective[p]`` is the training loss after p accepted steps (entry 0 is
    the loss of the empty model).  ``path[p - 1]`` holds the (indices,
    coefficients) of the p-term model.
    """

    objective: list
    path: list
    validation: list = field(default_factory=list)
    best_step: Optional[int] = None
    exhausted: bool = False


@dataclass(frozen=True, eq=False)
class SparseExpansion:
    """f(q) = sum_p coefficients[p] * k(centers[p], q)."""

    kernel: KernelSpec
    centers: np.ndarray
    indices: np.ndarray
    coefficients: np.ndarray
    beta: float = 0.0
    trace: Optional[FitTrace] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int).reshape(-1)
        a = np.asarray(self.coefficients, dtype=float).reshape(-1)
        C = np.asarray(self.centers, dtype=float)
        if C.ndim == 1:
            C = C.reshape(idx.size, -1) if idx.size else C.reshape(0, 0)
        if not (idx.size == a.size == C.shape[0]):
            raise ValueError("indices, coefficients and centers must have equal length")
        if np.unique(idx).size != idx.size:
            raise ValueError("selected indices must be distinct")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coefficients", a)
        object.__setattr__(self, "centers", C)

    @property
    def n_basis(self) -> int:
        return self.indices.size

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    def predict(self, points) -> np.ndarray:
        return predict(self, points)

    def prefix(self, p: int, centers_source: Optional[np.ndarray] = None) -> "SparseExpansion":
        """The p-term model visited during fitting (requires a trace)."""
        if p == 0:
            return SparseExpansion(self.kernel, np.zeros((0, self.centers.shape[1])), [], [], self.beta)
        if self.trace is None or p > len(self.trace.path):
            raise ValueError(f"no {p}-term model recorded")
        idx, coef = self.trace.path[p - 1]
        src = self._all_centers if centers_source is None else centers_source
        return SparseExpansion(self.kernel, src[idx], idx, coef, self.beta)

    _all_centers: np.ndarray = field(default=None, compare=False, repr=False)


def predict(model: SparseExpansion, points) -> np.ndarray:
    X = as_features(points)
    if model.n_basis == 0:
        return np.zeros(X.shape[0])
    if X.shape[1] != model.centers.shape[1]:
        raise ValueError(f"dimension mismatch: model expects {model.centers.shape[1]} features, got {X.shape[1]}")
    return kernel_matrix(model.kernel, X, model.centers) @ model.coefficients


@dataclass(frozen=True)
class FitOptions:
    """Options of :func:`fit_pursuit`.

    backfit : re-solve all selected coefficients jointly
    backfit_every_step : after each selection (True) or once at the end (False)
    validation_set : early stopping once its error fails to improve for
        ``patience`` consecutive steps; the best prefix is returned
    """

    max_basis: int = 10
    beta: float = 0.0
    backfit: bool = True
    backfit_every_step: bool = True
    validation_set: Optional[ScoredDataset] = None
    validation_metric: str = "disagreement"
    patience: int = 3
    min_denominator: float = MIN_DENOMINATOR
    ridge_jitter: float = 0.0
    exclude_ties: bool = False

    def __post_init__(self):
        if self.max_basis < 0:
            raise ValueError("max_basis must be nonnegative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.validation_metric not in ("disagreement", "mse"):
            raise ValueError(f"unknown validation metric {self.validation_metric!r}")


@dataclass
class FitState:
    residual: np.ndarray
    objective: list = field(default_factory=list)


def evaluate_candidate(r, kcol, lap: WeightedLaplacian, min_denominator: float = MIN_DENOMINATOR):
    """Optimal coefficient of one basis column and the resulting loss.

    Returns ``(a, J)`` with ``a = k'Lr / k'Lk`` and ``J = (r - a k)' L (r - a k)``.
    """
    r = np.asarray(r, dtype=float)
    k = np.asarray(kcol, dtype=float)
    Lk = lap.apply(k)
    den = float(k @ Lk)
    if den < min_denominator:
        raise DegenerateCandidate(f"k'Lk = {den:.3g} below {min_denominator:g}")
    a = float(Lk @ r) / den
    e = r - a * k
    return a, float(e @ lap.apply(e))


class _CandidateScan:
    """Quantities of the dictionary columns that stay fixed during a fit."""

    def __init__(self, columns: np.ndarray, lap: WeightedLaplacian):
        self.K = np.asarray(columns, dtype=float)
        self.LK = lap.apply(self.K)
        self.den = np.einsum("ij,ij->j", self.K, self.LK)
        self.lap = lap

    def best(self, r, excluded=(), min_denominator=MIN_DENOMINATOR):
        Lr = self.lap.apply(r)
        rLr = float(r @ Lr)
        num = self.K.T @ Lr
        ok = self.den >= min_denominator
        if len(excluded):
            ok[np.fromiter(excluded, dtype=int)] = False
        if not ok.any():
            raise CandidatesExhausted("no admissible candidate left in the dictionary")
        gain = np.full(self.den.shape, -np.inf)
        gain[ok] = num[ok] ** 2 / self.den[ok]
        J = rLr - gain
        Jmin = J[ok].min()
        # lowest index among (numerically) tied minimizers
        tol = TIE_RTOL * max(1.0, abs(rLr))
        gamma = int(np.flatnonzero(ok & (J <= Jmin + tol))[0])
        a = float(num[gamma] / self.den[gamma])
        e = r - a * self.K[:, gamma]
        return gamma, a, float(e @ self.lap.apply(e))


def select_best(state, columns, lap: WeightedLaplacian, excluded=(), *,
                min_denominator: float = MIN_DENOMINATOR):
    """Greedy step: the admissible column minimizing the loss of ``r - a k``.

    ``state`` is a :class:`FitState` or a residual vector; ``columns`` is a
    :class:`Dictionary` paired with its points via ``(dictionary, points)`` or
    the n x N matrix of column values.
    """
    r = state.residual if isinstance(state, FitState) else np.asarray(state, dtype=float)
    if isinstance(columns, tuple):
        dictionary, points = columns
        columns = dictionary.columns(points)
    return _CandidateScan(columns, lap).best(r, excluded, min_denominator)


def backfit(selected_columns, s, lap: WeightedLaplacian, jitter: float = 0.0):
    """Jointly optimal coefficients of the selected columns for the loss on ``s``."""
    K = np.asarray(selected_columns, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    if K.shape[1] < 1:
        raise ValueError("backfit needs at least one column")
    LK = lap.apply(K)
    G = K.T @ LK
    G = 0.5 * (G + G.T)
    try:
        a, _ = spd_solve(G, LK.T @ np.asarray(s, dtype=float), jitter)
    except SingularSystemError as exc:
        raise BackfitError(str(exc)) from exc
    return a


def _loss(lap, e):
    return float(e @ lap.apply(e))


def _validation_error(metric, model, valset, valgraph):
    f = model.predict(valset)
    if metric == "mse":
        return mean_squared_error(valset.scores, f)
    return normalized_disagreement(valset.scores, f, valgraph)


def fit_pursuit(train: ScoredDataset, dictionary: Dictionary, opts: FitOptions = FitOptions(),
                columns: Optional[np.ndarray] = None) -> SparseExpansion:
    """Greedy sparse fit of ``train.scores`` with basis functions from ``dictionary``.

    ``columns`` may pass precomputed dictionary values on the training points.
    """
    K = dictionary.columns(train) if columns is None else np.asarray(columns, dtype=float)
    graph = build_preference_graph(train, exclude_ties=opts.exclude_ties)
    lap = WeightedLaplacian(graph, opts.beta)
    scan = _CandidateScan(K, lap)
    s = np.asarray(train.scores, dtype=float)
    n_max = min(opts.max_basis, len(dictionary))

    valset = opts.validation_set
    valgraph = build_preference_graph(valset) if valset is not None else None

    def model_of(idx, coef, trace=None):
        return SparseExpansion(dictionary.kernel, dictionary.centers[idx], idx, coef, opts.beta,
                               trace, dictionary.centers)

    selected: list[int] = []
    coef = np.zeros(0)
    r = s.copy()
    objective = [_loss(lap, r)]
    path, val_hist = [], []
    exhausted = False
    best_step, best_val, since_best = None, np.inf, 0

    for p in range(n_max):
        try:
            gamma, a, J = scan.best(r, selected, opts.min_denominator)
        except CandidatesExhausted:
            exhausted = True
            warnings.warn(f"dictionary exhausted after {p} steps", RuntimeWarning, stacklevel=2)
            break
        selected.append(gamma)
        coef = np.append(coef, a)
        if opts.backfit and opts.backfit_every_step:
            try:
                new = backfit(K[:, selected], s, lap, opts.ridge_jitter)
                J_new = _loss(lap, s - K[:, selected] @ new)
                # a jittered solve may be slightly off; keep the greedy step then
                if J_new <= J + 1e-10 * max(1.0, abs(J)):
                    coef = new
            except BackfitError as exc:
                logger.debug("backfit skipped at step %d: %s", p + 1, exc)
        r = s - K[:, selected] @ coef
        objective.append(_loss(lap, r))
        path.append((np.array(selected), coef.copy()))

        if valset is not None:
            err = _validation_error(opts.validation_metric, model_of(np.array(selected), coef), valset, valgraph)
            val_hist.append(err)
            if err < best_val:
                best_step, best_val, since_best = p + 1, err, 0
            else:
                since_best += 1
                if since_best >= opts.patience:
                    break

    final_step = best_step if best_step is not None else len(path)
    if final_step:
        idx, coef = path[final_step - 1]
    else:
        idx, coef = np.zeros(0, dtype=int), np.zeros(0)
    if opts.backfit and not opts.backfit_every_step and idx.size:
        try:
            new = backfit(K[:, idx], s, lap, opts.ridge_jitter)
            if _loss(lap, s - K[:, idx] @ new) <= _loss(lap, s - K[:, idx] @ coef) + 1e-10:
                coef = new
        except BackfitError as exc:
            logger.debug("final backfit skipped: %s", exc)
    trace = FitTrace(objective, path, val_hist, best_step, exhausted)
    return model_of(idx, coef, trace)


def fit_matching_pursuit(train, dictionary, opts: FitOptions = FitOptions(), **kw) -> SparseExpansion:
    """Kernel matching pursuit: the squared-error endpoint ``beta = 1``."""
    return fit_pursuit(train, dictionary, replace(opts, beta=1.0), **kw)


def fit_crrp(train, dictionary, beta: float, opts: FitOptions = FitOptions(), **kw) -> SparseExpansion:
    return fit_pursuit(train, dictionary, replace(opts, beta=beta), **kw)
