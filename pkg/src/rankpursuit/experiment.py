"""Collaborative-filtering ranking experiments.

For every repeat and user-activity group a set of test users and a disjoint
set of hold-out users is drawn.  Hyperparameters of each method (kernel
width, and per method the regularizer, co-regularization weight and number
of basis functions) are picked by the mean hold-out error, then every test
user gets a model fitted on its training half and scored on its test half.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .baselines import BaselineConfig, fit_rankrls, fit_rls, fit_sparse_rankrls
from .data import ScoredDataset, build_preference_graph
from .dataio import (
    GROUPS,
    RatingsMatrix,
    TaskSpec,
    build_user_task,
    eligible_test_users,
    group_members,
    load_jester_csv,
    load_movielens,
    split_for_semisupervised,
    synthetic_ratings,
)
from scipy.spatial.distance import cdist

from .kernels import Dictionary, KernelSpec
from .metrics import (
    mean_squared_error,
    normalized_disagreement,
    normalized_disagreement_columns,
    wilcoxon_signed_rank,
)
from .multiview import MultiViewFitOptions, ViewSpec, fit_semisupervised
from .pursuit import FitOptions, fit_pursuit

logger = logging.getLogger(__name__)

METHODS = ("rls", "matching_pursuit", "rankrls", "sparse_rankrls", "ranking_pursuit", "ss_ranking_pursuit", "crrp")
PURSUIT_BETA = {"matching_pursuit": 1.0, "ranking_pursuit": 0.0}
METHOD_LABELS = {
    "rls": "RLS",
    "matching_pursuit": "Matching Pursuit",
    "rankrls": "RankRLS",
    "sparse_rankrls": "Sparse RankRLS",
    "ranking_pursuit": "Ranking Pursuit",
    "ss_ranking_pursuit": "SS Ranking Pursuit",
    "crrp": "CRRP",
}

PAPER_WIDTHS = [2.0**k for k in range(-15, 16)]


@dataclass
class ExperimentConfig:
    methods: list = field(default_factory=lambda: ["rls", "matching_pursuit", "rankrls", "sparse_rankrls",
                                                   "ranking_pursuit"])
    dataset: str = "synthetic"
    data_path: Optional[str] = None
    setting: str = "supervised"
    groups: list = field(default_factory=lambda: list(GROUPS))
    n_reference: int = 100
    n_test_users: int = 30
    n_holdout_users: int = 10
    repeats: int = 3
    test_user_rating_range: tuple = (50, 300)
    width_grid: list = field(default_factory=lambda: list(PAPER_WIDTHS))
    lambda_grid: list = field(default_factory=lambda: [2.0**k for k in range(-10, 11, 2)])
    nu_grid: list = field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    beta: float = 0.5
    p_max: int = 40
    sparse_subset_size: Optional[int] = None
    unscored_fraction: float = 0.5
    select_metric: str = "disagreement"
    seed: int = 0
    synthetic: dict = field(default_factory=lambda: {"n_users": 2000, "n_items": 100})
    n_jobs: int = 1

    def __post_init__(self):
        self.test_user_rating_range = tuple(self.test_user_rating_range)
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if self.dataset not in ("jester", "movielens", "synthetic"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.dataset != "synthetic" and not self.data_path:
            raise ValueError(f"dataset {self.dataset!r} needs a data_path")
        if self.setting not in ("supervised", "semisupervised"):
            raise ValueError(f"unknown setting {self.setting!r}")
        if "ss_ranking_pursuit" in self.methods and self.setting != "semisupervised":
            raise ValueError("ss_ranking_pursuit needs the semisupervised setting")
        for g in self.groups:
            if g not in GROUPS:
                raise ValueError(f"unknown group {g!r}")
        for name in ("width_grid", "lambda_grid", "nu_grid", "methods", "groups"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if self.select_metric not in ("disagreement", "mse"):
            raise ValueError(f"unknown select_metric {self.select_metric!r}")
        if self.p_max < 1:
            raise ValueError("p_max must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["test_user_rating_range"] = list(self.test_user_rating_range)
        return d

    def paper_scale(self) -> "ExperimentConfig":
        return replace(self, n_reference=300, n_test_users=300, repeats=10)

    def task_spec(self, group: str) -> TaskSpec:
        return TaskSpec(group, self.n_reference, self.n_test_users, self.test_user_rating_range,
                        self.seed, self.repeats)


def load_ratings(config: ExperimentConfig) -> RatingsMatrix:
    if config.dataset == "jester":
        return load_jester_csv(config.data_path)
    if config.dataset == "movielens":
        return load_movielens(config.data_path)
    return synthetic_ratings(seed=config.seed, **config.synthetic)


# ---------------------------------------------------------------- tasks


@dataclass
class UserTask:
    user: int
    train: ScoredDataset
    test: ScoredDataset
    unscored: object = None  # UnscoredDataset in the semi-supervised setting
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def sqdist(self, which: str, view: Optional[int] = None) -> np.ndarray:
        """Squared distances from ``which`` points to the training points, memoized."""
        key = (which, view)
        if key not in self.cache:
            X = {"train": self.train, "test": self.test, "unscored": self.unscored}[which]
            X = np.zeros((0, self.train.n_features)) if X is None else X.features
            C = self.train.features
            if view is not None:
                sl = view_slices(self.train.n_features)[view]
                X, C = X[:, sl], C[:, sl]
            self.cache[key] = cdist(X, C, "sqeuclidean") if len(X) else np.zeros((0, len(C)))
        return self.cache[key]

    def gram(self, which: str, width: float, view: Optional[int] = None) -> np.ndarray:
        return np.exp(-width * self.sqdist(which, view))


N_VIEWS = 2


def view_slices(n_features: int) -> list:
    return np.array_split(np.arange(n_features), N_VIEWS)


def _seed(config, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(config.seed)] + [int(p) for p in path])


def build_tasks(ratings, config: ExperimentConfig, group: str, users, seed_path) -> list[UserTask]:
    spec = config.task_spec(group)
    pool = group_members(ratings, group)
    tasks = []
    for k, u in enumerate(users):
        ss = _seed(config, *seed_path, k)
        task_rng, split_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        train, test = build_user_task(ratings, spec, int(u), task_rng, reference_pool=pool)
        unscored = None
        if config.setting == "semisupervised":
            train, unscored = split_for_semisupervised(train, config.unscored_fraction, split_rng)
        tasks.append(UserTask(int(u), train, test, unscored))
    return tasks


def draw_users(ratings, config: ExperimentConfig, group: str, repeat: int, gi: int):
    """Test users and disjoint hold-out users of one experiment cell."""
    eligible = eligible_test_users(ratings, config.task_spec(group))
    need = config.n_test_users + config.n_holdout_users
    if eligible.size < need:
        raise ValueError(f"only {eligible.size} eligible test users, need {need}")
    rng = np.random.default_rng(_seed(config, repeat, gi, 0))
    chosen = rng.choice(eligible, size=need, replace=False)
    return chosen[: config.n_test_users], chosen[config.n_test_users:]


# ---------------------------------------------------------------- fitting


def _error(metric, y, f, graph):
    if metric == "mse":
        return mean_squared_error(y, f)
    return normalized_disagreement(y, f, graph)


def _pursuit_beta(method, config):
    return config.beta if method == "crrp" else PURSUIT_BETA[method]


def fit_method(method: str, params: dict, task: UserTask, config: ExperimentConfig):
    """Fit one method with fixed hyperparameters on a user's training data."""
    w = params["width"]
    spec = KernelSpec("gaussian", w)
    train = task.train
    if method in ("rls", "rankrls"):
        fit = fit_rls if method == "rls" else fit_rankrls
        return fit(train, spec, BaselineConfig(params["lam"]), K=task.gram("train", w))
    if method == "sparse_rankrls":
        r = min(int(params["r"]), len(train))
        cfg = BaselineConfig(params["lam"], r, params.get("subset_seed", 0))
        return fit_sparse_rankrls(train, spec, cfg, K=task.gram("train", w))
    if method == "ss_ranking_pursuit":
        views = [ViewSpec(spec, sl) for sl in view_slices(train.n_features)]
        opts = MultiViewFitOptions(nu=params["nu"], max_basis=int(params["P"]))
        cols = ([task.gram("train", w, v) for v in range(N_VIEWS)],
                [task.gram("unscored", w, v) for v in range(N_VIEWS)])
        return fit_semisupervised(train, task.unscored, views, opts, columns=cols)
    opts = FitOptions(max_basis=int(params["P"]), beta=_pursuit_beta(method, config))
    return fit_pursuit(train, Dictionary(spec, train.features), opts, columns=task.gram("train", w))


def _prefix_errors(method, params, task, config, p_max, metric):
    """Hold-out error of every prefix 1..p_max of one greedy path."""
    model = fit_method(method, dict(params, P=p_max), task, config)
    w = params["width"]
    y = task.test.scores
    if method == "ss_ranking_pursuit":
        Kts = [task.gram("test", w, v) for v in range(N_VIEWS)]
        F = [np.mean([Kt[:, i] @ c for Kt, i, c in zip(Kts, idx, coef)], axis=0)
             for idx, coef in model.trace.path]
    else:
        Kt = task.gram("test", w)
        F = [Kt[:, idx] @ coef for idx, coef in model.trace.path]
    if not F:
        F = [np.zeros(len(y))]
    F = np.column_stack(F)
    if metric == "mse":
        errs = np.mean((F - y[:, None]) ** 2, axis=0)
    else:
        errs = normalized_disagreement_columns(y, F, build_preference_graph(task.test))
    # a path that stopped early keeps its last model for larger P
    errs = np.concatenate([errs, np.full(max(0, p_max - errs.size), errs[-1])])
    return errs[:p_max]


def _param_grid(method, config, sparse_r=None):
    widths = list(config.width_grid)
    if method in ("rls", "rankrls"):
        return [{"width": w, "lam": lam} for w, lam in itertools.product(widths, config.lambda_grid)]
    if method == "sparse_rankrls":
        return [{"width": w, "lam": lam, "r": sparse_r} for w, lam in itertools.product(widths, config.lambda_grid)]
    if method == "ss_ranking_pursuit":
        return [{"width": w, "nu": nu} for w, nu in itertools.product(widths, config.nu_grid)]
    return [{"width": w} for w in widths]


class GridSearchError(RuntimeError):
    pass


def grid_search(method: str, config: ExperimentConfig, holdout: list, sparse_r: Optional[int] = None,
                metric: Optional[str] = None):
    """Hyperparameters with the lowest mean hold-out error; ties go to the first in grid order.

    For the greedy methods the number of basis functions ``P`` is part of the
    grid and is read off the fitted path.  Returns ``(params, error)``.
    """
    metric = metric or config.select_metric
    greedy = method in ("matching_pursuit", "ranking_pursuit", "crrp", "ss_ranking_pursuit")
    best, best_err = None, np.inf
    for params in _param_grid(method, config, sparse_r):
        if greedy:
            rows = []
            for task in holdout:
                try:
                    rows.append(_prefix_errors(method, params, task, config, config.p_max, metric))
                except Exception as exc:  # noqa: BLE001 - a failed fit disqualifies the grid point
                    logger.debug("%s %s failed: %s", method, params, exc)
                    rows = None
                    break
            if rows is None:
                continue
            mean = np.mean(rows, axis=0)
            p = int(np.argmin(mean))
            cand, err = dict(params, P=p + 1), float(mean[p])
        else:
            errs = []
            for task in holdout:
                try:
                    model = fit_method(method, params, task, config)
                except Exception as exc:  # noqa: BLE001
                    logger.debug("%s %s failed: %s", method, params, exc)
                    errs = None
                    break
                graph = build_preference_graph(task.test)
                errs.append(_error(metric, task.test.scores, model.predict(task.test), graph))
            if errs is None:
                continue
            cand, err = params, float(np.mean(errs))
        if err < best_err:
            best, best_err = cand, err
    if best is None:
        raise GridSearchError(f"every grid point failed for {method}")
    return best, best_err


# ---------------------------------------------------------------- results


@dataclass
class UserResult:
    method: str
    group: str
    repeat: int
    user: int
    disagreement: float
    mse: float
    n_nonzero: int
    n_train: int


@dataclass
class ResultTable:
    """Rows are methods, columns are user groups; cells are (mean, std, repeats)."""

    metric: str
    methods: list
    groups: list
    cells: dict = field(default_factory=dict)

    def cell(self, method, group):
        return self.cells[(method, group)]

    def mean(self, method, group) -> float:
        return self.cells[(method, group)][0]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    tables: dict
    per_user: list
    params: dict
    failures: dict
    holdout_errors: dict = field(default_factory=dict)

    def user_errors(self, method, group, metric="disagreement"):
        rows = sorted((r for r in self.per_user if r.method == method and r.group == group),
                      key=lambda r: (r.repeat, r.user))
        return np.array([getattr(r, metric) for r in rows])

    def sparsity(self, method, group):
        rows = [r for r in self.per_user if r.method == method and r.group == group]
        return float(np.mean([r.n_nonzero for r in rows])), float(np.mean([r.n_train for r in rows]))


def _aggregate(per_repeat: dict, metric: str, methods, groups) -> ResultTable:
    table = ResultTable(metric, list(methods), list(groups))
    for key, vals in per_repeat.items():
        v = np.array(vals, dtype=float)
        std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
        table.cells[key] = (float(np.mean(v)), std, int(v.size))
    return table


def _evaluate_user(args):
    method, params, task, config, group, repeat = args
    try:
        model = fit_method(method, params, task, config)
    except Exception as exc:  # noqa: BLE001 - recorded and excluded, never aborts the cell
        logger.warning("%s failed for user %d: %s", method, task.user, exc)
        return None
    f = model.predict(task.test)
    graph = build_preference_graph(task.test)
    return UserResult(method, group, repeat, task.user,
                      normalized_disagreement(task.test.scores, f, graph),
                      mean_squared_error(task.test.scores, f),
                      int(model.n_nonzero), len(task.train))


def run_experiment(config: ExperimentConfig, ratings: Optional[RatingsMatrix] = None) -> ExperimentResult:
    if ratings is None:
        ratings = load_ratings(config)
    order = [m for m in METHODS if m in config.methods]
    # sparse RankRLS borrows the ranking pursuit model size
    if "sparse_rankrls" in order and "ranking_pursuit" in order:
        order.remove("sparse_rankrls")
        order.insert(order.index("ranking_pursuit") + 1, "sparse_rankrls")
    per_user, params_out, failures, holdout_errors = [], {}, {}, {}
    per_repeat = {"disagreement": {}, "mse": {}}
    for repeat in range(config.repeats):
        for gi, group in enumerate(config.groups):
            test_users, holdout_users = draw_users(ratings, config, group, repeat, gi)
            holdout = build_tasks(ratings, config, group, holdout_users, (repeat, gi, 1))
            tests = build_tasks(ratings, config, group, test_users, (repeat, gi, 2))
            chosen_p = None
            for method in order:
                sparse_r = None
                if method == "sparse_rankrls":
                    sparse_r = config.sparse_subset_size or chosen_p or config.p_max
                params, holdout_errors[(method, group, repeat)] = grid_search(method, config, holdout, sparse_r)
                if method == "ranking_pursuit":
                    chosen_p = params["P"]
                params_out[(method, group, repeat)] = params
                jobs = [(method, dict(params, subset_seed=int(_seed(config, repeat, gi, 3, k).generate_state(1)[0])),
                         t, config, group, repeat) for k, t in enumerate(tests)]
                if config.n_jobs != 1:
                    with ProcessPoolExecutor(max_workers=None if config.n_jobs < 1 else config.n_jobs) as ex:
                        results = list(ex.map(_evaluate_user, jobs))
                else:
                    results = [_evaluate_user(j) for j in jobs]
                ok = [r for r in results if r is not None]
                failures[(method, group, repeat)] = len(results) - len(ok)
                per_user.extend(ok)
                if not ok:
                    continue
                for metric in ("disagreement", "mse"):
                    vals = math.fsum(getattr(r, metric) for r in ok) / len(ok)
                    per_repeat[metric].setdefault((method, group), []).append(vals)
                logger.info("repeat %d group %s %s: %s -> %.4f", repeat, group, method, params,
                            per_repeat["disagreement"][(method, group)][-1])
    tables = {m: _aggregate(per_repeat[m], m, order, config.groups) for m in per_repeat}
    return ExperimentResult(config, tables, per_user, params_out, failures, holdout_errors)


def compare_methods(errors_a, errors_b, alpha: float = 0.05):
    """Wilcoxon signed-rank comparison of paired per-user errors.

    Returns ``(p_value, significant)``; raises ``ValueError`` when the lists
    differ in length or are identical.
    """
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.size != b.size:
        raise ValueError(f"unequal lengths: {a.size} vs {b.size}")
    try:
        _, p = wilcoxon_signed_rank(a, b)
    except ValueError as exc:
        raise ValueError(f"not comparable: {exc}") from None
    return p, bool(p < alpha)


# ---------------------------------------------------------------- output

CSV_HEADER = ["method", "group", "mean", "std", "repeats"]


def emit_table(table: ResultTable, fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for m in table.methods:
            for g in table.groups:
                if (m, g) in table.cells:
                    mean, std, k = table.cells[(m, g)]
                    w.writerow([m, g, repr(mean), repr(std), k])
        return buf.getvalue()
    if fmt != "pretty":
        raise ValueError(f"unknown format {fmt!r}")
    labels = [METHOD_LABELS.get(m, m) for m in table.methods]
    w0 = max([len("Method")] + [len(s) for s in labels])
    colw = max(8, max(len(g) for g in table.groups))
    lines = [f"{'Method':<{w0}}  " + "  ".join(f"{g:>{colw}}" for g in table.groups)]
    lines.append("-" * len(lines[0]))
    for m, lab in zip(table.methods, labels):
        cells = []
        for g in table.groups:
            c = table.cells.get((m, g))
            cells.append(f"{c[0]:>{colw}.3f}" if c else f"{'-':>{colw}}")
        lines.append(f"{lab:<{w0}}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def parse_table_csv(text: str, metric: str = "disagreement") -> ResultTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError("not a result table CSV")
    methods, groups, cells = [], [], {}
    for m, g, mean, std, k in rows[1:]:
        if m not in methods:
            methods.append(m)
        if g not in groups:
            groups.append(g)
        cells[(m, g)] = (float(mean), float(std), int(k))
    return ResultTable(metric, methods, groups, cells)


def per_user_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(UserResult)]
    w.writerow(names)
    for r in result.per_user:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])
    return buf.getvalue()


def read_per_user_csv(path) -> list[UserResult]:
    with open(path, newline="", encoding="utf-8") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append(UserResult(row["method"], row["group"], int(row["repeat"]), int(row["user"]),
                                  float(row["disagreement"]), float(row["mse"]),
                                  int(row["n_nonzero"]), int(row["n_train"])))
    return out
