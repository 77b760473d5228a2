"""``rankpursuit`` command line.

Commands
--------
fit         fit one model on a points CSV and write a JSON model file
predict     score a points CSV with a saved model
experiment  run the collaborative-filtering experiment and print result tables
grid        run only the hold-out grid search of one experiment cell
compare     Wilcoxon comparison of two methods from a per-user results CSV

Points CSV files have the header ``group_id,item_id,score,x0,x1,...``; the
score column may be left empty for unscored points.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np
from scipy.linalg import LinAlgError

from .baselines import BaselineConfig, fit_rankrls, fit_rls, fit_sparse_rankrls
from .data import ScoredDataset, UnscoredDataset
from .dataio import GROUPS, DataFormatError
from .experiment import (
    METHODS,
    ExperimentConfig,
    GridSearchError,
    build_tasks,
    compare_methods,
    draw_users,
    emit_table,
    grid_search,
    load_ratings,
    per_user_csv,
    read_per_user_csv,
)
from .kernels import Dictionary, KernelSpec
from .multiview import MultiViewFitOptions, fit_semisupervised, split_feature_views
from .persistence import ModelFileError, load_model, save_model
from .pursuit import FitOptions, PursuitError, fit_pursuit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- points files


def read_points_csv(path):
    """Read a points CSV into ``(features, scores_or_None, group_ids, item_ids)``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0][:3] != ["group_id", "item_id", "score"]:
        raise DataFormatError(f"{path}: expected header group_id,item_id,score,x0,...")
    d = len(rows[0]) - 3
    if d < 1:
        raise DataFormatError(f"{path}: no feature columns")
    groups, items, scores, X = [], [], [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 3:
            raise DataFormatError(f"{path}:{line}: expected {d + 3} fields, got {len(row)}")
        try:
            X.append([float(v) for v in row[3:]])
            scores.append(float(row[2]) if row[2].strip() else np.nan)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{line}: {exc}") from None
        groups.append(row[0])
        items.append(row[1])
    X = np.array(X, dtype=float).reshape(-1, d)
    if not np.all(np.isfinite(X)):
        raise DataFormatError(f"{path}: non-finite feature value")
    s = np.array(scores, dtype=float)
    if np.all(np.isnan(s)):
        s = None
    elif np.any(np.isnan(s)):
        raise DataFormatError(f"{path}: some but not all points are scored")
    return X, s, groups, items


def _scored(path) -> ScoredDataset:
    X, s, g, it = read_points_csv(path)
    if s is None:
        raise DataFormatError(f"{path}: training points need scores")
    try:
        return ScoredDataset(X, s, g, it)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def _unscored(path) -> UnscoredDataset:
    X, _, g, it = read_points_csv(path)
    return UnscoredDataset(X, g, it)


# ---------------------------------------------------------------- commands


def _fit_model(args):
    method = args.method or "ranking_pursuit"
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}")
    train = _scored(args.train)
    spec = KernelSpec(args.kernel, args.width)
    if method in ("rls", "rankrls", "sparse_rankrls"):
        cfg = BaselineConfig(args.lam, args.basis if method == "sparse_rankrls" else None, args.seed or 0)
        fit = {"rls": fit_rls, "rankrls": fit_rankrls, "sparse_rankrls": fit_sparse_rankrls}[method]
        return fit(train, spec, cfg)
    if method == "ss_ranking_pursuit":
        if not args.unscored:
            raise UsageError("ss_ranking_pursuit needs --unscored")
        views = split_feature_views(train.n_features, spec, args.views)
        opts = MultiViewFitOptions(nu=1.0 if args.nu is None else args.nu, max_basis=args.basis)
        return fit_semisupervised(train, _unscored(args.unscored), views, opts)
    beta = {"ranking_pursuit": 0.0, "matching_pursuit": 1.0}.get(method, 0.5 if args.beta is None else args.beta)
    if args.beta is not None and method != "crrp":
        raise UsageError("--beta applies to crrp only")
    return fit_pursuit(train, Dictionary(spec, train.features), FitOptions(max_basis=args.basis, beta=beta))


def cmd_fit(args) -> int:
    if not args.out:
        raise UsageError("fit needs --out")
    model = _fit_model(args)
    save_model(model, args.out, args.method or "ranking_pursuit")
    print(f"saved {args.method or 'ranking_pursuit'} model with {model.n_nonzero} nonzero coefficients to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    if not (args.model and args.points):
        raise UsageError("predict needs --model and --points")
    model = load_model(args.model)
    X, _, groups, items = read_points_csv(args.points)
    try:
        f = model.predict(X)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None
    lines = ["group_id,item_id,prediction"] + [f"{g},{i},{v!r}" for g, i, v in zip(groups, items, f.tolist())]
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _config(args) -> ExperimentConfig:
    d = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(d, dict):
            raise UsageError("config file must hold a JSON object")
    if args.method:
        d["methods"] = args.method.split(",")
    if args.dataset:
        d["dataset"] = args.dataset
    if args.data_path:
        d["data_path"] = args.data_path
    if args.group:
        d["groups"] = args.group
    if args.setting:
        d["setting"] = args.setting
    if args.beta is not None:
        d["beta"] = args.beta
    if args.nu is not None:
        d["nu_grid"] = [args.nu]
    if args.seed is not None:
        d["seed"] = args.seed
    if args.repeats is not None:
        d["repeats"] = args.repeats
    if args.jobs is not None:
        d["n_jobs"] = args.jobs
    if "ss_ranking_pursuit" in d.get("methods", []) and "setting" not in d:
        d["setting"] = "semisupervised"
    try:
        cfg = ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return cfg.paper_scale() if args.paper_scale else cfg


def cmd_experiment(args) -> int:
    from .experiment import run_experiment

    cfg = _config(args)
    res = run_experiment(cfg)
    parts = []
    for metric in ("disagreement", "mse"):
        text = emit_table(res.tables[metric], args.format)
        parts.append(text if args.format == "csv" else f"{metric}\n{text}")
    if args.format == "csv":
        out = parts[0]  # CSV output carries the ranking metric only
        if args.mse_out:
            _write(parts[1], args.mse_out)
    else:
        out = "\n".join(parts)
    _write(out, args.out)
    if args.per_user:
        _write(per_user_csv(res), args.per_user)
    n_failed = sum(res.failures.values())
    if n_failed:
        print(f"warning: {n_failed} per-user fits failed and were excluded", file=sys.stderr)
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _config(args)
    ratings = load_ratings(cfg)
    out = []
    for gi, group in enumerate(cfg.groups):
        _, holdout_users = draw_users(ratings, cfg, group, 0, gi)
        holdout = build_tasks(ratings, cfg, group, holdout_users, (0, gi, 1))
        for method in cfg.methods:
            params, err = grid_search(method, cfg, holdout, cfg.sparse_subset_size or cfg.p_max)
            out.append({"method": method, "group": group, "params": params, "holdout_error": err})
    _write(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    if not (args.per_user and args.method):
        raise UsageError("compare needs --per-user and --method A,B")
    methods = args.method.split(",")
    if len(methods) != 2:
        raise UsageError("--method must name exactly two methods for compare")
    rows = read_per_user_csv(args.per_user)
    groups = args.group or sorted({r.group for r in rows})
    lines = ["group,method_a,method_b,mean_a,mean_b,p,significant"]
    for g in groups:
        err = {}
        for m in methods:
            sel = sorted((r for r in rows if r.method == m and r.group == g), key=lambda r: (r.repeat, r.user))
            err[m] = sel
        a, b = err[methods[0]], err[methods[1]]
        if [(r.repeat, r.user) for r in a] != [(r.repeat, r.user) for r in b]:
            raise DataFormatError(f"group {g}: per-user results of {methods[0]} and {methods[1]} are not paired")
        ea = np.array([getattr(r, args.metric) for r in a])
        eb = np.array([getattr(r, args.metric) for r in b])
        if ea.size == 0:
            raise DataFormatError(f"group {g}: no results for {methods}")
        try:
            p, sig = compare_methods(ea, eb)
        except ValueError as exc:
            lines.append(f"{g},{methods[0]},{methods[1]},{ea.mean()!r},{eb.mean()!r},nan,{exc}")
            continue
        lines.append(f"{g},{methods[0]},{methods[1]},{ea.mean()!r},{eb.mean()!r},{p!r},{sig}")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _write(text: str, path) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rankpursuit", description="Sparse preference learning by ranking pursuit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--method", help="method name; a comma-separated list for experiment/grid/compare")
    common.add_argument("--beta", type=float, help="CRRP weight of the regression term")
    common.add_argument("--nu", type=float, help="co-regularization weight")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output file (default: stdout)")

    exp = _Parser(add_help=False)
    exp.add_argument("--config", help="JSON file with ExperimentConfig fields")
    exp.add_argument("--dataset", choices=["jester", "movielens", "synthetic"])
    exp.add_argument("--data-path")
    exp.add_argument("--group", action="append", choices=list(GROUPS))
    exp.add_argument("--setting", choices=["supervised", "semisupervised"])
    exp.add_argument("--repeats", type=int)
    exp.add_argument("--jobs", type=int, help="worker processes for test users (0: all cores)")
    exp.add_argument("--paper-scale", action="store_true", help="300 reference users, 300 test users, 10 repeats")

    f = sub.add_parser("fit", parents=[common], help="fit a model on a points CSV")
    f.add_argument("--train", required=True)
    f.add_argument("--unscored", help="unscored points CSV (ss_ranking_pursuit)")
    f.add_argument("--kernel", choices=["gaussian", "linear"], default="gaussian")
    f.add_argument("--width", type=float, default=1.0)
    f.add_argument("--basis", type=int, default=10, help="number of basis functions P (or subset size r)")
    f.add_argument("--lam", type=float, default=1.0)
    f.add_argument("--views", type=int, default=2)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", parents=[common], help="score points with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--points", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("experiment", parents=[common, exp], help="run the ranking experiment")
    e.add_argument("--format", choices=["csv", "pretty"], default="pretty")
    e.add_argument("--per-user", help="also write per-user errors to this CSV")
    e.add_argument("--mse-out", help="with --format csv, write the MSE table here")
    e.set_defaults(func=cmd_experiment)

    g = sub.add_parser("grid", parents=[common, exp], help="hold-out grid search of the first repeat")
    g.set_defaults(func=cmd_grid)

    c = sub.add_parser("compare", parents=[common], help="Wilcoxon test between two methods")
    c.add_argument("--per-user", required=True, help="per-user CSV written by experiment --per-user")
    c.add_argument("--group", action="append", choices=list(GROUPS))
    c.add_argument("--metric", choices=["disagreement", "mse"], default="disagreement")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rankpursuit: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ModelFileError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"rankpursuit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (LinAlgError, PursuitError, GridSearchError, FloatingPointError) as exc:
        print(f"rankpursuit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining value errors stem from the input data (e.g. too few eligible users)
        print(f"rankpursuit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
