"""JSON model files.

A model file is a UTF-8 JSON object::

    {"schema_version": 1, "method": ..., "kernel": {"kind": ..., "width": ...},
     "beta": ..., "nu": ..., "n_features": ...,
     "views": [{"feature_slice": [...] | null, "centers": [[...]], "indices": [...],
                "coefficients": [...]}, ...]}

Single-view models have exactly one view with ``feature_slice`` null.  Floats
are written with ``repr`` precision by :mod:`json`, so a round trip is exact.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .baselines import DenseExpansion
from .kernels import KernelSpec
from .multiview import MultiViewModel, ViewSpec
from .pursuit import SparseExpansion

SCHEMA_VERSION = 1


class ModelFileError(ValueError):
    """Unreadable, corrupted or incompatible model file."""


def _view_dict(model, feature_slice=None) -> dict:
    C = np.asarray(model.centers, dtype=float)
    idx = getattr(model, "indices", None)
    if idx is None:  # dense expansions: every center is a basis function
        sub = getattr(model, "subset", None)
        idx = np.arange(C.shape[0]) if sub is None else sub
    return {
        "feature_slice": None if feature_slice is None else [int(i) for i in feature_slice],
        "centers": C.tolist(),
        "n_features": int(C.shape[1]) if C.ndim == 2 else 0,
        "indices": [int(i) for i in idx],
        "coefficients": [float(a) for a in model.coefficients],
    }


def model_to_dict(model, method: str | None = None) -> dict:
    if isinstance(model, MultiViewModel):
        kernels = {(s.kernel.kind, s.kernel.width) for s in model.specs}
        kernel = model.specs[0].kernel if model.specs else KernelSpec()
        if len(kernels) > 1:
            raise ValueError("views with different kernels cannot share one kernel record")
        views = [_view_dict(m, s.feature_slice) for s, m in model.views]
        return {"schema_version": SCHEMA_VERSION, "method": method or "ss_ranking_pursuit",
                "kernel": kernel.to_dict(), "beta": 0.0, "nu": float(model.nu), "dense": False,
                "views": views}
    if isinstance(model, SparseExpansion):
        return {"schema_version": SCHEMA_VERSION, "method": method or "ranking_pursuit",
                "kernel": model.kernel.to_dict(), "beta": float(model.beta), "nu": None, "dense": False,
                "views": [_view_dict(model)]}
    if isinstance(model, DenseExpansion):
        return {"schema_version": SCHEMA_VERSION, "method": method or "rankrls",
                "kernel": model.kernel.to_dict(), "beta": None, "nu": None, "dense": True,
                "views": [_view_dict(model)]}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _finite(values, what):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ModelFileError(f"non-finite {what}")
    return arr


def _view_model(v: dict, kernel: KernelSpec, beta, dense: bool):
    for key in ("centers", "indices", "coefficients"):
        if key not in v:
            raise ModelFileError(f"view record lacks {key!r}")
    a = _finite(v["coefficients"], "coefficients")
    C = _finite(v["centers"], "centers")
    if C.size == 0:
        C = np.zeros((0, int(v.get("n_features", 0))))
    if C.ndim != 2 or C.shape[0] != a.size or len(v["indices"]) != a.size:
        raise ModelFileError("centers, indices and coefficients disagree in length")
    idx = np.asarray(v["indices"], dtype=int)
    if dense:
        return DenseExpansion(kernel, C, a, idx)
    return SparseExpansion(kernel, C, idx, a, 0.0 if beta is None else float(beta))


def model_from_dict(d: dict):
    if not isinstance(d, dict):
        raise ModelFileError("model file is not a JSON object")
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFileError(f"schema version {version!r} is not supported (expected {SCHEMA_VERSION})")
    try:
        kernel = KernelSpec.from_dict(d["kernel"])
        views = d["views"]
        dense = bool(d.get("dense", False))
        if not isinstance(views, list) or not views:
            raise ModelFileError("model file has no views")
        nu = d.get("nu")
        if nu is None:
            if len(views) != 1:
                raise ModelFileError("a single-view model must have exactly one view")
            return _view_model(views[0], kernel, d.get("beta"), dense)
        pairs = []
        for v in views:
            sl = v.get("feature_slice")
            pairs.append((ViewSpec(kernel, None if sl is None else np.asarray(sl, dtype=int)),
                          _view_model(v, kernel, 0.0, False)))
        if not (isinstance(nu, (int, float)) and math.isfinite(nu)):
            raise ModelFileError("nu must be a finite number")
        return MultiViewModel(pairs, float(nu))
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"corrupted model file: {exc}") from exc


def save_model(model, path, method: str | None = None) -> None:
    text = json.dumps(model_to_dict(model, method), allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
        d = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupted model file {path}: {exc}") from exc
    return model_from_dict(d)
