"""Kernel functions and dictionaries of kernel basis functions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .data import as_features

KERNEL_KINDS = ("gaussian", "linear")


@dataclass(frozen=True)
class KernelSpec:
    """``gaussian``: exp(-width * ||x - x'||^2); ``linear``: x . x'."""

    kind: str = "gaussian"
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not self.width > 0:
            raise ValueError(f"gaussian kernel width must be positive, got {self.width}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "width": float(self.width)}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["kind"], float(d.get("width", 1.0)))


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {x2.size}")
    if spec.kind == "linear":
        return float(x @ x2)
    diff = x - x2
    return float(np.exp(-spec.width * (diff @ diff)))


def kernel_matrix(spec: KernelSpec, A, B) -> np.ndarray:
    """Kernel values between rows of ``A`` (m x d) and rows of ``B`` (k x d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind == "linear":
        return A @ B.T
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    d2 = cdist(A, B, "sqeuclidean")
    return np.exp(-spec.width * d2)


@dataclass(frozen=True)
class Dictionary:
    """Candidate basis functions ``k(center_g, .)`` for g = 0..N-1.

    ``source_indices`` records which rows of the source dataset the centers
    were taken from.
    """

    kernel: KernelSpec
    centers: np.ndarray
    source_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if C.shape[0] < 1:
            raise ValueError("a dictionary needs at least one center")
        C.setflags(write=False)
        object.__setattr__(self, "centers", C)

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def size(self) -> int:
        return len(self)

    def columns(self, points) -> np.ndarray:
        """All basis functions evaluated on ``points``: shape (n_points, N)."""
        return kernel_matrix(self.kernel, as_features(points), self.centers)


def kernel_column(dictionary: Dictionary, gamma: int, points) -> np.ndarray:
    """Basis function ``gamma`` (0-based) evaluated on every point."""
    if not 0 <= gamma < len(dictionary):
        raise IndexError(f"dictionary index {gamma} out of range [0, {len(dictionary)})")
    X = as_features(points)
    return kernel_matrix(dictionary.kernel, X, dictionary.centers[gamma : gamma + 1])[:, 0]


def dictionary_from_dataset(dataset, spec: KernelSpec, subset: Optional[Sequence[int]] = None) -> Dictionary:
    X = as_features(dataset)
    if subset is None:
        idx = np.arange(X.shape[0])
    else:
        idx = np.asarray(list(subset), dtype=int)
        if idx.size == 0:
            raise ValueError("empty dictionary subset")
        if idx.min() < 0 or idx.max() >= X.shape[0]:
            raise IndexError("dictionary subset index out of range")
    return Dictionary(spec, X[idx], idx)
