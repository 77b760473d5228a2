"""Sparse preference learning by greedy ranking pursuit."""

from .data import (
    DataPoint,
    PreferenceGraph,
    ScoredDataset,
    UnscoredDataset,
    WeightedLaplacian,
    build_preference_graph,
    laplacian_apply,
    weighted_laplacian_apply,
)
from .kernels import Dictionary, KernelSpec, dictionary_from_dataset, kernel_column, kernel_eval, kernel_matrix
from .metrics import disagreement_error, mean_squared_error, normalized_disagreement, wilcoxon_signed_rank
from .pursuit import (
    FitOptions,
    SparseExpansion,
    backfit,
    evaluate_candidate,
    fit_crrp,
    fit_matching_pursuit,
    fit_pursuit,
    predict,
    select_best,
)
from .multiview import (
    MultiViewFitOptions,
    MultiViewModel,
    ViewSpec,
    coefficient_system,
    fit_semisupervised,
    predict_average,
    split_feature_views,
)
from .baselines import BaselineConfig, DenseExpansion, fit_rankrls, fit_rls, fit_sparse_rankrls
from .persistence import ModelFileError, load_model, save_model

__version__ = "0.1.0"
