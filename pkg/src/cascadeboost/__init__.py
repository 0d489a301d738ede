"""Asymmetric totally-corrective boosting (FisherBoost, LACBoost) and multi-exit cascades."""

__version__ = "0.1.0"

from .boosters import (BoosterConfig, ColumnGeneration, StrongClassifier, adaboost_train,
                       find_offset, lac_lda_postprocess, load_model, postprocess, save_model,
                       train)
from .cascade import (CascadeConfig, CascadeModel, NodeTargets, compose_rates,
                      evaluate_cascade_roc, evaluate_node, load_cascade, save_cascade,
                      train_cascade)
from .data import Dataset, build_margin_matrix, build_q_matrix, quadratic_form
from .simplex_qp import EGConfig, QPSolution, SimplexQP, eg_solve, reference_solve
from .weak import DecisionStump, WeakLearnerPool

__all__ = [
    "BoosterConfig", "CascadeConfig", "CascadeModel", "ColumnGeneration", "Dataset", "DecisionStump",
    "EGConfig", "NodeTargets", "QPSolution", "SimplexQP", "StrongClassifier",
    "adaboost_train", "build_margin_matrix", "build_q_matrix", "compose_rates", "eg_solve",
    "evaluate_cascade_roc", "evaluate_node", "find_offset", "lac_lda_postprocess",
    "load_cascade", "load_model", "postprocess", "quadratic_form", "reference_solve",
    "save_cascade", "save_model", "train", "train_cascade", "WeakLearnerPool",
]
