from .base import MajorityModel, MissingPlan, fit_majority, handle_missing, predict, predict_row
from .forest import DecisionTree, ForestModel, fit_forest
from .io import load_model, save_model
from .mlp import MlpModel, fit_mlp
from .svm import BinarySvm, Kernel, MultiSvm, fit_svm_multiclass, smo_solve_binary

__all__ = [
    "BinarySvm",
    "DecisionTree",
    "ForestModel",
    "Kernel",
    "MajorityModel",
    "MissingPlan",
    "MlpModel",
    "MultiSvm",
    "fit_forest",
    "fit_majority",
    "fit_mlp",
    "fit_svm_multiclass",
    "handle_missing",
    "load_model",
    "predict",
    "predict_row",
    "save_model",
    "smo_solve_binary",
]
