"""From-scratch SVM and random forest baselines over feature vectors."""
from .forest import DecisionTree, RfModel, best_split, fit_tree, gini, oob_error, rf_score, rf_train
from .svm import SvmModel, default_gamma, dual_objective, kernel_matrix, svm_score, svm_train
from .validation import cv_rf, kfold, select_svm

__all__ = [
    "DecisionTree", "RfModel", "best_split", "fit_tree", "gini", "oob_error", "rf_score",
    "rf_train", "SvmModel", "default_gamma", "dual_objective", "kernel_matrix", "svm_score",
    "svm_train", "cv_rf", "kfold", "select_svm",
]
