"""Adaptive weighted association of gene expression with several correlated phenotypes."""

from .combine import METHODS, afp, afz, bonferroni_select, enumerate_weights, fisher_perm, minp_perm, run_method
from .data import Dataset, PValueMatrix, load_dataset
from .glm import assoc_pvalues, fit_gaussian, fit_poisson
from .permnull import NullStore, build_null

__version__ = "0.1.0"

__all__ = [
    "METHODS", "Dataset", "NullStore", "PValueMatrix", "afp", "afz", "assoc_pvalues",
    "bonferroni_select", "build_null", "enumerate_weights", "fisher_perm", "fit_gaussian",
    "fit_poisson", "load_dataset", "minp_perm", "run_method",
]
