"""Canonical polyadic decompositions of dense tensors."""

from .core import (KruskalTensor, deterministic, fold, inner, khatri_rao, kronecker,
                   kruskal_to_full, multilinear_multiply, norm, unfold)
from .mlsvd import SvdMethod, compress, truncation_errors
from .solver import SolverOptions, SolveStats, als, cpd, dgn, relative_error
from .tt import cpd_via_tt, tt_svd

__version__ = "0.1.0"

__all__ = [
    "KruskalTensor", "deterministic", "fold", "inner", "khatri_rao", "kronecker",
    "kruskal_to_full", "multilinear_multiply", "norm", "unfold", "SvdMethod",
    "compress", "truncation_errors", "SolverOptions", "SolveStats", "als", "cpd",
    "dgn", "relative_error", "cpd_via_tt", "tt_svd",
]
