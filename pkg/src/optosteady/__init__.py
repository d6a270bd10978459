"""Sparse iterative steady states of driven, damped optomechanical systems."""

from .fock import TruncationConfig
from .liouvillian import ConstrainedLiouvillian, ModelParams, build_system
from .precond import FactorizationBreakdown, IluConfig, IluFactors, NumericError, ilutp
from .reorder import rcm, reorder_system
from .solve import Method, SolverConfig, SolverError, SteadyStateResult, solve_system, steadystate
from .sparse import ComplexSparseMatrix, Permutation, SparseError, structure_metrics

__all__ = [
    "ComplexSparseMatrix",
    "ConstrainedLiouvillian",
    "FactorizationBreakdown",
    "IluConfig",
    "IluFactors",
    "Method",
    "ModelParams",
    "NumericError",
    "Permutation",
    "SolverConfig",
    "SolverError",
    "SparseError",
    "SteadyStateResult",
    "TruncationConfig",
    "build_system",
    "ilutp",
    "rcm",
    "reorder_system",
    "solve_system",
    "steadystate",
    "structure_metrics",
]
