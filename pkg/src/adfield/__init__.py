"""Coupling neural-network field surrogates with finite-element solvers for inverse problems.

Gradients flow through a coarse-grained reverse-mode tape whose nodes are
whole solver operations; nonlinear solves are differentiated with the
implicit-function adjoint instead of unrolling Newton iterations.
"""
from .errors import (AdfieldError, ConfigError, InvalidArgumentError, NonphysicalStateError,
                     SingularMatrixError, SolverDivergedError, SolverFailure,
                     UnsupportedOperatorError)

__version__ = "0.1.0"

__all__ = ["AdfieldError", "ConfigError", "InvalidArgumentError", "NonphysicalStateError",
           "SingularMatrixError", "SolverDivergedError", "SolverFailure",
           "UnsupportedOperatorError", "__version__"]
