"""Sparse matrices with fixed patterns, a direct solver and its adjoint.

Matrices are ``scipy.sparse.csr_matrix`` objects in canonical form (sorted,
unique column indices per row).  Adjoints of a matrix are plain arrays
aligned with ``A.data``: only pattern entries carry sensitivity.
"""
from __future__ import annotations

import warnings

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, SingularMatrixError, SolverFailure
from .graph import Operator

DENSE_LIMIT = 500


class SparsePattern:
    """CSR pattern built once from triplet coordinates.

    ``assemble(vals)`` sums duplicate triplets into the pattern slots;
    ``gather(data_bar)`` is its adjoint.
    """

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        nr, nc = shape
        if rows.shape != cols.shape:
            raise InvalidArgumentError("row and column index arrays differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= nr or cols.min() < 0 or cols.max() >= nc):
            raise InvalidArgumentError(f"triplet index out of range for shape {shape}")
        key = rows * nc + cols
        uniq, inverse = np.unique(key, return_inverse=True)
        self.shape = (int(nr), int(nc))
        self.scatter = inverse.ravel()
        self.indices = (uniq % nc).astype(np.int32)
        self.row_of_slot = uniq // nc
        self.indptr = np.zeros(nr + 1, dtype=np.int32)
        np.cumsum(np.bincount(self.row_of_slot, minlength=nr), out=self.indptr[1:])
        self.nnz = len(uniq)

    @property
    def num_triplets(self) -> int:
        return len(self.scatter)

    def assemble(self, vals) -> sp.csr_matrix:
        vals = np.asarray(vals, dtype=float).ravel()
        if vals.shape != self.scatter.shape:
            raise InvalidArgumentError(
                f"expected {self.num_triplets} triplet values, got {vals.size}")
        data = np.bincount(self.scatter, weights=vals, minlength=self.nnz)
        return self.from_data(data)

    def from_data(self, data) -> sp.csr_matrix:
        A = sp.csr_matrix((np.asarray(data, dtype=float), self.indices.copy(), self.indptr.copy()),
                          shape=self.shape)
        A.has_sorted_indices = True
        return A

    def gather(self, data_bar) -> np.ndarray:
        return np.asarray(data_bar)[self.scatter]


def assemble_from_triplets(rows, cols, vals, shape) -> sp.csr_matrix:
    return SparsePattern(rows, cols, shape).assemble(vals)


def row_indices(A: sp.csr_matrix) -> np.ndarray:
    """Row index of every stored entry of ``A``."""
    return np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))


def matvec(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (A.shape[1],):
        raise InvalidArgumentError(f"cannot multiply {A.shape} matrix by vector of shape {x.shape}")
    return A @ x


def transpose_matvec(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (A.shape[0],):
        raise InvalidArgumentError(f"cannot multiply transpose of {A.shape} matrix by {x.shape}")
    return A.T @ x


class Factorization:
    """LU factors of a square matrix, usable for ``A x = b`` and ``A^T x = b``.

    Below ``DENSE_LIMIT`` rows LAPACK's partially pivoted ``getrf`` is used,
    which lets us name the offending pivot on failure; larger systems go
    through SuperLU.
    """

    def __init__(self, A):
        if A.shape[0] != A.shape[1]:
            raise InvalidArgumentError(f"matrix must be square, got {A.shape}")
        n = A.shape[0]
        self.shape = A.shape
        if sp.issparse(A):
            data = A.data
        else:
            data = np.asarray(A)
        if not np.all(np.isfinite(data)):
            raise SolverFailure("matrix has non-finite entries")
        if n < DENSE_LIMIT:
            dense = A.toarray() if sp.issparse(A) else np.array(A, dtype=float)
            scale = np.abs(dense).max() if dense.size else 0.0
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(dense, check_finite=False)
            diag = np.abs(np.diag(lu))
            tiny = np.flatnonzero(diag <= n * np.finfo(float).eps * scale)
            if scale == 0.0 or tiny.size:
                raise SingularMatrixError(int(tiny[0]) if tiny.size else 0)
            self._dense = (lu, piv)
            self._sparse = None
        else:
            try:
                self._sparse = spla.splu(sp.csc_matrix(A))
            except RuntimeError as exc:
                raise SingularMatrixError(message=f"singular matrix: {exc}") from None
            self._dense = None

    @property
    def dense(self) -> bool:
        return self._dense is not None

    def solve(self, b, transpose: bool = False) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise InvalidArgumentError(f"right-hand side has {b.shape[0]} rows, expected {self.shape[0]}")
        if self._dense is not None:
            x = scipy.linalg.lu_solve(self._dense, b, trans=1 if transpose else 0,
                                      check_finite=False)
        else:
            x = self._sparse.solve(b, trans="T" if transpose else "N")
        if not np.all(np.isfinite(x)):
            raise SolverFailure("linear solve produced non-finite values")
        return x


def factorize(A) -> Factorization:
    return Factorization(A)


def solve(A, b, factorization: Factorization | None = None, return_factorization: bool = False):
    if A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"matrix must be square, got {A.shape}")
    fac = factorization if factorization is not None else Factorization(A)
    u = fac.solve(b)
    return (u, fac) if return_factorization else u


def solve_vjp(A, u, ubar, factorization: Factorization | None = None):
    """Adjoint of ``u = A^{-1} b``.

    Returns ``(Abar, bbar)`` where ``bbar`` solves ``A^T bbar = ubar`` and
    ``Abar = -bbar u^T`` restricted to the pattern of ``A`` (aligned with
    ``A.data``).
    """
    fac = factorization if factorization is not None else Factorization(A)
    ubar = np.asarray(ubar, dtype=float)
    if not np.any(ubar):
        return np.zeros(A.nnz), np.zeros(A.shape[0])
    lam = fac.solve(ubar, transpose=True)
    Abar = -lam[row_indices(A)] * np.asarray(u)[A.indices]
    return Abar, lam


def write_matrix_market(path, A) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A))


def _solve_fwd(A, b):
    u, fac = solve(A, b, return_factorization=True)
    return u, (A, u, fac)


def _solve_bwd(ctx, ubar):
    A, u, fac = ctx
    return solve_vjp(A, u, ubar, fac)


SOLVE = Operator("solve", _solve_fwd, _solve_bwd)
