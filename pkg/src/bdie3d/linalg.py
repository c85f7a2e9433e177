"""Dense direct solve, iterative fallback and conditioning diagnostics.

Matrices are plain row-major numpy float arrays.  Factorizations are
delegated to LAPACK through scipy; this module adds the numerical-
singularity contract, the iteration accounting and the 1-norm condition
estimate used by the refinement studies.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import SingularMatrixError

_PIVOT_TOL = 1e-14


def _check_square(A: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if b is not None and np.asarray(b).shape != (A.shape[0],):
        raise ValueError("right-hand side length does not match the matrix")
    return A


def lu_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve Ax = b by LU with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    1e-14 times the infinity norm of A.
    """
    A = _check_square(A, b)
    norm = np.abs(A).sum(axis=1).max() if A.size else 0.0
    lu, piv = sla.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if norm == 0.0 or np.any(pivots < _PIVOT_TOL * norm):
        raise SingularMatrixError(
            f"numerically singular pivot (min {pivots.min() if len(pivots) else 0:.3e}, "
            f"threshold {_PIVOT_TOL * norm:.3e})"
        )
    return sla.lu_solve((lu, piv), np.asarray(b, dtype=float), check_finite=False)


class GmresResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool


def gmres_solve(A: np.ndarray, b: np.ndarray, tol: float = 1e-10, max_iter: int = 500) -> GmresResult:
    """GMRES with diagonal scaling; reports non-convergence instead of raising."""
    A = _check_square(A, b)
    b = np.asarray(b, dtype=float)
    if not b.any():
        return GmresResult(np.zeros_like(b), 0, True)
    diag = np.diag(A).copy()
    diag[np.abs(diag) < 1e-300] = 1.0
    M = spla.LinearOperator(A.shape, matvec=lambda v: v / diag)
    count = {"n": 0}

    def cb(_):
        count["n"] += 1

    x, info = spla.gmres(
        A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M, callback=cb, callback_type="pr_norm"
    )
    residual = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    return GmresResult(x, count["n"], info == 0 and residual <= 10 * tol)


def condition_estimate(A: np.ndarray) -> float:
    """1-norm condition estimate from the LU factorization (LAPACK gecon).

    Returns infinity for numerically singular matrices.
    """
    A = _check_square(A)
    if A.shape[0] == 0:
        return 1.0
    anorm = np.abs(A).sum(axis=0).max()
    if anorm == 0.0:
        return np.inf
    lu, piv = sla.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if np.any(pivots == 0.0):
        return np.inf
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, _ = gecon(lu, anorm, norm="1")
    if rcond <= 0.0:
        return np.inf
    return 1.0 / float(rcond)
