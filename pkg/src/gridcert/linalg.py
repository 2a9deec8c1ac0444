"""Dense real linear-algebra kernels.

Thin wrappers over LAPACK (through numpy/scipy) that add the checks the rest
of the package relies on: a semidefinite Cholesky that tolerates zero pivots,
an eigensolver whose output is verified, and a linear solve that reports
singularity instead of returning garbage.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

__all__ = [
    "LinalgError",
    "NotPSD",
    "Singular",
    "EigenError",
    "as_sym",
    "cholesky_psd",
    "is_psd",
    "eig_sym",
    "solve_linear",
]

SINGULAR_PIVOT_TOL = 1e-13


class LinalgError(ArithmeticError):
    """Base class for kernel failures."""


class NotPSD(LinalgError):
    def __init__(self, index: int, pivot: float):
        super().__init__(f"matrix is not positive semidefinite: pivot {index} = {pivot:.3e}")
        self.index = index
        self.pivot = pivot


class Singular(LinalgError):
    def __init__(self, index: int):
        super().__init__(f"matrix is singular to working precision at pivot {index}")
        self.index = index


class EigenError(LinalgError):
    pass


def as_sym(m) -> np.ndarray:
    """Return a float copy of ``m`` with exactly symmetric storage.

    ``(a + a.T) / 2`` is bitwise symmetric because floating-point addition
    commutes, so downstream code may rely on ``s[i, j] == s[j, i]``.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def cholesky_psd(m, tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m`` for a semidefinite ``m``.

    Pivots in ``[-tol*max_diag, tol*max_diag]`` are treated as exact zeros
    (their column of ``L`` is left empty).  A pivot below ``-tol*max_diag``
    raises :class:`NotPSD` carrying the failing index.
    """
    a = np.asarray(m, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(float(np.max(np.diag(a))), 0.0) if n else 0.0
    thresh = tol * scale

    # Positive definite matrices take the LAPACK path.
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass

    work = a.copy()
    L = np.zeros_like(work)
    for j in range(n):
        d = work[j, j]
        if d < -thresh or (scale == 0.0 and d < 0.0):
            raise NotPSD(j, float(d))
        if d <= thresh:
            # A zero pivot needs a zero column below it; anything else means
            # an off-diagonal entry that no PSD matrix can carry.
            col = work[j + 1:, j]
            if col.size and np.max(np.abs(col)) > np.sqrt(max(thresh, 0.0) * scale) + thresh:
                raise NotPSD(j, float(d))
            continue
        r = np.sqrt(d)
        L[j, j] = r
        L[j + 1:, j] = work[j + 1:, j] / r
        work[j + 1:, j + 1:] -= np.outer(L[j + 1:, j], L[j + 1:, j])
    return L


def is_psd(m, tol: float = 1e-12) -> bool:
    try:
        cholesky_psd(m, tol)
    except NotPSD:
        return False
    return True


def eig_sym(m) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix.

    The decomposition is checked before it is returned; a residual above
    ``1e-9 * ||m||`` raises :class:`EigenError` rather than passing silently.
    """
    a = as_sym(m)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EigenError(f"symmetric eigensolver did not converge: {exc}") from exc
    norm = max(np.linalg.norm(a, 2), 1.0) if a.size else 1.0
    resid = np.linalg.norm(a @ v - v * w, 2)
    if not np.isfinite(resid) or resid > 1e-9 * norm:
        raise EigenError(f"eigen-decomposition residual {resid:.3e} exceeds 1e-9*||m||")
    return w, v


def solve_linear(a, b) -> np.ndarray:
    """Solve ``a x = b`` by LU with partial pivoting.

    Raises :class:`Singular` when a pivot falls below ``1e-13`` times the
    largest entry of ``a``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if b.shape[0] != n:
        raise ValueError(f"right-hand side has {b.shape[0]} rows, matrix has {n}")
    if n == 0:
        return b.copy()
    with warnings.catch_warnings():
        # Exact zero pivots are reported below as Singular.
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    scale = np.max(np.abs(a))
    pivots = np.abs(np.diag(lu))
    bad = np.flatnonzero(pivots <= SINGULAR_PIVOT_TOL * scale)
    if scale == 0.0 or bad.size:
        raise Singular(int(bad[0]) if bad.size else 0)
    return scipy.linalg.lu_solve((lu, piv), b)
