"""Symmetric positive-definite helpers.

Every inversion of a covariance, scale or precision matrix in the package goes
through :func:`safe_cholesky`, which retries with a growing diagonal jitter
before giving up.
"""

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import SingularMatrixError

JITTER_START = 1e-10
JITTER_MAX = 1e-6


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def safe_cholesky(a):
    """Lower Cholesky factor of ``a``, with a jitter ladder on failure.

    Jitter is relative to ``trace(a)/d``, starting at 1e-10 and growing by 10x
    up to 1e-6. Raises :class:`SingularMatrixError` past the last rung.
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    d = a.shape[0]
    scale = np.trace(a) / d
    if not np.isfinite(scale) or scale <= 0:
        raise SingularMatrixError("matrix has non-positive trace")
    eye = np.eye(d)
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(a + jitter * scale * eye)
        except np.linalg.LinAlgError:
            jitter *= 10
    raise SingularMatrixError("matrix is not positive definite within jitter 1e-6")


def is_spd(a):
    try:
        np.linalg.cholesky(np.asarray(a, dtype=float))
    except np.linalg.LinAlgError:
        return False
    return True


def chol_logdet(chol):
    return 2.0 * np.sum(np.log(np.diag(chol)))


def chol_inv(chol):
    """Inverse of ``L Lᵀ`` from its lower factor."""
    return cho_solve((chol, True), np.eye(chol.shape[0]))


def spd_inv(a):
    return symmetrize(chol_inv(safe_cholesky(a)))


def spd_solve(a, b):
    return cho_solve((safe_cholesky(a), True), b)


def mahalanobis_sq(chol, diff):
    """``diffᵀ (L Lᵀ)⁻¹ diff`` for one vector or a stack of row vectors."""
    diff = np.asarray(diff, dtype=float)
    if diff.ndim == 1:
        y = solve_triangular(chol, diff, lower=True)
        return float(y @ y)
    y = solve_triangular(chol, diff.T, lower=True)
    return np.sum(y * y, axis=0)
