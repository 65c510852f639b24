"""Cholesky-based helpers for symmetric positive-definite matrices.

All log-determinants and inverses in the package go through this module so
that overflow-safe log-space arithmetic and the jitter-retry policy are
applied uniformly.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError

# Jitter ladder: start at 1e-10 * mean(diag), escalate tenfold up to
# 1e-4 * mean(diag).  Larger jitter signals a modeling problem, so we stop.
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose."""
    return 0.5 * (a + a.T)


def cholesky_spd(a: np.ndarray, jitter: bool = False) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    With ``jitter=True``, rounding-induced near-singularity is repaired by
    adding ``eps * mean(diag) * I`` with ``eps`` escalating from 1e-10 to
    1e-4; beyond that a :class:`NumericalError` is raised.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return a.reshape(a.shape)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        if not jitter:
            raise NumericalError("matrix is not positive definite") from None
    scale = float(np.mean(np.diag(a)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    eps = _JITTER_START
    eye = np.eye(a.shape[0])
    while eps <= _JITTER_MAX:
        try:
            return np.linalg.cholesky(a + eps * scale * eye)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NumericalError(
        "matrix is not positive definite even after jitter up to "
        f"{_JITTER_MAX:g} * mean(diag)"
    )


def spd_logdet(a: np.ndarray, jitter: bool = False) -> float:
    """log-determinant of an SPD matrix via its Cholesky factor.

    Computed as ``2 * sum(log(diag(L)))`` — never from determinant products,
    which overflow for moderately large matrices.
    """
    chol = cholesky_spd(a, jitter=jitter)
    if chol.size == 0:
        return 0.0
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def spd_solve(a: np.ndarray, b: np.ndarray, jitter: bool = False) -> np.ndarray:
    """Solve ``a x = b`` for SPD ``a`` through its Cholesky factor."""
    chol = cholesky_spd(a, jitter=jitter)
    if chol.size == 0:
        return np.zeros_like(np.asarray(b, dtype=float))
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


def spd_inverse(a: np.ndarray, jitter: bool = False) -> np.ndarray:
    """Symmetrized inverse of an SPD matrix."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return a.reshape(a.shape)
    inv = spd_solve(a, np.eye(a.shape[0]), jitter=jitter)
    return symmetrize(inv)


def is_spd(a: np.ndarray) -> bool:
    """True when ``a`` is symmetric and Cholesky succeeds (no jitter)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    if a.size and not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        return False
    try:
        cholesky_spd(a, jitter=False)
        return True
    except NumericalError:
        return False
