"""
Linear algebra helpers shared by the noise models and the Kalman-type filters.
"""

import logging
from typing import Tuple

import numpy as np
from scipy import linalg

from ..core.errors import InvalidCovarianceError, NumericalError


logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
PSD_TOLERANCE = 1e-10


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def psd_factor(covariance: np.ndarray) -> np.ndarray:
    """Return L with L @ L.T == covariance for a symmetric PSD matrix

    Cholesky is tried first; singular but PSD matrices (zero noise, rank
    deficient covariances) fall back to an eigen-decomposition factor.

    Raises:
        InvalidCovarianceError: if the matrix is not symmetric PSD within 1e-10
    """
    covariance = np.asarray(covariance, dtype=float)
    if covariance.ndim != 2 or covariance.shape[0] != covariance.shape[1]:
        raise InvalidCovarianceError(f"covariance must be square, got shape {covariance.shape}")
    if not np.all(np.isfinite(covariance)):
        raise InvalidCovarianceError("covariance has non-finite entries")
    if np.max(np.abs(covariance - covariance.T), initial=0.0) > PSD_TOLERANCE:
        raise InvalidCovarianceError("covariance is not symmetric")
    try:
        return np.linalg.cholesky(covariance)
    except np.linalg.LinAlgError:
        pass

    eigvals, eigvecs = np.linalg.eigh(symmetrize(covariance))
    if eigvals.size and eigvals.min() < -PSD_TOLERANCE:
        raise InvalidCovarianceError(
            f"covariance is not positive semi-definite (min eigenvalue {eigvals.min():.3e})"
        )
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def cholesky_with_jitter(matrix: np.ndarray) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of matrix + jitter * I, escalating jitter 1e-12 -> 1e-6

    Returns:
        (factor, jitter actually used)

    Raises:
        NumericalError: if the matrix is still not positive definite at 1e-6
    """
    matrix = symmetrize(np.asarray(matrix, dtype=float))
    identity = np.eye(matrix.shape[0])
    for jitter in JITTER_LADDER:
        try:
            factor = linalg.cholesky(matrix + jitter * identity, lower=True)
        except linalg.LinAlgError:
            continue
        if jitter > 0.0:
            logger.debug(f"Cholesky needed jitter {jitter:g} on a {matrix.shape[0]}x{matrix.shape[0]} matrix")
        return factor, jitter
    raise NumericalError(
        f"matrix of size {matrix.shape[0]} is not positive definite even with jitter {JITTER_LADDER[-1]:g}"
    )


def solve_psd(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve matrix @ X = rhs for a symmetric PSD matrix using jittered Cholesky"""
    factor, _ = cholesky_with_jitter(matrix)
    return linalg.cho_solve((factor, True), rhs)
