"""
Small linear-algebra helpers shared by the numerical modules.
"""

import logging
from collections.abc import Sequence
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from kalman_gp.errors import ConditioningError

LOGGER = logging.getLogger(__name__)

# Relative jitter ladder (multiplied by trace/M) tried when a factorization fails
JITTER_LADDER: tuple[float, ...] = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

SYMMETRY_TOL = 1e-12
PSD_FLOOR = 1e-9

Array = NDArray[np.float64]


def symmetrize(matrix: Array) -> Array:
    """Return the symmetric part of a square matrix."""
    return 0.5 * (matrix + matrix.T)


def as_points(points: ArrayLike, dimension: Optional[int] = None) -> Array:
    """
    Coerce location data to a 2-D float array of shape (count, dimension).

    A 1-D input is read as a list of scalar locations.
    """
    array = np.asarray(points, dtype=float)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(-1, 1) if dimension in (None, 1) else array.reshape(1, -1)
    if array.ndim != 2:
        raise ValueError(f"Locations must be a 2-D array, got shape {array.shape}")
    return array


def spectral_abscissa(matrix: Array) -> float:
    """Largest real part among the eigenvalues of a square matrix."""
    if matrix.size == 0:
        return float("-inf")
    return float(np.max(np.linalg.eigvals(matrix).real))


def min_eigenvalue(matrix: Array) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(symmetrize(matrix))[0])


def audit_covariance(
    matrix: Array, symmetry_tol: float = SYMMETRY_TOL, psd_floor: float = PSD_FLOOR
) -> bool:
    """
    Check that a covariance is symmetric and positive semidefinite.

    Symmetry is measured relative to the largest absolute entry; the eigenvalue
    floor is ``-psd_floor * trace``.

    Returns:
        True if both checks pass
    """
    if matrix.size == 0:
        return True
    scale = max(float(np.max(np.abs(matrix))), 1.0)
    if float(np.max(np.abs(matrix - matrix.T))) > symmetry_tol * scale:
        return False
    trace = float(np.trace(matrix))
    return min_eigenvalue(matrix) >= -psd_floor * max(abs(trace), 1.0)


def jittered_cholesky(
    matrix: Array, ladder: Sequence[float] = JITTER_LADDER, what: str = "matrix"
) -> tuple[tuple[Array, bool], float]:
    """
    Cholesky-factorize a symmetric matrix, adding diagonal jitter on failure.

    Args:
        matrix: Symmetric matrix to factorize
        ladder: Relative jitter levels, each multiplied by trace/size
        what: Name used in log and error messages

    Returns:
        A tuple of (cho_factor result, absolute jitter that was added)

    Raises:
        ConditioningError: If every jitter level fails
    """
    size = matrix.shape[0]
    scale = float(np.trace(matrix)) / max(size, 1)
    identity = np.eye(size)
    for level in ladder:
        jitter = level * scale
        try:
            factor = linalg.cho_factor(matrix + jitter * identity, lower=True)
        except linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(factor[0])):
            continue
        if jitter > 0.0:
            LOGGER.warning("Added jitter %.3g to the diagonal of the %s", jitter, what)
        return factor, jitter
    raise ConditioningError(
        f"Cholesky factorization of the {what} failed after jitter up to "
        f"{ladder[-1]:.1e}*trace/{size}"
    )


def cholesky_or_raise(matrix: Array, what: str) -> tuple[Array, bool]:
    """
    Cholesky-factorize a matrix that must be positive definite, without jitter.

    Raises:
        ConditioningError: If the matrix is not numerically positive definite
    """
    try:
        factor = linalg.cho_factor(symmetrize(matrix), lower=True)
    except linalg.LinAlgError as e:
        raise ConditioningError(f"The {what} is not positive definite") from e
    if not np.all(np.isfinite(factor[0])):
        raise ConditioningError(f"The {what} has non-finite entries")
    return factor


def cholesky_logdet(factor: tuple[Array, bool]) -> float:
    """Log-determinant from a ``cho_factor`` result."""
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
