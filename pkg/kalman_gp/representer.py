"""
Extension of the on-grid filter output to arbitrary spatial points.

Off-grid estimates are fixed linear combinations of the on-grid estimate with
weights K_s(x*, X) K_s(X, X)^{-1}; the posterior variance and the joint
covariance with the grid follow from the same weights.
"""

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from kalman_gp.errors import InputError
from kalman_gp.numerics import as_points, symmetrize
from kalman_gp.statespace import LocationSet

Array = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class SpatialQuery:
    """
    Query points with their precomputed cross-kernel rows and weights.

    Bound to one location set; call ``for_locations`` after the set changes.
    """

    points: Array
    locations: LocationSet
    cross: Array
    weights: Array
    prior_variance: Array
    output_variance: float

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def for_locations(self, locations: LocationSet) -> "SpatialQuery":
        """This query rebuilt against another location set (self if unchanged)."""
        if locations is self.locations:
            return self
        return build_query(self.points, locations, self.output_variance)


def build_query(
    points: ArrayLike, locations: LocationSet, output_variance: float
) -> SpatialQuery:
    """
    Precompute weights for a set of spatial query points.

    Args:
        points: Query locations, shape (P, d)
        locations: The filter's location set
        output_variance: h(0) of the temporal realization

    Raises:
        InputError: If the query dimension differs from the location set's
    """
    query = as_points(points, locations.dimension)
    if query.shape[1] != locations.dimension:
        raise InputError(
            f"Query dimension {query.shape[1]} does not match locations ({locations.dimension})"
        )
    cross = locations.cross(query)
    weights = locations.solve(cross.T).T
    prior = np.diag(locations.kernel.matrix(query, query)).copy()
    return SpatialQuery(
        points=query,
        locations=locations,
        cross=cross,
        weights=weights,
        prior_variance=prior,
        output_variance=float(output_variance),
    )


def extend_estimate(estimate: ArrayLike, query: SpatialQuery) -> Array:
    """Off-grid estimates: weights @ f_hat."""
    return query.weights @ np.asarray(estimate, dtype=float)


def extend_variance(covariance: ArrayLike, query: SpatialQuery) -> Array:
    """
    Off-grid posterior variances.

    With w the query weights, V = h0 K_s(x*, x*) - h0 w . K_s(X, x*) + w Sigma_f w^T,
    clipped at zero.
    """
    sigma_f = np.asarray(covariance, dtype=float)
    h0 = query.output_variance
    explained = np.sum(query.weights * query.cross, axis=1)
    posterior = np.sum((query.weights @ sigma_f) * query.weights, axis=1)
    return np.clip(h0 * (query.prior_variance - explained) + posterior, 0.0, None)


def joint_covariance(covariance: ArrayLike, query: SpatialQuery, index: int = 0) -> Array:
    """
    Joint covariance of the grid outputs and one query point.

    Returns:
        The (M+1, M+1) matrix [[Sigma_f, Sigma_f w^T], [w Sigma_f, V(x*)]]
    """
    if not 0 <= index < query.size:
        raise InputError(f"Query index {index} out of range for {query.size} points")
    sigma_f = np.asarray(covariance, dtype=float)
    w = query.weights[index]
    column = sigma_f @ w
    single = SpatialQuery(
        points=query.points[index : index + 1],
        locations=query.locations,
        cross=query.cross[index : index + 1],
        weights=query.weights[index : index + 1],
        prior_variance=query.prior_variance[index : index + 1],
        output_variance=query.output_variance,
    )
    variance = float(extend_variance(sigma_f, single)[0])
    size = sigma_f.shape[0]
    joint = np.empty((size + 1, size + 1))
    joint[:size, :size] = sigma_f
    joint[:size, size] = column
    joint[size, :size] = column
    joint[size, size] = variance
    return symmetrize(joint)
