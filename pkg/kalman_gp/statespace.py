"""
Joint state-space model over a finite location set.

The latent state stacks one copy of the temporal realization per location, so
the dynamics are I_M (x) F and the output map is K_s^{1/2} (I_M (x) H). The
Kronecker structure is kept implicit: only the r x r transition and
process-noise blocks are ever computed, and they are cached per time step.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from scipy.spatial.distance import pdist

from kalman_gp.errors import DuplicateLocationError, InputError
from kalman_gp.kernel import SpatialKernel
from kalman_gp.numerics import as_points, jittered_cholesky, symmetrize
from kalman_gp.spectral import TemporalRealization

LOGGER = logging.getLogger(__name__)

Array = NDArray[np.float64]
NoiseLike = Union[float, Sequence[float], Array]

# Steps are rounded to this many significant digits before they key the transition cache
STEP_DIGITS = 12
MAX_CACHED_STEPS = 512


class RootMethod(str, Enum):
    """How the square root of the spatial Gram matrix is formed."""

    SYMMETRIC = "symmetric"
    CHOLESKY = "cholesky"


@dataclass(frozen=True, eq=False)
class LocationSet:
    """
    Ordered finite set of spatial locations with its sampled kernel matrix.

    ``gram`` is the effective matrix used everywhere downstream, including any
    diagonal jitter that was needed to factorize it.
    """

    points: Array
    kernel: SpatialKernel
    gram: Array
    root: Array
    cholesky: tuple[Array, bool]
    jitter: float = 0.0
    method: RootMethod = RootMethod.SYMMETRIC

    @property
    def size(self) -> int:
        """Number of locations M."""
        return int(self.points.shape[0])

    @property
    def dimension(self) -> int:
        """Dimension of each location vector."""
        return int(self.points.shape[1])

    def index_of(self, point: ArrayLike) -> Optional[int]:
        """Index of an exactly coincident location, if any."""
        target = np.asarray(point, dtype=float).reshape(-1)
        if target.size != self.dimension:
            raise InputError(
                f"Location dimension mismatch: {target.size} vs {self.dimension}"
            )
        matches = np.flatnonzero(np.all(self.points == target, axis=1))
        return int(matches[0]) if matches.size else None

    def cross(self, others: ArrayLike) -> Array:
        """K_s(others, X), shape (P, M)."""
        return self.kernel.matrix(as_points(others, self.dimension), self.points)

    def solve(self, rhs: ArrayLike) -> Array:
        """Solve gram @ X = rhs with the stored Cholesky factor."""
        return linalg.cho_solve(self.cholesky, np.asarray(rhs, dtype=float))

    def with_point(self, point: ArrayLike) -> "LocationSet":
        """New set with ``point`` appended last."""
        extra = np.asarray(point, dtype=float).reshape(1, -1)
        return build_location_set(
            np.vstack([self.points, extra]), self.kernel, method=self.method
        )

    def without(self, index: int) -> "LocationSet":
        """New set with the location at ``index`` removed."""
        if not 0 <= index < self.size:
            raise InputError(f"Location index {index} out of range for {self.size} locations")
        if self.size <= 1:
            raise InputError("Cannot remove the last remaining location")
        return build_location_set(
            np.delete(self.points, index, axis=0), self.kernel, method=self.method
        )


def build_location_set(
    locations: ArrayLike,
    spatial_kernel: SpatialKernel,
    method: RootMethod = RootMethod.SYMMETRIC,
) -> LocationSet:
    """
    Sample the spatial kernel on a location set and factorize it.

    Args:
        locations: Array of shape (M, d), or a 1-D array of scalar locations
        spatial_kernel: Spatial kernel K_s
        method: Symmetric (eigendecomposition) or Cholesky square root

    Returns:
        The location set with K_s, its square root and its Cholesky factor

    Raises:
        InputError: For an empty set or non-finite coordinates
        DuplicateLocationError: If two locations coincide
        ConditioningError: If the Gram matrix cannot be factorized
    """
    points = as_points(locations)
    if points.shape[0] == 0:
        raise InputError("A location set needs at least one location")
    if not np.all(np.isfinite(points)):
        raise InputError("Location coordinates must be finite")
    if points.shape[0] > 1 and float(np.min(pdist(points))) == 0.0:
        raise DuplicateLocationError("Location set contains coincident locations")

    raw = symmetrize(spatial_kernel.matrix(points, points))
    cholesky, jitter = jittered_cholesky(raw, what="spatial Gram matrix")
    gram = raw + jitter * np.eye(points.shape[0])

    if method is RootMethod.CHOLESKY:
        root = np.tril(cholesky[0])
    else:
        eigenvalues, eigenvectors = np.linalg.eigh(gram)
        root = symmetrize(
            (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T
        )
    return LocationSet(
        points=points,
        kernel=spatial_kernel,
        gram=gram,
        root=root,
        cholesky=cholesky,
        jitter=jitter,
        method=method,
    )


def discretize_block(F: Array, G: Array, step: float) -> tuple[Array, Array]:
    """
    Exact zero-order discretization of one temporal block.

    Uses the augmented matrix exponential of [[-F, G G^T], [0, F^T]] * step,
    whose blocks give A = exp(F step) and A^{-1} Q_bar.

    Returns:
        A tuple of (A, Q_bar) for the given step
    """
    states = F.shape[0]
    block = np.block([[-F, G @ G.T], [np.zeros((states, states)), F.T]])
    phi = linalg.expm(block * step)
    transition = phi[states:, states:].T
    process_noise = transition @ phi[:states, states:]
    return transition, symmetrize(process_noise)


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """
    Discrete-time model for one step, keeping only the repeated blocks.

    ``A`` and ``Q`` materialize the Kronecker products on demand.
    """

    step: float
    count: int
    transition: Array
    process_noise: Array
    active: tuple[int, ...]
    C: Array
    R: Array

    @property
    def A(self) -> Array:
        return np.kron(np.eye(self.count), self.transition)

    @property
    def Q(self) -> Array:
        return np.kron(np.eye(self.count), self.process_noise)


class StateSpaceModel:
    """
    Temporal realization replicated over a location set.

    Transition blocks are cached by step length; models derived with
    ``with_locations`` share the cache since the blocks do not depend on M.
    """

    def __init__(
        self,
        realization: TemporalRealization,
        locations: LocationSet,
        _cache: Optional[dict[float, tuple[Array, Array]]] = None,
    ) -> None:
        self.realization = realization
        self.locations = locations
        self._cache: dict[float, tuple[Array, Array]] = {} if _cache is None else _cache

    @property
    def order(self) -> int:
        """Temporal state dimension r."""
        return self.realization.order

    @property
    def size(self) -> int:
        """Number of locations M."""
        return self.locations.size

    @property
    def state_dimension(self) -> int:
        """rM."""
        return self.order * self.size

    def with_locations(self, locations: LocationSet) -> "StateSpaceModel":
        """Same dynamics over a different location set."""
        return StateSpaceModel(self.realization, locations, _cache=self._cache)

    def transition_blocks(self, step: float) -> tuple[Array, Array]:
        """
        Cached (A, Q_bar) blocks for a positive step.

        Raises:
            InputError: If the step is not positive
        """
        if not step > 0.0:
            raise InputError(f"Discretization step must be positive, got {step}")
        key = float(f"{step:.{STEP_DIGITS}g}")
        blocks = self._cache.get(key)
        if blocks is None:
            if len(self._cache) >= MAX_CACHED_STEPS:
                self._cache.clear()
            blocks = discretize_block(self.realization.F, self.realization.G, step)
            self._cache[key] = blocks
        return blocks

    def output_matrix(self, active: Optional[Sequence[int]] = None) -> Array:
        """C = I_k K_s^{1/2} (I_M (x) H); all locations when ``active`` is None."""
        full = np.kron(self.locations.root, self.realization.H)
        if active is None:
            return full
        return full[list(check_active(active, self.size))]


def check_active(active: Sequence[int], count: int) -> tuple[int, ...]:
    """
    Validate an active index selection and return it in ascending order.

    Raises:
        InputError: For repeated or out-of-range indices
    """
    indices = [int(i) for i in active]
    if len(set(indices)) != len(indices):
        raise InputError(f"Active indices must be unique, got {indices}")
    if any(i < 0 or i >= count for i in indices):
        raise InputError(f"Active indices {indices} out of range for {count} locations")
    return tuple(sorted(indices))


def noise_matrix(noise: NoiseLike, count: int) -> Array:
    """
    Diagonal measurement-noise covariance from a scalar or per-measurement variances.

    Raises:
        InputError: For nonpositive, non-finite or mis-sized variances
    """
    variances = np.asarray(noise, dtype=float).reshape(-1)
    if variances.size == 1:
        variances = np.full(count, float(variances[0]))
    if variances.size != count:
        raise InputError(f"Expected {count} noise variances, got {variances.size}")
    if not np.all(np.isfinite(variances)) or np.any(variances <= 0.0):
        raise InputError("Noise variances must be positive and finite")
    return np.diag(variances)


def discretize(
    realization: TemporalRealization,
    location_set: LocationSet,
    step: float,
    active: Optional[Sequence[int]] = None,
    noise: NoiseLike = 1.0,
) -> DiscreteModel:
    """
    Exact discrete-time model for one step over a location set.

    Args:
        realization: Temporal realization (F, G, H, Sigma0)
        location_set: Locations and spatial square root
        step: Time step T_k > 0
        active: Indices measured at the end of the step (all when None)
        noise: Scalar variance or one variance per active index

    Raises:
        InputError: For a nonpositive step or invalid selection/noise
    """
    model = StateSpaceModel(realization, location_set)
    transition, process_noise = model.transition_blocks(step)
    selection = (
        tuple(range(location_set.size))
        if active is None
        else check_active(active, location_set.size)
    )
    return DiscreteModel(
        step=float(step),
        count=location_set.size,
        transition=transition,
        process_noise=process_noise,
        active=selection,
        C=model.output_matrix(selection),
        R=noise_matrix(noise, len(selection)),
    )


def stationary_prior(
    realization: TemporalRealization, location_set: LocationSet
) -> tuple[Array, Array]:
    """Stationary state prior: zero mean and covariance I_M (x) Sigma0."""
    count = location_set.size
    mean = np.zeros(realization.order * count)
    covariance = np.kron(np.eye(count), realization.stationary_covariance)
    return mean, covariance


def output_matrix(
    realization: TemporalRealization,
    location_set: LocationSet,
    active: Optional[Sequence[int]] = None,
) -> Array:
    """C for a selection of locations (all when None)."""
    return StateSpaceModel(realization, location_set).output_matrix(active)


def simulate(
    model: StateSpaceModel,
    times: ArrayLike,
    rng: np.random.Generator,
) -> Array:
    """
    Exact draw of the output process on the location set at increasing times.

    Starts from the stationary prior and propagates with the discretized
    dynamics, so the draw has covariance h(t - t') K_s exactly on the grid.

    Returns:
        Array of shape (len(times), M)
    """
    stamps = np.asarray(times, dtype=float).reshape(-1)
    if stamps.size and np.any(np.diff(stamps) <= 0.0):
        raise InputError("Simulation times must be strictly increasing")
    count, order = model.size, model.order
    sigma0 = model.realization.stationary_covariance
    state = rng.multivariate_normal(np.zeros(order), sigma0, size=count, method="eigh")
    C = model.output_matrix()
    outputs = np.empty((stamps.size, count))
    for k, t in enumerate(stamps):
        if k > 0:
            transition, process_noise = model.transition_blocks(t - stamps[k - 1])
            noise = rng.multivariate_normal(
                np.zeros(order), process_noise, size=count, method="eigh"
            )
            state = state @ transition.T + noise
        outputs[k] = C @ state.reshape(-1)
    return outputs
