"""
Spatial, temporal and separable space-time kernels.

Spatial kernels are correlation-shaped (K_s(x, x) = amplitude, 1 by default) and
all output variance lives in the temporal scale lambda. The squared-exponential
families keep their historical parameterizations: the spatial one divides the
squared distance by sigma_s, the temporal one divides the squared lag by
sigma_t squared.
"""

from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from kalman_gp.errors import InputError
from kalman_gp.numerics import as_points

Array = NDArray[np.float64]


class SpatialFamily(str, Enum):
    """Supported spatial kernel families."""

    SQUARED_EXPONENTIAL = "squared_exponential"
    EXPONENTIAL = "exponential"


class TemporalFamily(str, Enum):
    """Supported stationary temporal kernel families."""

    EXPONENTIAL = "exponential"
    PERIODIC_EXPONENTIAL = "periodic_exponential"
    SQUARED_EXPONENTIAL = "squared_exponential"


class SpatialKernel(BaseModel):
    """Isotropic spatial kernel K_s(x, x')."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: SpatialFamily = SpatialFamily.SQUARED_EXPONENTIAL
    length_scale: float = Field(gt=0.0)
    amplitude: float = Field(default=1.0, gt=0.0)

    def from_distance(self, distance: ArrayLike) -> Array:
        """Evaluate the kernel as a function of Euclidean distance."""
        d = np.asarray(distance, dtype=float)
        if self.family is SpatialFamily.SQUARED_EXPONENTIAL:
            return self.amplitude * np.exp(-(d**2) / self.length_scale)
        return self.amplitude * np.exp(-d / self.length_scale)

    def matrix(self, points: ArrayLike, others: ArrayLike) -> Array:
        """
        Sampled kernel matrix between two collections of locations.

        Args:
            points: Array of shape (n, d) (a 1-D array is n scalar locations)
            others: Array of shape (m, d)

        Returns:
            The (n, m) matrix with entries K_s(points[i], others[j])

        Raises:
            InputError: If the location dimensions differ
        """
        a = as_points(points)
        b = as_points(others)
        if a.shape[1] != b.shape[1]:
            raise InputError(
                f"Location dimension mismatch: {a.shape[1]} vs {b.shape[1]}"
            )
        return self.from_distance(cdist(a, b))


class TemporalKernel(BaseModel):
    """Stationary temporal kernel h(tau)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: TemporalFamily = TemporalFamily.EXPONENTIAL
    scale: float = Field(default=1.0, ge=0.0)
    decay: float = Field(gt=0.0)
    frequency: float = Field(default=0.0, ge=0.0)

    @property
    def variance(self) -> float:
        """h(0), the marginal output variance."""
        return self.scale

    @property
    def is_rational(self) -> bool:
        """Whether the power spectral density is exactly rational."""
        return self.family is not TemporalFamily.SQUARED_EXPONENTIAL

    @property
    def characteristic_frequency(self) -> float:
        """Angular frequency scale 1/sigma_t used to place frequency grids."""
        return 1.0 / self.decay

    def covariance(self, lag: ArrayLike) -> Array:
        """Evaluate h(tau) elementwise."""
        tau = np.abs(np.asarray(lag, dtype=float))
        if self.family is TemporalFamily.EXPONENTIAL:
            return self.scale * np.exp(-tau / self.decay)
        if self.family is TemporalFamily.PERIODIC_EXPONENTIAL:
            return (
                self.scale
                * np.cos(2.0 * np.pi * self.frequency * tau)
                * np.exp(-tau / self.decay)
            )
        return self.scale * np.exp(-(tau**2) / self.decay**2)

    def psd(self, omega: ArrayLike) -> Array:
        """
        Power spectral density S(omega), the Fourier transform of h.

        The squared-exponential family returns its exact Gaussian-shaped
        spectrum, which is not rational.
        """
        w = np.asarray(omega, dtype=float)
        lam, sigma = self.scale, self.decay
        if self.family is TemporalFamily.EXPONENTIAL:
            return 2.0 * lam * sigma / (1.0 + sigma**2 * w**2)
        if self.family is TemporalFamily.PERIODIC_EXPONENTIAL:
            c = 1.0 / sigma**2 + (2.0 * np.pi * self.frequency) ** 2
            w2 = w**2
            numerator = w2 + c
            denominator = (
                w2**2 + 2.0 * (1.0 / sigma**2 - (2.0 * np.pi * self.frequency) ** 2) * w2 + c**2
            )
            return 2.0 * lam / sigma * numerator / denominator
        return lam * sigma * np.sqrt(np.pi) * np.exp(-(sigma**2) * w**2 / 4.0)


class SeparableKernel(BaseModel):
    """Space-time kernel K(x, x', t, t') = K_s(x, x') h(t - t')."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    spatial: SpatialKernel
    temporal: TemporalKernel

    def evaluate(self, x: ArrayLike, x2: ArrayLike, t: float, t2: float) -> float:
        """Evaluate the kernel at a single pair of space-time points."""
        return eval_spatial(self.spatial, x, x2) * eval_temporal(self.temporal, t - t2)

    def gram(
        self,
        points: ArrayLike,
        times: ArrayLike,
        others: ArrayLike,
        other_times: ArrayLike,
    ) -> Array:
        """
        Space-time covariance between two record collections.

        The matrix is assembled record-by-record as K_s(x_i, x_j) h(t_i - t_j);
        no Kronecker shortcut is assumed.
        """
        t1 = np.asarray(times, dtype=float).reshape(-1)
        t2 = np.asarray(other_times, dtype=float).reshape(-1)
        spatial = self.spatial.matrix(points, others)
        if spatial.shape != (t1.size, t2.size):
            raise InputError("Each location needs exactly one time stamp")
        return spatial * self.temporal.covariance(t1[:, None] - t2[None, :])


def eval_spatial(kernel: SpatialKernel, x: ArrayLike, x2: ArrayLike) -> float:
    """
    Evaluate a spatial kernel at two single locations.

    Raises:
        InputError: If the locations have different dimensions
    """
    a = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(x2, dtype=float))
    if a.shape != b.shape:
        raise InputError(f"Location dimension mismatch: {a.shape} vs {b.shape}")
    return float(kernel.from_distance(np.linalg.norm(a - b)))


def eval_temporal(kernel: TemporalKernel, lag: float) -> float:
    """Evaluate a temporal kernel at a single lag."""
    return float(kernel.covariance(lag))


def temporal_psd(kernel: TemporalKernel, omega: float) -> float:
    """Evaluate the temporal power spectral density at a single angular frequency."""
    return float(kernel.psd(omega))
