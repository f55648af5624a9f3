"""
Tests for the kernel module.
"""

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate

from kalman_gp.errors import InputError
from kalman_gp.kernel import (
    SeparableKernel,
    SpatialFamily,
    SpatialKernel,
    TemporalFamily,
    TemporalKernel,
    eval_spatial,
    eval_temporal,
    temporal_psd,
)
from kalman_gp.numerics import min_eigenvalue


def test_eval_spatial_zero_distance() -> None:
    """Test that a squared-exponential kernel is one at zero distance."""
    kernel = SpatialKernel(family=SpatialFamily.SQUARED_EXPONENTIAL, length_scale=5.0)
    assert eval_spatial(kernel, [1.0, 2.0], [1.0, 2.0]) == 1.0


def test_eval_spatial_exponential() -> None:
    """Test the exponential spatial kernel at a distance equal to its scale."""
    kernel = SpatialKernel(family=SpatialFamily.EXPONENTIAL, length_scale=2.0)
    assert eval_spatial(kernel, [0.0], [2.0]) == pytest.approx(np.exp(-1.0), rel=1e-14)


def test_eval_spatial_squared_distance_not_squared_scale() -> None:
    """Test that the spatial squared exponential divides by sigma_s, not its square."""
    kernel = SpatialKernel(length_scale=5.0)
    assert eval_spatial(kernel, [0.0], [3.0]) == pytest.approx(np.exp(-9.0 / 5.0), rel=1e-14)


def test_eval_spatial_amplitude() -> None:
    """Test that K_s(x, x) equals the amplitude for both families."""
    for family in SpatialFamily:
        kernel = SpatialKernel(family=family, length_scale=1.0, amplitude=2.5)
        assert eval_spatial(kernel, [3.0], [3.0]) == 2.5


def test_eval_spatial_decays_monotonically() -> None:
    """Test that the kernel decreases towards zero with distance."""
    kernel = SpatialKernel(length_scale=5.0)
    values = [eval_spatial(kernel, [0.0], [d]) for d in np.linspace(0.0, 50.0, 51)]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-200


def test_eval_spatial_symmetric() -> None:
    """Test that K_s(x, x') = K_s(x', x)."""
    kernel = SpatialKernel(family=SpatialFamily.EXPONENTIAL, length_scale=1.3)
    assert eval_spatial(kernel, [0.1, 2.0], [1.5, -0.4]) == eval_spatial(
        kernel, [1.5, -0.4], [0.1, 2.0]
    )


def test_eval_spatial_dimension_mismatch() -> None:
    """Test that locations of different dimensions are rejected."""
    kernel = SpatialKernel(length_scale=1.0)
    with pytest.raises(InputError):
        eval_spatial(kernel, [0.0], [0.0, 1.0])
    with pytest.raises(InputError):
        kernel.matrix(np.zeros((2, 1)), np.zeros((3, 2)))


def test_spatial_kernel_rejects_nonpositive_scale() -> None:
    """Test that the length scale must be positive."""
    with pytest.raises(ValidationError):
        SpatialKernel(length_scale=0.0)


def test_eval_temporal_at_zero(exponential_kernel: TemporalKernel) -> None:
    """Test that h(0) is the scale."""
    assert eval_temporal(exponential_kernel, 0.0) == 1.0


def test_eval_temporal_periodic(periodic_kernel: TemporalKernel) -> None:
    """Test the periodic kernel at half a period."""
    expected = -2e3 * np.exp(-1.2)
    assert eval_temporal(periodic_kernel, 6.0) == pytest.approx(expected, rel=1e-12)


def test_eval_temporal_even() -> None:
    """Test that h(-tau) = h(tau)."""
    kernel = TemporalKernel(scale=1.0, decay=100.0)
    assert eval_temporal(kernel, -3.0) == eval_temporal(kernel, 3.0)


def test_eval_temporal_bounded_by_variance(periodic_kernel: TemporalKernel) -> None:
    """Test that |h(tau)| never exceeds h(0)."""
    lags = np.linspace(-50.0, 50.0, 1001)
    assert np.all(np.abs(periodic_kernel.covariance(lags)) <= periodic_kernel.variance)


def test_temporal_squared_exponential_squares_the_scale() -> None:
    """Test that the temporal squared exponential divides the squared lag by sigma_t squared."""
    kernel = TemporalKernel(family=TemporalFamily.SQUARED_EXPONENTIAL, scale=1.0, decay=2.0)
    assert eval_temporal(kernel, 2.0) == pytest.approx(np.exp(-1.0), rel=1e-14)


def test_temporal_psd_exponential_at_zero(exponential_kernel: TemporalKernel) -> None:
    """Test S(0) = 2 lambda sigma_t for the exponential kernel."""
    assert temporal_psd(exponential_kernel, 0.0) == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("family", list(TemporalFamily))
def test_temporal_psd_even_and_nonnegative(family: TemporalFamily) -> None:
    """Test that S(w) = S(-w) >= 0 for every family."""
    kernel = TemporalKernel(family=family, scale=1.5, decay=0.7, frequency=0.4)
    omega = np.linspace(0.0, 40.0, 401)
    assert np.all(kernel.psd(omega) >= 0.0)
    np.testing.assert_array_equal(kernel.psd(omega), kernel.psd(-omega))


def test_temporal_psd_periodic_closed_form(periodic_kernel: TemporalKernel) -> None:
    """Test the periodic spectrum against the sum of two shifted Lorentzians."""
    lam, sigma = 2e3, 5.0
    omega0 = 2.0 * np.pi / 12.0
    a = 1.0 / sigma
    omega = np.linspace(-3.0, 3.0, 61)
    expected = lam * a * (
        1.0 / (a**2 + (omega - omega0) ** 2) + 1.0 / (a**2 + (omega + omega0) ** 2)
    )
    np.testing.assert_allclose(periodic_kernel.psd(omega), expected, rtol=1e-12)


@pytest.mark.parametrize(
    "kernel",
    [
        TemporalKernel(family=TemporalFamily.EXPONENTIAL, scale=1.3, decay=0.8),
        TemporalKernel(
            family=TemporalFamily.PERIODIC_EXPONENTIAL, scale=2.0, decay=5.0, frequency=1 / 12
        ),
        TemporalKernel(family=TemporalFamily.SQUARED_EXPONENTIAL, scale=0.7, decay=np.sqrt(2)),
    ],
)
def test_temporal_psd_integrates_to_variance(kernel: TemporalKernel) -> None:
    """Test that the spectrum integrates to h(0) over 2 pi."""
    peak = 2.0 * np.pi * kernel.frequency
    total = 0.0
    for lower, upper in [(0.0, peak + 10.0 / kernel.decay), (peak + 10.0 / kernel.decay, np.inf)]:
        value, _ = integrate.quad(kernel.psd, lower, upper, limit=400, epsrel=1e-10)
        total += value
    assert 2.0 * total / (2.0 * np.pi) == pytest.approx(kernel.variance, rel=1e-3)


def test_separable_kernel_is_product() -> None:
    """Test that the space-time kernel equals the product of its factors."""
    kernel = SeparableKernel(
        spatial=SpatialKernel(length_scale=5.0),
        temporal=TemporalKernel(scale=2.0, decay=3.0),
    )
    value = kernel.evaluate([1.0], [2.5], 0.3, 1.7)
    expected = eval_spatial(kernel.spatial, [1.0], [2.5]) * eval_temporal(kernel.temporal, -1.4)
    assert value == pytest.approx(expected, rel=1e-15)


def test_separable_gram_matches_pointwise(rng: np.random.Generator) -> None:
    """Test the assembled space-time Gram matrix entry by entry."""
    kernel = SeparableKernel(
        spatial=SpatialKernel(family=SpatialFamily.EXPONENTIAL, length_scale=2.0),
        temporal=TemporalKernel(
            family=TemporalFamily.PERIODIC_EXPONENTIAL, scale=1.0, decay=2.0, frequency=0.2
        ),
    )
    points = rng.uniform(0.0, 5.0, size=(6, 2))
    times = rng.uniform(0.0, 3.0, size=6)
    gram = kernel.gram(points, times, points, times)
    for i in range(6):
        for j in range(6):
            assert gram[i, j] == pytest.approx(
                kernel.evaluate(points[i], points[j], times[i], times[j]), rel=1e-13, abs=1e-15
            )
    with pytest.raises(InputError):
        kernel.gram(points, times[:3], points, times)


def test_spatial_matrix_is_positive_semidefinite(rng: np.random.Generator) -> None:
    """Test the eigenvalue floor of sampled spatial kernel matrices."""
    for family in SpatialFamily:
        kernel = SpatialKernel(family=family, length_scale=5.0)
        points = rng.uniform(0.0, 20.0, size=(40, 2))
        matrix = kernel.matrix(points, points)
        np.testing.assert_array_equal(matrix, matrix.T)
        assert min_eigenvalue(matrix) >= -1e-10 * np.trace(matrix)
