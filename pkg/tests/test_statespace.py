"""
Tests for the statespace module.
"""

import numpy as np
import pytest
from scipy import integrate, linalg

from kalman_gp.errors import DuplicateLocationError, InputError
from kalman_gp.kernel import SpatialFamily, SpatialKernel, TemporalKernel
from kalman_gp.spectral import TemporalRealization, factorize, realize
from kalman_gp.statespace import (
    RootMethod,
    StateSpaceModel,
    build_location_set,
    check_active,
    discretize,
    discretize_block,
    noise_matrix,
    output_matrix,
    simulate,
    stationary_prior,
)


@pytest.fixture
def spatial_kernel() -> SpatialKernel:
    """Return a squared-exponential spatial kernel with sigma_s = 5."""
    return SpatialKernel(length_scale=5.0)


@pytest.fixture
def periodic_realization(periodic_kernel: TemporalKernel) -> TemporalRealization:
    """Return the exact realization of the periodic kernel."""
    return realize(factorize(periodic_kernel))


def test_build_location_set_single(spatial_kernel: SpatialKernel) -> None:
    """Test that one location has gram [[1]] and root [[1]]."""
    location_set = build_location_set([[3.0]], spatial_kernel)
    np.testing.assert_array_equal(location_set.gram, [[1.0]])
    np.testing.assert_allclose(location_set.root, [[1.0]], rtol=1e-15)
    assert location_set.jitter == 0.0


def test_build_location_set_duplicate(spatial_kernel: SpatialKernel) -> None:
    """Test that coincident locations are rejected."""
    with pytest.raises(DuplicateLocationError):
        build_location_set([[1.0], [2.0], [1.0]], spatial_kernel)


def test_build_location_set_invalid(spatial_kernel: SpatialKernel) -> None:
    """Test that empty and non-finite location sets are rejected."""
    with pytest.raises(InputError):
        build_location_set(np.zeros((0, 1)), spatial_kernel)
    with pytest.raises(InputError):
        build_location_set([[np.nan]], spatial_kernel)


@pytest.mark.parametrize("method", list(RootMethod))
def test_build_location_set_root(method: RootMethod, rng: np.random.Generator) -> None:
    """Test that the square root reproduces the Gram matrix."""
    kernel = SpatialKernel(family=SpatialFamily.EXPONENTIAL, length_scale=2.0)
    points = rng.uniform(0.0, 10.0, size=(5, 2))
    location_set = build_location_set(points, kernel, method=method)
    root = location_set.root
    np.testing.assert_allclose(root @ root.T, location_set.gram, atol=1e-12)
    if method is RootMethod.SYMMETRIC:
        np.testing.assert_array_equal(root, root.T)
    else:
        np.testing.assert_array_equal(root, np.tril(root))


def test_location_set_index_and_edit(spatial_kernel: SpatialKernel) -> None:
    """Test lookup, appending and removal of locations."""
    location_set = build_location_set([[0.0], [4.0]], spatial_kernel)
    assert location_set.index_of([4.0]) == 1
    assert location_set.index_of([4.5]) is None
    with pytest.raises(InputError):
        location_set.index_of([1.0, 2.0])

    grown = location_set.with_point([9.0])
    assert grown.size == 3
    np.testing.assert_array_equal(grown.points[-1], [9.0])
    shrunk = grown.without(0)
    np.testing.assert_array_equal(shrunk.points.ravel(), [4.0, 9.0])
    with pytest.raises(InputError):
        grown.without(3)
    with pytest.raises(InputError):
        build_location_set([[0.0]], spatial_kernel).without(0)


def test_location_set_solve(spatial_kernel: SpatialKernel) -> None:
    """Test the Cholesky solve against a dense solve."""
    location_set = build_location_set([[0.0], [2.0], [5.0]], spatial_kernel)
    rhs = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(
        location_set.solve(rhs), np.linalg.solve(location_set.gram, rhs), rtol=1e-10
    )


def test_discretize_exponential(unit_realization: TemporalRealization) -> None:
    """Test A = exp(-T) and Q = (1 - exp(-2T)) / 2 for the unit exponential kernel."""
    for step in (0.01, 0.2, 1.0, 7.5):
        transition, process_noise = discretize_block(
            unit_realization.F, unit_realization.G, step
        )
        assert transition[0, 0] == pytest.approx(np.exp(-step), rel=1e-12)
        assert process_noise[0, 0] == pytest.approx(
            0.5 * (1.0 - np.exp(-2.0 * step)), rel=1e-10
        )


def test_discretize_periodic_process_noise(periodic_realization: TemporalRealization) -> None:
    """Test Q_bar against direct quadrature of exp(F s) G G^T exp(F^T s)."""
    F, G = periodic_realization.F, periodic_realization.G
    step = 1.3
    transition, process_noise = discretize_block(F, G, step)
    expected, _ = integrate.quad_vec(
        lambda s: linalg.expm(F * s) @ G @ G.T @ linalg.expm(F.T * s), 0.0, step, epsrel=1e-12
    )
    np.testing.assert_allclose(transition, linalg.expm(F * step), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(process_noise, expected, rtol=1e-8, atol=1e-12)


def test_discretize_semigroup(periodic_realization: TemporalRealization) -> None:
    """Test A(T1 + T2) = A(T1) A(T2) and the process-noise recursion."""
    F, G = periodic_realization.F, periodic_realization.G
    a1, q1 = discretize_block(F, G, 0.7)
    a2, q2 = discretize_block(F, G, 1.9)
    a12, q12 = discretize_block(F, G, 2.6)
    np.testing.assert_allclose(a12, a2 @ a1, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(q12, a2 @ q1 @ a2.T + q2, rtol=1e-9, atol=1e-12)


def test_discretize_long_step_approaches_stationary(
    periodic_realization: TemporalRealization,
) -> None:
    """Test that Q_bar tends to Sigma0 for steps much longer than sigma_t."""
    _, process_noise = discretize_block(
        periodic_realization.F, periodic_realization.G, 50.0 * 5.0
    )
    np.testing.assert_allclose(
        process_noise, periodic_realization.stationary_covariance, rtol=1e-8
    )


def test_discretize_kronecker_structure(
    periodic_realization: TemporalRealization, spatial_kernel: SpatialKernel
) -> None:
    """Test that the block-replicated model matches the dense exponential."""
    location_set = build_location_set([[0.0], [3.0], [8.0]], spatial_kernel)
    step = 0.4
    model = discretize(periodic_realization, location_set, step)
    dense_f = np.kron(np.eye(3), periodic_realization.F)
    dense_g = np.kron(np.eye(3), periodic_realization.G)
    dense_a, dense_q = discretize_block(dense_f, dense_g, step)
    np.testing.assert_allclose(model.A, dense_a, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(model.Q, dense_q, rtol=1e-9, atol=1e-12)
    assert model.C.shape == (3, 6)
    np.testing.assert_array_equal(model.R, np.eye(3))


def test_discretize_active_and_noise(
    unit_realization: TemporalRealization, spatial_kernel: SpatialKernel
) -> None:
    """Test that the active selection picks rows of C in ascending order."""
    location_set = build_location_set([[0.0], [3.0], [8.0]], spatial_kernel)
    model = discretize(unit_realization, location_set, 1.0, active=[2, 0], noise=[0.1, 0.2])
    full = output_matrix(unit_realization, location_set)
    assert model.active == (0, 2)
    np.testing.assert_array_equal(model.C, full[[0, 2]])
    np.testing.assert_array_equal(np.diag(model.R), [0.1, 0.2])


def test_discretize_rejects_nonpositive_step(
    unit_realization: TemporalRealization, spatial_kernel: SpatialKernel
) -> None:
    """Test that T <= 0 is an input error."""
    location_set = build_location_set([[0.0]], spatial_kernel)
    for step in (0.0, -1.0):
        with pytest.raises(InputError):
            discretize(unit_realization, location_set, step)


def test_stationary_prior_output_covariance(
    periodic_realization: TemporalRealization, spatial_kernel: SpatialKernel
) -> None:
    """Test C P0 C^T = h(0) K_s."""
    location_set = build_location_set([[0.0], [2.0], [3.5], [9.0]], spatial_kernel)
    mean, covariance = stationary_prior(periodic_realization, location_set)
    C = output_matrix(periodic_realization, location_set)
    assert not np.any(mean)
    np.testing.assert_allclose(
        C @ covariance @ C.T, 2e3 * location_set.gram, rtol=1e-9, atol=1e-9
    )


def test_transition_cache(unit_realization: TemporalRealization) -> None:
    """Test that blocks are cached per step and shared with derived models."""
    kernel = SpatialKernel(length_scale=1.0)
    model = StateSpaceModel(unit_realization, build_location_set([[0.0]], kernel))
    first = model.transition_blocks(0.5)
    assert model.transition_blocks(0.5) is first
    derived = model.with_locations(build_location_set([[0.0], [1.0]], kernel))
    assert derived.transition_blocks(0.5) is first
    assert derived.state_dimension == 2
    with pytest.raises(InputError):
        model.transition_blocks(0.0)


def test_transition_cache_tiny_steps(unit_realization: TemporalRealization) -> None:
    """Test that distinct tiny steps get distinct blocks while float noise shares one."""
    kernel = SpatialKernel(length_scale=1.0)
    model = StateSpaceModel(unit_realization, build_location_set([[0.0]], kernel))
    short = model.transition_blocks(1e-13)
    longer = model.transition_blocks(3e-13)
    assert longer is not short
    assert not np.array_equal(short[0], longer[0])
    assert model.transition_blocks(1e-13) is short
    assert model.transition_blocks(0.3 - 0.1) is model.transition_blocks(0.2)


def test_check_active() -> None:
    """Test ordering, duplicates and range checks of active selections."""
    assert check_active([3, 1], 4) == (1, 3)
    assert check_active([], 4) == ()
    with pytest.raises(InputError):
        check_active([1, 1], 4)
    with pytest.raises(InputError):
        check_active([4], 4)
    with pytest.raises(InputError):
        check_active([-1], 4)


def test_noise_matrix() -> None:
    """Test scalar broadcasting and validation of noise variances."""
    np.testing.assert_array_equal(noise_matrix(0.5, 2), np.diag([0.5, 0.5]))
    with pytest.raises(InputError):
        noise_matrix([0.1, 0.2], 3)
    with pytest.raises(InputError):
        noise_matrix(0.0, 1)
    with pytest.raises(InputError):
        noise_matrix([np.inf], 1)


def test_simulate_shape_and_determinism(
    unit_realization: TemporalRealization, spatial_kernel: SpatialKernel
) -> None:
    """Test that simulation is reproducible for a fixed seed."""
    model = StateSpaceModel(
        unit_realization, build_location_set([[0.0], [2.0], [4.0]], spatial_kernel)
    )
    times = np.arange(10) * 0.3
    first = simulate(model, times, np.random.default_rng(4))
    second = simulate(model, times, np.random.default_rng(4))
    assert first.shape == (10, 3)
    np.testing.assert_array_equal(first, second)
    with pytest.raises(InputError):
        simulate(model, [0.0, 0.0], np.random.default_rng(4))


def test_simulate_covariance(unit_realization: TemporalRealization) -> None:
    """Test the empirical lag-one covariance of simulated draws."""
    model = StateSpaceModel(
        unit_realization, build_location_set([[0.0]], SpatialKernel(length_scale=1.0))
    )
    rng = np.random.default_rng(11)
    draws = np.array([simulate(model, [0.0, 0.5], rng)[:, 0] for _ in range(4000)])
    empirical = np.cov(draws.T)
    np.testing.assert_allclose(np.diag(empirical), [1.0, 1.0], rtol=0.1)
    assert empirical[0, 1] == pytest.approx(np.exp(-0.5), rel=0.15)
