"""
Spectral factorization and companion-form realization of temporal kernels.

A temporal kernel whose power spectral density is rational, S(w) = W(iw) W(-iw),
is realized as the linear SDE ds = F s dt + G dw, z = H s, with (F, G, H) in
companion form and the stationary covariance Sigma0 solving the continuous
Lyapunov equation. Non-rational spectra are first approximated by a rational
factor through weighted nonlinear least squares.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as P
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import linalg, special
from scipy.optimize import least_squares

from kalman_gp.errors import (
    ApproximationError,
    InputError,
    InstabilityError,
    UnsupportedExactFactorization,
)
from kalman_gp.kernel import TemporalFamily, TemporalKernel
from kalman_gp.numerics import spectral_abscissa, symmetrize

LOGGER = logging.getLogger(__name__)

Array = NDArray[np.float64]

DEFAULT_GRID_POINTS = 400
DEFAULT_GRID_SPAN = (1e-3, 1e3)
DEFAULT_RESTARTS = 5

# Log-parameters are clipped before exponentiation to keep iterates finite
_LOG_CLIP = 30.0


class SpectralFactor(BaseModel):
    """
    Stable spectral factor W(s) = (b_{r-1} s^{r-1} + ... + b_0) / (s^r + ... + a_0).

    Coefficients are stored in ascending powers. ``objective`` is set when the
    factor comes out of a least-squares approximation.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    numerator: tuple[float, ...]
    denominator: tuple[float, ...]
    objective: Optional[float] = None

    @field_validator("numerator", "denominator")
    @classmethod
    def _finite(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("coefficient list must not be empty")
        if not all(np.isfinite(value)):
            raise ValueError("coefficients must be finite")
        return value

    @model_validator(mode="after")
    def _same_order(self) -> "SpectralFactor":
        if len(self.numerator) != len(self.denominator):
            raise ValueError("numerator and denominator must both have r coefficients")
        return self

    @property
    def order(self) -> int:
        """State dimension r."""
        return len(self.denominator)

    @property
    def monic_denominator(self) -> Array:
        """Full ascending denominator coefficients including the leading one."""
        return np.append(np.asarray(self.denominator, dtype=float), 1.0)

    def poles(self) -> NDArray[np.complex128]:
        """Roots of the denominator polynomial."""
        return P.polyroots(self.monic_denominator)

    def is_hurwitz(self) -> bool:
        """Whether every pole lies strictly in the left half-plane."""
        return bool(np.all(self.poles().real < 0.0))

    def transfer(self, omega: ArrayLike) -> NDArray[np.complex128]:
        """Evaluate W(iw)."""
        s = 1j * np.asarray(omega, dtype=float)
        return P.polyval(s, np.asarray(self.numerator)) / P.polyval(s, self.monic_denominator)

    def psd(self, omega: ArrayLike) -> Array:
        """Evaluate W(iw) W(-iw) = |W(iw)|^2."""
        return np.abs(self.transfer(omega)) ** 2


@dataclass(frozen=True, eq=False)
class TemporalRealization:
    """Companion-form realization (F, G, H) with stationary covariance Sigma0."""

    F: Array
    G: Array
    H: Array
    stationary_covariance: Array

    @property
    def order(self) -> int:
        """State dimension r."""
        return int(self.F.shape[0])

    @property
    def output_variance(self) -> float:
        """H Sigma0 H^T, the realized h(0)."""
        return float((self.H @ self.stationary_covariance @ self.H.T)[0, 0])

    def autocovariance(self, lag: ArrayLike) -> Array:
        """Output autocovariance H exp(F|tau|) Sigma0 H^T of the stationary process."""
        lags = np.abs(np.atleast_1d(np.asarray(lag, dtype=float)))
        projected = self.stationary_covariance @ self.H.T
        values = [float((self.H @ linalg.expm(self.F * tau) @ projected)[0, 0]) for tau in lags]
        return np.asarray(values)

    def lyapunov_residual(self) -> float:
        """Frobenius norm of F Sigma0 + Sigma0 F^T + G G^T."""
        sigma0 = self.stationary_covariance
        return float(np.linalg.norm(self.F @ sigma0 + sigma0 @ self.F.T + self.G @ self.G.T))


def factorize(kernel: TemporalKernel) -> SpectralFactor:
    """
    Exact spectral factor of a temporal kernel with rational spectrum.

    Args:
        kernel: Exponential (order 1) or periodic-exponential (order 2) kernel

    Returns:
        The stable, minimum-phase factor W

    Raises:
        UnsupportedExactFactorization: For the squared-exponential family
    """
    lam, sigma = kernel.scale, kernel.decay
    gain = np.sqrt(2.0 * lam / sigma)
    if kernel.family is TemporalFamily.EXPONENTIAL:
        return SpectralFactor(numerator=(gain,), denominator=(1.0 / sigma,))
    if kernel.family is TemporalFamily.PERIODIC_EXPONENTIAL:
        c = 1.0 / sigma**2 + (2.0 * np.pi * kernel.frequency) ** 2
        return SpectralFactor(
            numerator=(gain * np.sqrt(c), gain),
            denominator=(c, 2.0 / sigma),
        )
    raise UnsupportedExactFactorization(
        f"The {kernel.family.value} temporal kernel has no exact rational spectrum; "
        "use approximate_psd instead"
    )


def companion_matrices(factor: SpectralFactor) -> tuple[Array, Array, Array]:
    """Companion-form (F, G, H) of a spectral factor."""
    r = factor.order
    F = np.zeros((r, r))
    F[:-1, 1:] = np.eye(r - 1)
    F[-1, :] = -np.asarray(factor.denominator, dtype=float)
    G = np.zeros((r, 1))
    G[-1, 0] = 1.0
    H = np.asarray(factor.numerator, dtype=float).reshape(1, r)
    return F, G, H


def solve_lyapunov(F: ArrayLike, G: ArrayLike) -> Array:
    """
    Stationary covariance X solving F X + X F^T + G G^T = 0.

    Raises:
        InstabilityError: If F is not stable, so no stationary covariance exists
    """
    F_arr = np.atleast_2d(np.asarray(F, dtype=float))
    G_arr = np.asarray(G, dtype=float).reshape(F_arr.shape[0], -1)
    abscissa = spectral_abscissa(F_arr)
    if abscissa >= 0.0:
        raise InstabilityError(
            f"F is not stable (spectral abscissa {abscissa:.3g}); no stationary covariance"
        )
    return symmetrize(linalg.solve_continuous_lyapunov(F_arr, -G_arr @ G_arr.T))


def realize(factor: SpectralFactor) -> TemporalRealization:
    """
    Companion-form realization of a spectral factor.

    Raises:
        InstabilityError: If the denominator is not Hurwitz
    """
    if not factor.is_hurwitz():
        raise InstabilityError(
            f"Spectral factor denominator {factor.denominator} is not Hurwitz"
        )
    F, G, H = companion_matrices(factor)
    return TemporalRealization(F=F, G=G, H=H, stationary_covariance=solve_lyapunov(F, G))


def realize_kernel(
    kernel: TemporalKernel,
    order: Optional[int] = None,
    frequency_grid: Optional[ArrayLike] = None,
    rng: Optional[np.random.Generator] = None,
    restarts: int = DEFAULT_RESTARTS,
) -> TemporalRealization:
    """
    Realize a temporal kernel, exactly when possible.

    With ``order`` set, or for a non-rational kernel, the spectrum is approximated
    first (order defaults to 6 for non-rational kernels).
    """
    if order is None and kernel.is_rational:
        return realize(factorize(kernel))
    factor = approximate_psd(
        kernel, order or 6, frequency_grid=frequency_grid, rng=rng, restarts=restarts
    )
    return realize(factor)


def default_frequency_grid(
    kernel: TemporalKernel,
    points: int = DEFAULT_GRID_POINTS,
    span: tuple[float, float] = DEFAULT_GRID_SPAN,
) -> Array:
    """Log-spaced angular frequency grid over span * (1/sigma_t)."""
    grid = np.logspace(np.log10(span[0]), np.log10(span[1]), points)
    return grid * kernel.characteristic_frequency


def _section_count(order: int) -> tuple[int, int]:
    return order // 2, order % 2


def _denominator_from_theta(theta: Array, order: int) -> Array:
    """Monic ascending denominator built from positive-coefficient sections."""
    quads, linear = _section_count(order)
    params = np.exp(np.clip(theta[: 2 * quads + linear], -_LOG_CLIP, _LOG_CLIP))
    poly = np.array([1.0])
    for k in range(quads):
        p1, p0 = params[2 * k], params[2 * k + 1]
        poly = P.polymul(poly, [p0, p1, 1.0])
    if linear:
        poly = P.polymul(poly, [params[-1], 1.0])
    return np.asarray(poly, dtype=float)


def _numerator_from_theta(theta: Array, order: int) -> Array:
    quads, linear = _section_count(order)
    return theta[2 * quads + linear :]


def _model_psd(theta: Array, order: int, u: Array) -> Array:
    s = 1j * u
    numerator = P.polyval(s, _numerator_from_theta(theta, order))
    denominator = P.polyval(s, _denominator_from_theta(theta, order))
    return np.abs(numerator / denominator) ** 2


def _random_theta(order: int, target_dc: float, rng: np.random.Generator) -> Array:
    quads, linear = _section_count(order)
    logs: list[float] = []
    for _ in range(quads):
        centre = 10.0 ** rng.uniform(-0.5, 0.7)
        damping = rng.uniform(0.4, 1.2)
        logs.extend([np.log(2.0 * damping * centre), np.log(centre**2)])
    if linear:
        logs.append(np.log(10.0 ** rng.uniform(-0.5, 0.5)))
    theta = np.array(logs + [0.0] * order)
    numerator = rng.normal(scale=0.1, size=order)
    a0 = _denominator_from_theta(theta, order)[0]
    numerator[0] = np.sqrt(max(target_dc, 0.0)) * a0
    theta[len(logs) :] = numerator
    return theta


def _embed_theta(theta: Array, order: int) -> Array:
    """Lift an order-r fit to order r+2 with an identical spectrum."""
    quads, linear = _section_count(order)
    sections = theta[: 2 * quads + linear]
    # the appended section s^2 + 2 s + 1 cancels against the same numerator factor
    numerator = P.polymul(_numerator_from_theta(theta, order), [1.0, 2.0, 1.0])
    numerator = np.pad(numerator, (0, order + 2 - numerator.size))
    quad_part = sections[: 2 * quads]
    linear_part = sections[2 * quads :]
    return np.concatenate([quad_part, np.log([2.0, 1.0]), linear_part, numerator])


def _fit_theta(
    u: Array,
    target: Array,
    weights: Array,
    order: int,
    rng: np.random.Generator,
    restarts: int,
    diagnostics: dict[str, list[float]],
) -> tuple[Array, float]:
    """Best least-squares parameters of a given order, warm-started from order-2."""
    sqrt_w = np.sqrt(weights)

    def residuals(theta: Array) -> Array:
        return sqrt_w * (_model_psd(theta, order, u) - target)

    starts = [_random_theta(order, float(target[0]), rng) for _ in range(restarts)]
    if order > 2:
        lower, _ = _fit_theta(u, target, weights, order - 2, rng, restarts, diagnostics)
        starts.insert(0, _embed_theta(lower, order - 2))

    best: Optional[tuple[Array, float]] = None
    for theta0 in starts:
        initial = float(np.sum(residuals(theta0) ** 2))
        candidates = [(theta0, initial)]
        try:
            result = least_squares(
                residuals, theta0, method="trf", x_scale="jac",
                ftol=1e-12, xtol=1e-12, gtol=1e-12, max_nfev=200 * theta0.size,
            )
            candidates.append((result.x, float(2.0 * result.cost)))
        except (ValueError, np.linalg.LinAlgError) as e:
            LOGGER.debug("Least-squares restart failed at order %d: %s", order, e)
        for theta, cost in candidates:
            if not np.isfinite(cost):
                continue
            if best is None or cost < best[1]:
                best = (theta, cost)
    if best is None:
        raise ApproximationError(
            f"No finite rational fit of order {order}",
            diagnostics={"order": order, **diagnostics},
        )
    diagnostics.setdefault(f"objective_r{order}", []).append(best[1])
    LOGGER.debug("Order %d spectral fit objective %.6g", order, best[1])
    return best


def approximate_psd(
    target: TemporalKernel,
    order: int,
    frequency_grid: Optional[ArrayLike] = None,
    rng: Optional[np.random.Generator] = None,
    restarts: int = DEFAULT_RESTARTS,
) -> SpectralFactor:
    """
    Fit a stable rational spectral factor to a temporal kernel's spectrum.

    The objective is the S(w)-weighted squared mismatch between the rational and
    the target spectrum, integrated over the grid with trapezoidal weights.
    Every iterate is Hurwitz by construction: the denominator is a product of
    second-order sections (plus one first-order section for odd r) with
    positive coefficients. Orders above two are warm-started from the fit of
    order r-2 lifted to order r, so the objective never increases with r along
    a fixed parity.

    Args:
        target: Temporal kernel whose spectrum is approximated
        order: Model order r >= 1
        frequency_grid: Angular frequencies (defaults to default_frequency_grid)
        rng: Generator for the random restarts
        restarts: Number of random restarts per order

    Returns:
        The fitted factor, with the achieved objective recorded

    Raises:
        InputError: For r < 1 or an empty, negative or non-finite grid
        ApproximationError: If no stable fit could be produced
    """
    if order < 1:
        raise InputError(f"Approximation order must be >= 1, got {order}")
    grid = (
        default_frequency_grid(target)
        if frequency_grid is None
        else np.sort(np.asarray(frequency_grid, dtype=float).reshape(-1))
    )
    if grid.size == 0 or not np.all(np.isfinite(grid)) or np.any(grid < 0.0):
        raise InputError("Frequency grid must be nonempty, finite and nonnegative")
    generator = rng if rng is not None else np.random.default_rng(0)

    spectrum = target.psd(grid)
    scale = float(np.max(spectrum))
    if scale <= 0.0:
        raise InputError("Target spectrum is identically zero on the grid")

    # Work in dimensionless frequency u = w * sigma_t with the spectrum scaled to 1
    sigma = target.decay
    u = grid * sigma
    normalized = spectrum / scale
    spacing = np.gradient(u) if u.size > 1 else np.ones(1)
    weights = normalized * spacing
    weights = weights / np.sum(weights)

    diagnostics: dict[str, list[float]] = {}
    theta, objective = _fit_theta(u, normalized, weights, order, generator, restarts, diagnostics)

    powers = np.arange(order + 1, dtype=float)
    denominator_u = _denominator_from_theta(theta, order)
    numerator_u = _numerator_from_theta(theta, order)
    a = denominator_u * sigma ** (powers - order)
    b = np.sqrt(scale) * numerator_u * sigma ** (powers[:-1] - order)
    if b[0] < 0.0:
        b = -b
    factor = SpectralFactor(
        numerator=tuple(float(v) for v in b),
        denominator=tuple(float(v) for v in a[:-1]),
        objective=objective,
    )
    if not factor.is_hurwitz():
        raise ApproximationError(
            f"Fitted order-{order} factor is not Hurwitz",
            diagnostics={"poles": [complex(p) for p in factor.poles()], **diagnostics},
        )
    return factor


def approximate_psd_ladder(
    target: TemporalKernel,
    orders: list[int],
    frequency_grid: Optional[ArrayLike] = None,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
) -> dict[int, SpectralFactor]:
    """
    Fit several orders with the same seed and grid.

    Each order re-runs its warm-started ladder from the same generator state,
    so results are reproducible per order.
    """
    return {
        order: approximate_psd(
            target,
            order,
            frequency_grid=frequency_grid,
            rng=np.random.default_rng(seed),
            restarts=restarts,
        )
        for order in orders
    }


def three_sigma_window(kernel: TemporalKernel, mass: float = 0.99) -> float:
    """
    Time window T holding ``mass`` of the one-sided kernel integral.

    The periodic family uses its exponential envelope.
    """
    if not 0.0 < mass < 1.0:
        raise InputError("mass must lie in (0, 1)")
    if kernel.family is TemporalFamily.SQUARED_EXPONENTIAL:
        return float(kernel.decay * special.erfinv(mass))
    return float(-kernel.decay * np.log(1.0 - mass))
