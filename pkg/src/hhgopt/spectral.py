"""Boundary-including cosine transforms on the control window [0, T].

The control field lives in a dual representation: real samples eps(t_k) on the
equidistant time grid t_k = k*T/N_t (k = 0..N_t, both endpoints included) and
real coefficients eps_bar(omega_j) on the conjugate frequency grid
omega_j = j*pi/T (j = 0..N_t).  The two are related by a type-1 discrete
cosine transform scaled so that it is consistent with the continuous pair

    g_bar(w) = sqrt(2/pi) * int_0^T  g(t) cos(w t) dt
    g(t)     = sqrt(2/pi) * int_0^W  g_bar(w) cos(w t) dw,      W = N_t*pi/T

i.e. the forward sum carries a factor dt = T/N_t and the inverse a factor
dw = pi/T, with the trapezoid endpoint halving 1/h (h = 2 at the endpoints,
1 inside).  With this scaling the coefficients do not change meaning when the
sampling density changes, and forward o inverse is exactly the identity
because the underlying half-weighted cosine matrix is an involution.

The module also provides the frequency-domain quadrature weights
w_j = (1/h_j)*(pi/T), Gaussian band filters, and the two-multiplier
projection that forces eps(0) = eps(T) = 0 on a band-limited spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct as _scipy_dct

__all__ = [
    "TimeGrid",
    "FilterFunction",
    "BoundaryMultipliers",
    "DegenerateFilterError",
    "dct1_forward",
    "dct1_inverse",
    "dct1_forward_direct",
    "dct1_inverse_direct",
    "integration_weights",
    "endpoint_values",
    "eval_cosine_series",
    "gaussian_filter",
    "boundary_project",
]

# Relative tolerance on det M = a^2 - b^2 below which the two boundary
# constraints are linearly dependent and the projection is undefined.
DETM_RTOL = 1e-14


class DegenerateFilterError(ValueError):
    """The boundary-constraint system is singular for this filter."""


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant DCT-1 grid on [0, T]: N_t intervals, N_t + 1 nodes."""

    duration: float
    n_t: int

    def __post_init__(self) -> None:
        if not self.duration > 0.0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.n_t < 2:
            raise ValueError(f"need at least 2 intervals, got n_t={self.n_t}")

    @property
    def n_nodes(self) -> int:
        return self.n_t + 1

    @property
    def dt(self) -> float:
        return self.duration / self.n_t

    @property
    def domega(self) -> float:
        return np.pi / self.duration

    @property
    def omega_max(self) -> float:
        """Maximal represented frequency Omega = N_t*pi/T."""
        return self.n_t * np.pi / self.duration

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.dt

    @property
    def omegas(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.domega

    def endpoint_halving(self) -> np.ndarray:
        """h_k: 2 at k = 0 and k = N_t, 1 inside."""
        h = np.ones(self.n_nodes)
        h[0] = 2.0
        h[-1] = 2.0
        return h

    def refined(self, factor: int) -> "TimeGrid":
        """Same window, `factor` times more intervals (same omega spacing)."""
        if factor < 1:
            raise ValueError("refinement factor must be >= 1")
        return TimeGrid(self.duration, self.n_t * factor)


def _check_length(values: np.ndarray, grid: TimeGrid, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size != grid.n_nodes:
        raise ValueError(
            f"{what} must have {grid.n_nodes} entries, got shape {values.shape}"
        )
    return values


def _halfweighted_cosine_sum(values: np.ndarray) -> np.ndarray:
    # sum_k (1/h_k) x_k cos(pi j k / N); scipy's DCT-I equals twice this sum.
    return 0.5 * _scipy_dct(values, type=1)


def dct1_forward(samples: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Time samples -> spectral coefficients (continuous-consistent scaling)."""
    samples = _check_length(samples, grid, "time samples")
    return np.sqrt(2.0 / np.pi) * grid.dt * _halfweighted_cosine_sum(samples)


def dct1_inverse(coeffs: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Spectral coefficients -> time samples (inverse scaling)."""
    coeffs = _check_length(coeffs, grid, "spectral coefficients")
    return np.sqrt(2.0 / np.pi) * grid.domega * _halfweighted_cosine_sum(coeffs)


def _cosine_matrix(grid: TimeGrid) -> np.ndarray:
    idx = np.arange(grid.n_nodes)
    return np.cos(np.pi * np.outer(idx, idx) / grid.n_t)


def dct1_forward_direct(samples: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """O(N^2) reference evaluation of the explicit forward sum."""
    samples = _check_length(samples, grid, "time samples")
    h = grid.endpoint_halving()
    return np.sqrt(2.0 / np.pi) * grid.dt * (_cosine_matrix(grid) @ (samples / h))


def dct1_inverse_direct(coeffs: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """O(N^2) reference evaluation of the explicit inverse sum."""
    coeffs = _check_length(coeffs, grid, "spectral coefficients")
    h = grid.endpoint_halving()
    return np.sqrt(2.0 / np.pi) * grid.domega * (_cosine_matrix(grid) @ (coeffs / h))


def integration_weights(grid: TimeGrid) -> np.ndarray:
    """Frequency quadrature weights w_j = (1/h_j)*(pi/T)."""
    return grid.domega / grid.endpoint_halving()


def endpoint_values(coeffs: np.ndarray, grid: TimeGrid) -> tuple[float, float]:
    """(g(0), g(T)) of the represented signal, via the closed endpoint sums.

    cos(omega_j * 0) = 1 and cos(omega_j * T) = (-1)^j, so both values are
    alternating-sign weighted sums of the coefficients.
    """
    coeffs = _check_length(coeffs, grid, "spectral coefficients")
    h = grid.endpoint_halving()
    scale = np.sqrt(2.0 / np.pi) * grid.domega
    signs = np.where(np.arange(grid.n_nodes) % 2 == 0, 1.0, -1.0)
    g0 = scale * float(np.sum(coeffs / h))
    gT = scale * float(np.sum(signs * coeffs / h))
    return g0, gT


def eval_cosine_series(
    coeffs: np.ndarray, grid: TimeGrid, t: np.ndarray | float
) -> np.ndarray | float:
    """Evaluate the represented band-limited signal at arbitrary times.

    This is the inverse-transform sum with cos(omega_j t) in place of the
    node cosines; at t = t_k it reproduces dct1_inverse exactly.  Negligible
    coefficients are skipped, so narrow-band fields cost O(band) per point.
    """
    coeffs = _check_length(coeffs, grid, "spectral coefficients")
    weights = integration_weights(grid)
    amps = np.sqrt(2.0 / np.pi) * weights * coeffs
    support = np.nonzero(amps != 0.0)[0]
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if support.size == 0:
        out = np.zeros_like(t_arr)
    else:
        out = np.cos(np.outer(t_arr, grid.omegas[support])) @ amps[support]
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out[0])
    return out


@dataclass(frozen=True)
class FilterFunction:
    """Nonnegative spectral weight on the omega grid.

    kind is one of "source" (band available to the driving field), "scaled"
    (source filter divided by the energy penalty alpha) and "target"
    (emission band to maximize).
    """

    values: np.ndarray
    kind: str = "source"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if self.kind not in ("source", "scaled", "target"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not np.all(np.isfinite(values)):
            raise ValueError("filter contains non-finite entries")
        if self.kind != "scaled" and values.size and values.max() > 1.0 + 1e-12:
            raise ValueError("unscaled filters are normalized to peak 1")

    def scaled(self, alpha: float) -> "FilterFunction":
        """f / alpha, the weight entering the energy penalty and projection."""
        if not alpha > 0.0:
            raise ValueError("alpha must be positive")
        return FilterFunction(self.values / alpha, kind="scaled")


def gaussian_filter(
    center: float, width: float, grid: TimeGrid, kind: str = "source"
) -> FilterFunction:
    """Unit-peak Gaussian band profile exp(-(w - center)^2 / (2 width^2))."""
    if not width > 0.0:
        raise ValueError("width must be positive")
    values = np.exp(-((grid.omegas - center) ** 2) / (2.0 * width**2))
    return FilterFunction(values, kind=kind)


@dataclass(frozen=True)
class BoundaryMultipliers:
    """Multipliers and matrix entries of the endpoint-constraint system.

    The 2x2 system M [lambda0, lambdaT]^T = [eps_unc(0), eps_unc(T)]^T has
    M = [[a, b], [b, d]]; on the DCT-1 grid cos^2(omega_j T) = 1 makes d = a,
    so det M = a^2 - b^2.
    """

    lambda0: float
    lambdaT: float
    a: float
    b: float
    d: float

    @property
    def det_m(self) -> float:
        return self.a * self.d - self.b * self.b


def boundary_project(
    eps_unc: np.ndarray, ftilde: FilterFunction, grid: TimeGrid
) -> tuple[np.ndarray, BoundaryMultipliers]:
    """Force eps(0) = eps(T) = 0 by the two-multiplier correction.

    Returns eps_bar = eps_unc - ftilde * (lambda0 + lambdaT cos(omega T))
    with the multipliers solving the endpoint system, so the corrected field
    vanishes at both ends of the window while staying inside the band where
    ftilde has support.  Inputs that already satisfy both boundary values are
    returned unchanged with zero multipliers.
    """
    eps_unc = _check_length(eps_unc, grid, "unconstrained coefficients")
    fvals = _check_length(ftilde.values, grid, "filter")
    if not np.any(fvals > 0.0):
        raise DegenerateFilterError("filter vanishes on the whole omega grid")

    h = grid.endpoint_halving()
    scale = np.sqrt(2.0 / np.pi) * grid.domega
    signs = np.where(np.arange(grid.n_nodes) % 2 == 0, 1.0, -1.0)
    a = scale * float(np.sum(fvals / h))
    b = scale * float(np.sum(signs * fvals / h))
    det_m = a * a - b * b
    if abs(det_m) < DETM_RTOL * a * a:
        raise DegenerateFilterError(
            f"singular endpoint system: a={a:.3e}, b={b:.3e}, det={det_m:.3e}"
        )

    e0, eT = endpoint_values(eps_unc, grid)
    lambda0 = (e0 * a - eT * b) / det_m
    lambdaT = (eT * a - e0 * b) / det_m
    corrected = eps_unc - fvals * (lambda0 + lambdaT * signs)
    return corrected, BoundaryMultipliers(lambda0, lambdaT, a, b, a)
