"""1D model system on a periodic Fourier grid.

The "atom" is a single electron in the truncated Coulomb potential

    V0(x) = 1 - 1/sqrt(x^2 + 1)

driven in length gauge, H(t) = P^2/2 + V0 - X eps(t).  The kinetic operator
is applied by multiplying with k^2/2 in momentum space (FFT convention of
the equidistant periodic grid).  Near the absorbing boundaries the classical
force of the physical potential is smoothly turned off: the coordinate that
enters the potential and the dipole coupling is clamped by a C^1 half-cosine
window, so the force vanishes identically inside the absorber while the
interior is untouched.  The emission observable is the *stationary
acceleration* C(x) = -dV0/dx = -x/(x^2+1)^{3/2}, kept in its physical
(unmasked) form.

Atomic units throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.linalg

__all__ = [
    "SpatialGrid",
    "PotentialModel",
    "truncated_coulomb",
    "stationary_acceleration",
    "force_mask_coordinate",
    "apply_hamiltonian",
    "hamiltonian_matrix",
    "ground_state",
    "braket",
    "norm_squared",
]


@dataclass(frozen=True)
class SpatialGrid:
    """Equidistant periodic-convention grid: x_max itself is excluded."""

    x_min: float
    x_max: float
    n_x: int

    def __post_init__(self) -> None:
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.n_x < 8:
            raise ValueError("grid too small")

    @classmethod
    def paper(cls) -> "SpatialGrid":
        return cls(-240.0, 240.0, 768)

    def doubled(self) -> "SpatialGrid":
        """Twice the extent at unchanged spacing (boundary-artifact check)."""
        half = (self.x_max - self.x_min) / 2.0
        return SpatialGrid(self.x_min - half, self.x_max + half, 2 * self.n_x)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_x)

    @property
    def k(self) -> np.ndarray:
        """Momentum grid of the FFT kinetic operator."""
        return 2.0 * np.pi * sfft.fftfreq(self.n_x, d=self.dx)

    def kinetic_energies(self) -> np.ndarray:
        return 0.5 * self.k**2


def braket(grid: SpatialGrid, bra: np.ndarray, ket: np.ndarray) -> complex:
    """<bra|ket> with the grid quadrature weight dx."""
    return complex(np.vdot(bra, ket) * grid.dx)


def norm_squared(grid: SpatialGrid, psi: np.ndarray) -> float:
    return float(np.real(np.vdot(psi, psi)) * grid.dx)


def truncated_coulomb(grid: SpatialGrid) -> np.ndarray:
    """V0(x) = 1 - 1/sqrt(x^2 + 1)."""
    return 1.0 - 1.0 / np.sqrt(grid.x**2 + 1.0)


def stationary_acceleration(grid: SpatialGrid) -> np.ndarray:
    """C(x) = -dV0/dx = -x/(x^2+1)^{3/2}, analytic."""
    return -grid.x / (grid.x**2 + 1.0) ** 1.5


def force_mask_coordinate(grid: SpatialGrid, absorber_width: float) -> np.ndarray:
    """Clamped coordinate xt(x) whose slope dies smoothly in the absorber.

    Inside |x| <= x_phys the map is the identity; across the absorber the
    slope follows the half-cosine (1 + cos(pi*s/w))/2, integrating to

        xt = x_phys + s/2 + (w/2pi) sin(pi*s/w),      s = |x| - x_phys

    which is C^1, monotone, and has exactly zero slope at the outer edge.
    """
    if not 0.0 < absorber_width < (grid.x_max - grid.x_min) / 2.0:
        raise ValueError("absorber width must be positive and below half-domain")
    x = grid.x
    x_phys = min(abs(grid.x_min), abs(grid.x_max)) - absorber_width
    if x_phys <= 0.0:
        raise ValueError("absorber wider than the half-domain")
    s = np.abs(x) - x_phys
    w = absorber_width
    ramp = x_phys + 0.5 * np.minimum(s, w) + (w / (2.0 * np.pi)) * np.sin(
        np.pi * np.minimum(s, w) / w
    )
    return np.where(s <= 0.0, x, np.sign(x) * ramp)


@dataclass(frozen=True)
class PotentialModel:
    """Stationary potential, emission observable and force-masked couplings.

    v0_masked = V0(xt) enters the Hamiltonian; x_masked is the coordinate of
    the dipole coupling; accel holds the physical stationary acceleration
    used as the emission observable and as the adjoint source operator.
    """

    grid: SpatialGrid
    v0: np.ndarray
    accel: np.ndarray
    v0_masked: np.ndarray
    x_masked: np.ndarray
    absorber_width: float

    @classmethod
    def build(cls, grid: SpatialGrid, absorber_width: float = 40.0) -> "PotentialModel":
        v0 = truncated_coulomb(grid)
        xt = force_mask_coordinate(grid, absorber_width)
        v0_masked = 1.0 - 1.0 / np.sqrt(xt**2 + 1.0)
        return cls(
            grid=grid,
            v0=v0,
            accel=stationary_acceleration(grid),
            v0_masked=v0_masked,
            x_masked=xt,
            absorber_width=absorber_width,
        )


def apply_hamiltonian(
    psi: np.ndarray,
    eps: float,
    pot: PotentialModel,
    cap: np.ndarray | None = None,
    adjoint: bool = False,
) -> np.ndarray:
    """H psi (or H^dagger psi) at field value eps.

    Kinetic term via the Fourier grid; the potential, the force-masked dipole
    coupling -x_masked*eps, and the complex absorbing potential are diagonal.
    The adjoint differs only by conjugating the absorbing potential.
    """
    if psi.shape != (pot.grid.n_x,):
        raise ValueError("wavefunction does not match the spatial grid")
    out = sfft.ifft(pot.grid.kinetic_energies() * sfft.fft(psi))
    diag = pot.v0_masked - pot.x_masked * eps
    if cap is not None:
        if cap.shape != psi.shape:
            raise ValueError("absorbing potential does not match the spatial grid")
        diag = diag + (np.conj(cap) if adjoint else cap)
    return out + diag * psi


def hamiltonian_matrix(
    pot: PotentialModel, cap: np.ndarray | None = None, eps: float = 0.0
) -> np.ndarray:
    """Dense matrix of the same operator apply_hamiltonian implements.

    Built by applying the kinetic operator to identity columns so that the
    matrix and the FFT path agree to roundoff.
    """
    n = pot.grid.n_x
    kin = sfft.ifft(
        pot.grid.kinetic_energies()[:, None] * sfft.fft(np.eye(n), axis=0), axis=0
    )
    diag = pot.v0_masked - pot.x_masked * eps
    if cap is not None:
        diag = diag + cap
        return kin + np.diag(diag.astype(complex))
    return np.real(kin) + np.diag(diag)


def ground_state(pot: PotentialModel) -> tuple[np.ndarray, float, float]:
    """Normalized ground state and the two lowest eigenvalues of H0.

    Dense diagonalization of the Fourier-grid Hamiltonian (no absorbing
    potential).  The returned state is real, normalized to unit grid norm,
    with a positive-mean sign convention.
    """
    h0 = hamiltonian_matrix(pot)
    h0 = 0.5 * (h0 + h0.T)
    energies, vectors = scipy.linalg.eigh(h0)
    psi0 = vectors[:, 0] / np.sqrt(pot.grid.dx)
    if psi0.sum() < 0.0:
        psi0 = -psi0
    residual = apply_hamiltonian(psi0.astype(complex), 0.0, pot) - energies[0] * psi0
    if np.sqrt(norm_squared(pot.grid, residual)) > 1e-8:
        raise RuntimeError("ground-state residual above 1e-8")
    return psi0.astype(complex), float(energies[0]), float(energies[1])
