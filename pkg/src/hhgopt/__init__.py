"""Optimal-control enhancement of selected harmonics in a 1D strong-field model.

Subpackages by responsibility:

- spectral:   DCT-1 transforms, frequency quadrature, band filters, and the
              endpoint projection of control fields.
- system:     spatial Fourier grid, truncated-Coulomb model, Hamiltonian
              application, ground state, near-boundary force turn-off.
- absorber:   complex absorbing potentials from cosine series, static
              scattering evaluation, and CAP coefficient optimization.
- dynamics:   forward/adjoint wavefunction propagation and expectation series.
- functional: the maximization functional (emission, energy and ionization
              terms) and its analytic gradient in the reduced spectral space.
- optimizer:  reduced-space BFGS with curvature line search and peak cap.
- experiments: configuration-driven experiment runner (also the CLI backend).
"""

from hhgopt.spectral import TimeGrid
from hhgopt.system import SpatialGrid, PotentialModel

__all__ = ["TimeGrid", "SpatialGrid", "PotentialModel"]
__version__ = "0.1.0"
