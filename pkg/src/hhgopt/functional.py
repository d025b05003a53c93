"""The maximization functional and its reduced-space gradient.

The objective combines three ingredients evaluated on one forward
propagation of the driven model:

    J = J_max + J_energy + J_ion

- J_max     = (1/2) sum_j f_C(w_j) Cbar(w_j)^2 w_j,  the filtered spectral
              power of the stationary-acceleration expectation series,
- J_energy  = -sum_j eps_bar(w_j)^2 w_j / ftilde(w_j),  the band/energy
              penalty (ftilde = f_eps / alpha),
- J_ion     = sigma(<psi(T)|psi(T)>),  the sigmoid ionization penalty.

The gradient with respect to the reduced spectral coefficients follows from
the adjoint state chi: backward-propagated under H^dagger with the filtered
emission source, terminal condition sigma'(survival) psi(T).  In the
minimization convention (objective -J)

    g_j = 2 w_j [ eps_bar_j/ftilde_j - mbar(w_j) + lambda_0 + lambda_T (-1)^j ]

with mbar the cosine transform of -Im<chi|X|psi> and the multipliers
obtained by feeding ftilde*mbar through the endpoint-projection system.  The
lambda terms make search directions built from the diagonal initial inverse
Hessian stay on the boundary-feasible manifold; finite differences of the
plain objective see the gradient without them, finite differences of the
multiplier-frozen Lagrangian see it exactly.

All quadratures (emission transform, adjoint impulses, gradient assembly)
live on a common refinement of the control grid, so the analytic gradient is
the exact derivative of the implemented discrete objective up to propagator
roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from hhgopt.absorber import CapSpec, build_cap
from hhgopt.dynamics import (
    PropagatorSettings,
    SourceTerm,
    Trajectory,
    propagate_backward,
    propagate_forward,
    survival_probability,
)
from hhgopt.spectral import (
    FilterFunction,
    TimeGrid,
    boundary_project,
    dct1_forward,
    dct1_inverse,
    endpoint_values,
    gaussian_filter,
    integration_weights,
)
from hhgopt.system import PotentialModel, SpatialGrid, ground_state
from hhgopt.dynamics import expectation_series

__all__ = [
    "SigmaPenalty",
    "ReducedSpace",
    "reduced_space",
    "ControlProblem",
    "FunctionalBreakdown",
    "BoundaryViolationError",
    "j_max",
    "j_energy",
    "fluence",
    "evaluate",
    "gradient",
    "evaluate_with_gradient",
    "project_to_feasible",
]

REDUCED_THRESHOLD = 2.22e-16  # double machine precision, the band cutoff


class BoundaryViolationError(ValueError):
    """A field violating eps(0) = eps(T) = 0 reached the evaluator."""


@dataclass(frozen=True)
class SigmaPenalty:
    """sigma(y) = scale * (tanh[steepness (y - threshold)] - tanh[steepness (1 - threshold)]).

    Monotone increasing, sigma(1) = 0; steeply negative once the survival
    probability y drops below the threshold.
    """

    scale: float = 5e-3
    steepness: float = 50.0
    threshold: float = 0.9

    def __call__(self, y: float) -> float:
        return self.scale * (
            math.tanh(self.steepness * (y - self.threshold))
            - math.tanh(self.steepness * (1.0 - self.threshold))
        )

    def derivative(self, y: float) -> float:
        return self.scale * self.steepness / math.cosh(
            self.steepness * (y - self.threshold)
        ) ** 2


@dataclass(frozen=True)
class ReducedSpace:
    """Indices of the spectral coefficients the optimizer actually varies."""

    indices: np.ndarray
    n_full: int

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=int)
        object.__setattr__(self, "indices", idx)
        if idx.size == 0:
            raise ValueError("reduced space is empty")

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        reduced = np.asarray(reduced, dtype=float)
        if reduced.shape != (self.size,):
            raise ValueError("reduced vector has the wrong length")
        full = np.zeros(self.n_full)
        full[self.indices] = reduced
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full, dtype=float)[self.indices]


def reduced_space(
    f_eps: FilterFunction | np.ndarray, threshold: float = REDUCED_THRESHOLD
) -> ReducedSpace:
    values = f_eps.values if isinstance(f_eps, FilterFunction) else np.asarray(f_eps)
    indices = np.nonzero(values >= threshold)[0]
    if indices.size == 0:
        raise ValueError(
            f"no frequency passes the threshold {threshold:g}; max filter value "
            f"is {values.max():g}"
        )
    return ReducedSpace(indices=indices, n_full=values.size)


@dataclass(frozen=True)
class FunctionalBreakdown:
    j_total: float
    j_max: float
    j_energy: float
    j_ion: float
    fluence: float
    survival: float

    def as_dict(self) -> dict:
        return {
            "j_total": self.j_total,
            "j_max": self.j_max,
            "j_energy": self.j_energy,
            "j_ion": self.j_ion,
            "fluence": self.fluence,
            "survival": self.survival,
        }


@dataclass(frozen=True)
class ControlProblem:
    """Everything needed to evaluate J and its gradient for one target.

    The control field lives on `control_grid`; trajectories and all
    emission/adjoint quadratures live on `mesh`, its `quad_oversample`-fold
    refinement (same omega spacing, higher Nyquist so node quadratures of
    the smooth trajectory signals are alias-free).
    """

    pot: PotentialModel
    cap: np.ndarray | None
    psi0: np.ndarray
    control_grid: TimeGrid
    mesh: TimeGrid
    f_eps: FilterFunction
    alpha: float
    f_c_mesh: np.ndarray
    sigma: SigmaPenalty
    harmonic: int
    omega0: float
    reduced: ReducedSpace
    settings: PropagatorSettings = field(default_factory=PropagatorSettings)

    @classmethod
    def build(
        cls,
        *,
        spatial_grid: SpatialGrid | None = None,
        absorber_width: float = 40.0,
        cap: np.ndarray | CapSpec | None = None,
        duration: float = 1000.0,
        n_t: int = 1024,
        quad_oversample: int = 4,
        omega0: float = 0.06,
        source_width: float = 0.01,
        alpha: float = 2e-6,
        harmonic: int = 13,
        target_width: float = 0.01,
        sigma: SigmaPenalty | None = None,
        reduced_threshold: float = REDUCED_THRESHOLD,
        settings: PropagatorSettings | None = None,
        psi0: np.ndarray | None = None,
    ) -> "ControlProblem":
        spatial_grid = spatial_grid or SpatialGrid.paper()
        pot = PotentialModel.build(spatial_grid, absorber_width)
        if psi0 is None:
            psi0, _, _ = ground_state(pot)
        if isinstance(cap, CapSpec):
            cap = build_cap(cap, spatial_grid)
        control_grid = TimeGrid(duration, n_t)
        mesh = control_grid.refined(quad_oversample)
        f_eps = gaussian_filter(omega0, source_width, control_grid, kind="source")
        target_center = harmonic * omega0
        f_c_mesh = np.exp(
            -((mesh.omegas - target_center) ** 2) / (2.0 * target_width**2)
        )
        return cls(
            pot=pot,
            cap=cap,
            psi0=psi0,
            control_grid=control_grid,
            mesh=mesh,
            f_eps=f_eps,
            alpha=alpha,
            f_c_mesh=f_c_mesh,
            sigma=sigma or SigmaPenalty(),
            harmonic=harmonic,
            omega0=omega0,
            reduced=reduced_space(f_eps, reduced_threshold),
            settings=settings or PropagatorSettings(),
        )

    @property
    def ftilde(self) -> np.ndarray:
        return self.f_eps.values / self.alpha

    @property
    def ftilde_filter(self) -> FilterFunction:
        return self.f_eps.scaled(self.alpha)

    @property
    def weights(self) -> np.ndarray:
        return integration_weights(self.control_grid)

    @property
    def mesh_weights(self) -> np.ndarray:
        return integration_weights(self.mesh)

    def with_settings(self, settings: PropagatorSettings) -> "ControlProblem":
        return replace(self, settings=settings)

    def freeze_substeps(self, field_coeffs: np.ndarray, peak: float | None = None
                        ) -> "ControlProblem":
        """Resolve the substep count once so later evaluations are smooth.

        The probe propagation runs with the given field inflated to `peak`
        (the strongest field the optimizer may visit); the certified count is
        then fixed in the returned problem's settings.
        """
        if self.settings.substeps is not None:
            return self
        coeffs = np.asarray(field_coeffs, dtype=float)
        if peak is not None:
            current = np.abs(dct1_inverse(coeffs, self.control_grid)).max()
            if current > 0.0:
                coeffs = coeffs * (peak / current)
        traj = propagate_forward(
            self.psi0, coeffs, self.control_grid, self.pot,
            cap=self.cap, mesh=self.mesh, settings=self.settings,
        )
        return self.with_settings(replace(self.settings, substeps=traj.substeps))


def j_max(c_series: np.ndarray, f_c: np.ndarray, grid: TimeGrid) -> float:
    """(1/2) sum_j f_C(w_j) Cbar(w_j)^2 w_j from the node series of <C>(t)."""
    cbar = dct1_forward(c_series, grid)
    return 0.5 * float(np.sum(f_c * cbar**2 * integration_weights(grid)))


def j_energy(
    eps_coeffs: np.ndarray,
    ftilde: np.ndarray,
    grid: TimeGrid,
    support: ReducedSpace | None = None,
    threshold: float = REDUCED_THRESHOLD,
) -> float:
    """-sum eps_bar^2 w / ftilde over the supported band."""
    eps_coeffs = np.asarray(eps_coeffs, dtype=float)
    weights = integration_weights(grid)
    if support is None:
        mask = ftilde >= threshold * ftilde.max()
    else:
        mask = np.zeros(grid.n_nodes, dtype=bool)
        mask[support.indices] = True
    outside = eps_coeffs[~mask]
    if outside.size and np.any(outside != 0.0):
        raise ValueError("nonzero coefficients outside the supported band")
    return -float(np.sum(eps_coeffs[mask] ** 2 * weights[mask] / ftilde[mask]))


def fluence(eps_t: np.ndarray, grid: TimeGrid) -> float:
    """Phi = int eps^2 dt by the trapezoid rule with endpoint halving."""
    eps_t = np.asarray(eps_t, dtype=float)
    if eps_t.shape != (grid.n_nodes,):
        raise ValueError("temporal field does not match the grid")
    return float(grid.dt * np.sum(eps_t**2 / grid.endpoint_halving()))


# Endpoint tolerance: 1e-12 of the field peak, with an absolute floor far
# below any physically relevant field so that roundoff dust inherited from
# near-cancelling line-search combinations is not flagged.
BOUNDARY_RTOL = 1e-12
BOUNDARY_ATOL = 1e-14


def _check_boundary(
    eps_full: np.ndarray, problem: ControlProblem, enforce: bool = True
) -> np.ndarray:
    eps_t = dct1_inverse(eps_full, problem.control_grid)
    peak = np.abs(eps_t).max()
    worst = max(abs(v) for v in endpoint_values(eps_full, problem.control_grid))
    if enforce and worst > max(BOUNDARY_RTOL * peak, BOUNDARY_ATOL):
        raise BoundaryViolationError(
            f"field endpoint residual {worst:.3e} exceeds "
            f"{BOUNDARY_RTOL:g} of peak {peak:.3e}"
        )
    return eps_t


def _forward(eps_full: np.ndarray, problem: ControlProblem) -> Trajectory:
    return propagate_forward(
        problem.psi0,
        eps_full,
        problem.control_grid,
        problem.pot,
        cap=problem.cap,
        mesh=problem.mesh,
        settings=problem.settings,
    )


def _assemble_breakdown(
    eps_r: np.ndarray,
    eps_full: np.ndarray,
    eps_t: np.ndarray,
    traj: Trajectory,
    problem: ControlProblem,
) -> tuple[FunctionalBreakdown, np.ndarray]:
    c_series = expectation_series(traj, problem.pot.accel)
    cbar = dct1_forward(c_series, problem.mesh)
    jm = 0.5 * float(np.sum(problem.f_c_mesh * cbar**2 * problem.mesh_weights))
    r = problem.reduced.indices
    je = -float(
        np.sum(eps_r**2 * problem.weights[r] / problem.ftilde[r])
    )
    surv = survival_probability(traj)
    ji = problem.sigma(surv)
    phi = fluence(eps_t, problem.control_grid)
    return (
        FunctionalBreakdown(
            j_total=jm + je + ji,
            j_max=jm,
            j_energy=je,
            j_ion=ji,
            fluence=phi,
            survival=surv,
        ),
        cbar,
    )


def evaluate(
    eps_r: np.ndarray, problem: ControlProblem, enforce_boundary: bool = True
) -> tuple[FunctionalBreakdown, Trajectory]:
    """Propagate the reduced field and assemble all functional terms.

    `enforce_boundary=False` admits endpoint-violating fields; probe
    evaluations of finite-difference oracles need it, the optimizer does not.
    """
    eps_r = np.asarray(eps_r, dtype=float)
    eps_full = problem.reduced.expand(eps_r)
    eps_t = _check_boundary(eps_full, problem, enforce=enforce_boundary)
    traj = _forward(eps_full, problem)
    breakdown, _ = _assemble_breakdown(eps_r, eps_full, eps_t, traj, problem)
    return breakdown, traj


def evaluate_with_gradient(
    eps_r: np.ndarray, problem: ControlProblem
) -> tuple[FunctionalBreakdown, np.ndarray, Trajectory]:
    """One forward plus one adjoint propagation: J, its gradient, trajectory."""
    eps_r = np.asarray(eps_r, dtype=float)
    eps_full = problem.reduced.expand(eps_r)
    eps_t = _check_boundary(eps_full, problem)
    traj = _forward(eps_full, problem)
    breakdown, cbar = _assemble_breakdown(eps_r, eps_full, eps_t, traj, problem)

    chi_T = problem.sigma.derivative(breakdown.survival) * traj.final_state
    source = SourceTerm.from_emission(
        cbar, problem.f_c_mesh, traj, problem.pot.accel
    )
    backward = propagate_backward(
        chi_T,
        eps_full,
        problem.control_grid,
        problem.pot,
        cap=problem.cap,
        source=source,
        settings=problem.settings,
    )
    mbar_mesh = dct1_forward(backward.response, problem.mesh)
    mbar = mbar_mesh[: problem.control_grid.n_nodes]

    eps_unc = problem.ftilde * mbar
    _, mult = boundary_project(eps_unc, problem.ftilde_filter, problem.control_grid)

    r = problem.reduced.indices
    signs = np.where(r % 2 == 0, 1.0, -1.0)
    grad = 2.0 * problem.weights[r] * (
        eps_r / problem.ftilde[r] - mbar[r] + mult.lambda0 + mult.lambdaT * signs
    )
    return breakdown, grad, traj


def gradient(eps_r: np.ndarray, problem: ControlProblem) -> np.ndarray:
    """Reduced-space gradient of the minimization objective -J."""
    _, grad, _ = evaluate_with_gradient(eps_r, problem)
    return grad


def project_to_feasible(
    eps_unc_full: np.ndarray, problem: ControlProblem
) -> np.ndarray:
    """Boundary-project an unconstrained spectrum and restrict to the band."""
    projected, _ = boundary_project(
        np.asarray(eps_unc_full, dtype=float),
        problem.ftilde_filter,
        problem.control_grid,
    )
    return problem.reduced.restrict(projected)
