"""Reduced-space BFGS driver for the control functional.

The search space is the set of spectral coefficients inside the source band
(filter values above double machine precision); everything outside is pinned
to exact zero.  Three ingredients keep every iterate on the feasible
manifold (field vanishing at both window endpoints, band-confined, peak
below eps_max):

- the initial inverse Hessian is the inverse curvature of the energy
  penalty, (1/2) diag(ftilde/w), so the first search direction is the
  displacement toward the Euler-Lagrange field, which is boundary-feasible;
- the BFGS update keeps directions inside the span of feasible vectors;
- the line search caps the step at the largest kappa for which the updated
  field still satisfies |eps(t_k)| <= eps_max.

The line search brackets and sections with cubic Hermite interpolation,
using the gradient at every probe (each probe already pays for a forward
plus adjoint propagation, so the derivative is essentially free).  A probe
is accepted on strict decrease plus the curvature condition
|phi'(kappa)| <= -sigma phi'(0).

When the relative update drops below the termination tolerance the inverse
Hessian is reset once to its diagonal initial form and the iteration
continues; the second match terminates.  delta^T gamma <= 0 events skip the
Hessian update.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from hhgopt.functional import (
    ControlProblem,
    FunctionalBreakdown,
    ReducedSpace,
    evaluate_with_gradient,
    project_to_feasible,
    reduced_space,
)
from hhgopt.spectral import dct1_inverse, endpoint_values

__all__ = [
    "LineSearchParams",
    "LineSearchError",
    "DescentDirectionError",
    "FeasibilityError",
    "OptimizeOptions",
    "Evaluation",
    "ProbePoint",
    "LineSearchResult",
    "IterationRecord",
    "RunRecord",
    "initial_inverse_hessian",
    "bfgs_update",
    "kappa_max",
    "line_search",
    "bfgs_minimize",
    "make_initial_guess",
    "optimize",
    "reduced_space",
]

log = logging.getLogger(__name__)


class LineSearchError(RuntimeError):
    """No acceptable point was found (often: eps_max too small)."""


class DescentDirectionError(ValueError):
    """The provided direction is not a descent direction."""


class FeasibilityError(RuntimeError):
    """An iterate violated the feasibility invariants."""


@dataclass(frozen=True)
class LineSearchParams:
    sigma: float = 0.9
    rho: float = 0.0
    tau1: float = 9.0
    tau2: float = 0.1
    tau3: float = 0.5
    f_bar: float = -math.inf
    kappa0: float = 1.0
    eps_max: float = 0.15

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho < self.sigma < 1.0:
            raise ValueError("need 0 <= rho < sigma < 1")
        if not self.eps_max > 0.0:
            raise ValueError("eps_max must be positive")


def initial_inverse_hessian(
    space: ReducedSpace, ftilde: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """(1/2) diag(ftilde_r / w_r): the inverse curvature of -J_energy."""
    r = space.indices
    return np.diag(0.5 * ftilde[r] / weights[r])


def bfgs_update(sinv: np.ndarray, delta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Inverse-Hessian BFGS update; requires delta^T gamma > 0."""
    dg = float(delta @ gamma)
    if dg <= 0.0:
        raise ValueError(f"curvature condition delta^T gamma > 0 violated ({dg:.3e})")
    sg = sinv @ gamma
    gsg = float(gamma @ sg)
    cross = np.outer(delta, sg)
    updated = (
        sinv
        + (1.0 + gsg / dg) * np.outer(delta, delta) / dg
        - (cross + cross.T) / dg
    )
    return 0.5 * (updated + updated.T)


def kappa_max(eps_t: np.ndarray, q: np.ndarray, eps_max: float) -> float:
    """Largest step along the time-domain direction q keeping |eps| <= eps_max."""
    eps_t = np.asarray(eps_t, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.abs(eps_t).max() > eps_max * (1.0 + 1e-12):
        raise FeasibilityError(
            f"current field peak {np.abs(eps_t).max():.6g} already exceeds "
            f"eps_max={eps_max}"
        )
    moving = q != 0.0
    if not np.any(moving):
        return math.inf
    bounds = (eps_max - np.sign(q[moving]) * eps_t[moving]) / np.abs(q[moving])
    return float(max(bounds.min(), 0.0))


@dataclass(frozen=True)
class Evaluation:
    """Objective value phi = -J and gradient at one point."""

    value: float
    grad: np.ndarray
    breakdown: FunctionalBreakdown | None = None


@dataclass(frozen=True)
class ProbePoint:
    """One line-search evaluation along x + kappa p."""

    kappa: float
    value: float
    slope: float
    x: np.ndarray
    evaluation: Evaluation

    @property
    def grad(self) -> np.ndarray:
        return self.evaluation.grad


@dataclass(frozen=True)
class LineSearchResult:
    point: ProbePoint
    n_probes: int
    capped: bool


def _cubic_step(
    a: float, fa: float, da: float, b: float, fb: float, db: float,
    lo: float, hi: float,
) -> float:
    """Minimizer of the Hermite cubic through (a, fa, da), (b, fb, db).

    Falls back to the midpoint of [lo, hi] when the cubic has no interior
    minimum; the result is clipped into [lo, hi].
    """
    if lo > hi:
        lo, hi = hi, lo
    width = b - a
    if width == 0.0:
        return 0.5 * (lo + hi)
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0.0:
        return 0.5 * (lo + hi)
    d2 = math.copysign(math.sqrt(disc), width)
    denom = db - da + 2.0 * d2
    if denom == 0.0:
        return 0.5 * (lo + hi)
    step = b - width * (db + d2 - d1) / denom
    if not np.isfinite(step):
        return 0.5 * (lo + hi)
    return min(max(step, lo), hi)


def line_search(
    probe: Callable[[float], ProbePoint],
    start: ProbePoint,
    params: LineSearchParams,
    kappa_cap: float = math.inf,
    max_brackets: int = 20,
    max_sections: int = 50,
) -> LineSearchResult:
    """Fletcher-style bracket/section search for the objective phi = -J.

    `probe(kappa)` must return a ProbePoint at x + kappa p.  The accepted
    point strictly decreases phi and satisfies the curvature condition.
    When the peak-field cap truncates bracketing before the curvature
    condition is met, the capped point is accepted if it strictly decreases;
    otherwise the failure signals that eps_max is too small.
    """
    phi0, slope0 = start.value, start.slope
    if slope0 >= 0.0:
        raise DescentDirectionError(f"slope at kappa=0 is {slope0:.3e} >= 0")
    if not kappa_cap > 0.0:
        raise LineSearchError("kappa cap is zero: the field already rides the peak")
    acceptable_slope = -params.sigma * slope0

    n_probes = 0

    def take(kappa: float) -> ProbePoint:
        nonlocal n_probes
        n_probes += 1
        return probe(float(kappa))

    # --- bracketing ---
    prev = start
    alpha = min(params.kappa0, kappa_cap)
    bracket = None
    for _ in range(max_brackets):
        cur = take(alpha)
        rho_line = phi0 + params.rho * cur.kappa * slope0
        if cur.value > rho_line or cur.value >= prev.value:
            bracket = (prev, cur)
            break
        if abs(cur.slope) <= acceptable_slope:
            return LineSearchResult(cur, n_probes, capped=False)
        if cur.slope >= 0.0:
            bracket = (cur, prev)
            break
        if alpha >= kappa_cap * (1.0 - 1e-12):
            # Cannot extend past the cap; strict decrease already holds here.
            return LineSearchResult(cur, n_probes, capped=True)
        gap = cur.kappa - prev.kappa
        lo = cur.kappa + gap
        hi = min(kappa_cap, cur.kappa + params.tau1 * gap)
        trial = _cubic_step(
            prev.kappa, prev.value, prev.slope,
            cur.kappa, cur.value, cur.slope,
            min(lo, hi), hi,
        )
        prev = cur
        alpha = min(max(trial, min(lo, hi)), hi)
    if bracket is None:
        raise LineSearchError("bracketing exhausted its iteration budget")

    # --- sectioning ---
    a_pt, b_pt = bracket
    for _ in range(max_sections):
        span = b_pt.kappa - a_pt.kappa
        lo = a_pt.kappa + params.tau2 * span
        hi = b_pt.kappa - params.tau3 * span
        cur = take(
            _cubic_step(
                a_pt.kappa, a_pt.value, a_pt.slope,
                b_pt.kappa, b_pt.value, b_pt.slope,
                min(lo, hi), max(lo, hi),
            )
        )
        rho_line = phi0 + params.rho * cur.kappa * slope0
        if cur.value > rho_line or cur.value >= a_pt.value:
            b_pt = cur
        else:
            if abs(cur.slope) <= acceptable_slope:
                return LineSearchResult(cur, n_probes, capped=False)
            if cur.slope * (b_pt.kappa - a_pt.kappa) >= 0.0:
                b_pt = a_pt
            a_pt = cur
        if abs(b_pt.kappa - a_pt.kappa) <= 1e-14 * max(1.0, abs(a_pt.kappa)):
            break
    if a_pt.kappa > 0.0 and a_pt.value < phi0:
        log.warning("sectioning stalled; accepting best strict-decrease point")
        return LineSearchResult(a_pt, n_probes, capped=False)
    raise LineSearchError(
        "no acceptable point under the peak cap; eps_max may be too small"
    )


@dataclass(frozen=True)
class OptimizeOptions:
    max_iterations: int = 60
    termination_tol: float = 1e-4
    reset_limit: int = 1
    line_params: LineSearchParams = field(default_factory=LineSearchParams)
    stuck_improvement: float = 1e-10
    stuck_window: int = 3
    preparation: bool = False
    preparation_iterations: int = 4


@dataclass(frozen=True)
class IterationRecord:
    index: int
    kappa: float
    value: float
    grad_inf: float
    step_rel: float
    n_probes: int
    hessian_updated: bool
    reset_after: bool
    breakdown: FunctionalBreakdown | None = None

    def as_dict(self) -> dict:
        out = {
            "index": self.index,
            "kappa": self.kappa,
            "value": self.value,
            "grad_inf": self.grad_inf,
            "step_rel": self.step_rel,
            "n_probes": self.n_probes,
            "hessian_updated": self.hessian_updated,
            "reset_after": self.reset_after,
        }
        if self.breakdown is not None:
            out.update(self.breakdown.as_dict())
        return out


@dataclass
class RunRecord:
    status: str
    x: np.ndarray
    value: float
    grad: np.ndarray
    iterations: list[IterationRecord]
    resets: list[int]
    n_evaluations: int
    initial: Evaluation
    breakdown: FunctionalBreakdown | None = None

    def as_dict(self) -> dict:
        out = {
            "status": self.status,
            "value": self.value,
            "n_evaluations": self.n_evaluations,
            "resets": self.resets,
            "iterations": [it.as_dict() for it in self.iterations],
        }
        if self.initial.breakdown is not None:
            out["initial"] = self.initial.breakdown.as_dict()
        if self.breakdown is not None:
            out["final"] = self.breakdown.as_dict()
        return out


def bfgs_minimize(
    evaluate_fn: Callable[[np.ndarray], Evaluation],
    x0: np.ndarray,
    sinv0: np.ndarray,
    options: OptimizeOptions,
    check_iterate: Callable[[np.ndarray], None] | None = None,
    direction_cap: Callable[[np.ndarray, np.ndarray], float] | None = None,
    clean_direction: Callable[[np.ndarray], np.ndarray] | None = None,
) -> RunRecord:
    """Generic capped-line-search BFGS on the objective phi.

    `check_iterate` may raise on infeasible iterates; `direction_cap(x, p)`
    returns the largest admissible step along p (math.inf when unbounded);
    `clean_direction` may snap a direction back onto a feasible manifold
    (used to strip roundoff that would otherwise accumulate across updates).
    """
    params = options.line_params
    n_evals = 0

    def count_eval(x: np.ndarray) -> Evaluation:
        nonlocal n_evals
        n_evals += 1
        return evaluate_fn(x)

    x = np.asarray(x0, dtype=float)
    if check_iterate is not None:
        check_iterate(x)
    ev = count_eval(x)
    initial_ev = ev

    sinv = sinv0.copy()
    records: list[IterationRecord] = []
    resets: list[int] = []
    resets_used = 0
    status = "max_iterations"
    line_failed_once = False

    for it in range(options.max_iterations):
        p = -(sinv @ ev.grad)
        if clean_direction is not None:
            p = clean_direction(p)
        slope = float(p @ ev.grad)
        if slope >= 0.0:
            if resets_used < options.reset_limit:
                sinv = sinv0.copy()
                resets.append(it)
                resets_used += 1
                p = -(sinv @ ev.grad)
                if clean_direction is not None:
                    p = clean_direction(p)
                slope = float(p @ ev.grad)
            if slope >= 0.0:
                status = "stationary"
                break

        cap = direction_cap(x, p) if direction_cap is not None else math.inf

        def probe(kappa: float, _x=x, _p=p) -> ProbePoint:
            xk = _x + kappa * _p
            evk = count_eval(xk)
            return ProbePoint(
                kappa=kappa,
                value=evk.value,
                slope=float(_p @ evk.grad),
                x=xk,
                evaluation=evk,
            )

        start = ProbePoint(0.0, ev.value, slope, x, ev)
        try:
            result = line_search(probe, start, params, kappa_cap=cap)
        except LineSearchError:
            if resets_used < options.reset_limit and not line_failed_once:
                sinv = sinv0.copy()
                resets.append(it)
                resets_used += 1
                line_failed_once = True
                continue
            status = "line_search_failure"
            break

        pt = result.point
        if check_iterate is not None:
            check_iterate(pt.x)
        delta = pt.x - x
        gamma_v = pt.grad - ev.grad
        curvature = float(delta @ gamma_v)
        updated = curvature > 0.0
        if updated:
            sinv = bfgs_update(sinv, delta, gamma_v)
        else:
            log.warning(
                "iteration %d: delta^T gamma = %.3e <= 0, update skipped",
                it, curvature,
            )

        x_norm = float(np.linalg.norm(pt.x))
        step_rel = float(np.linalg.norm(delta)) / x_norm if x_norm > 0 else math.inf
        x, ev = pt.x, pt.evaluation

        terminated = step_rel <= options.termination_tol
        stuck = _is_stuck(records, ev.value, options)
        reset_now = (terminated or stuck) and resets_used < options.reset_limit
        records.append(
            IterationRecord(
                index=it,
                kappa=pt.kappa,
                value=ev.value,
                grad_inf=float(np.abs(ev.grad).max()),
                step_rel=step_rel,
                n_probes=result.n_probes,
                hessian_updated=updated,
                reset_after=reset_now,
                breakdown=ev.breakdown,
            )
        )
        if reset_now:
            sinv = sinv0.copy()
            resets.append(it + 1)
            resets_used += 1
            continue
        if terminated:
            status = "converged"
            break

    return RunRecord(
        status=status,
        x=x,
        value=ev.value,
        grad=ev.grad,
        iterations=records,
        resets=resets,
        n_evaluations=n_evals,
        initial=initial_ev,
        breakdown=ev.breakdown,
    )


def _is_stuck(
    records: list[IterationRecord], value: float, options: OptimizeOptions
) -> bool:
    window = options.stuck_window
    if len(records) < window:
        return False
    past = records[-window].value
    scale = max(abs(value), abs(past), 1e-300)
    return (past - value) / scale < options.stuck_improvement


def make_initial_guess(eps_unc0: np.ndarray, problem: ControlProblem) -> np.ndarray:
    """Boundary-project an unconstrained guess spectrum into the reduced space.

    A guess proportional to ftilde projects to the zero field, which is a
    stationary point the iteration cannot leave; it is returned with a
    warning so the caller can pick a better spectral shape.
    """
    x0 = project_to_feasible(eps_unc0, problem)
    scale = float(np.abs(np.asarray(eps_unc0)).max())
    if scale > 0.0 and float(np.abs(x0).max()) <= 1e-12 * scale:
        warnings.warn(
            "initial guess projected to the zero field (guess proportional to "
            "the scaled filter?); the optimizer cannot leave this point",
            stacklevel=2,
        )
    return x0


def _feasibility_check(
    x: np.ndarray, problem: ControlProblem, eps_max: float
) -> np.ndarray:
    from hhgopt.functional import BOUNDARY_ATOL, BOUNDARY_RTOL

    full = problem.reduced.expand(x)
    eps_t = dct1_inverse(full, problem.control_grid)
    peak = float(np.abs(eps_t).max())
    e0, eT = endpoint_values(full, problem.control_grid)
    if max(abs(e0), abs(eT)) > max(BOUNDARY_RTOL * peak, BOUNDARY_ATOL):
        raise FeasibilityError(
            f"iterate endpoints ({e0:.2e}, {eT:.2e}) above 1e-12 of peak {peak:.2e}"
        )
    if peak > eps_max * (1.0 + 1e-9):
        raise FeasibilityError(f"iterate peak {peak:.6g} exceeds eps_max={eps_max}")
    return eps_t


def optimize(
    problem: ControlProblem,
    guess: np.ndarray,
    options: OptimizeOptions | None = None,
) -> RunRecord:
    """Minimize -J from `guess` (a reduced, boundary-feasible vector)."""
    options = options or OptimizeOptions()
    params = options.line_params
    problem = problem.freeze_substeps(
        problem.reduced.expand(guess), peak=params.eps_max
    )

    if options.preparation:
        problem, guess = _run_preparation(problem, guess, options)

    def evaluate_fn(x: np.ndarray) -> Evaluation:
        bd, g, _ = evaluate_with_gradient(x, problem)
        return Evaluation(value=-bd.j_total, grad=g, breakdown=bd)

    def check_iterate(x: np.ndarray) -> None:
        _feasibility_check(x, problem, params.eps_max)

    def direction_cap(x: np.ndarray, p: np.ndarray) -> float:
        eps_t = dct1_inverse(problem.reduced.expand(x), problem.control_grid)
        q = dct1_inverse(problem.reduced.expand(p), problem.control_grid)
        return kappa_max(eps_t, q, params.eps_max)

    def clean_direction(p: np.ndarray) -> np.ndarray:
        # In exact arithmetic p is a combination of endpoint-feasible
        # vectors; the projection strips the float roundoff so iterates
        # keep exact boundary zeros across many updates.
        return project_to_feasible(problem.reduced.expand(p), problem)

    sinv0 = initial_inverse_hessian(problem.reduced, problem.ftilde, problem.weights)
    record = bfgs_minimize(
        evaluate_fn,
        guess,
        sinv0,
        options,
        check_iterate=check_iterate,
        direction_cap=direction_cap,
        clean_direction=clean_direction,
    )
    if record.initial.breakdown is not None and record.initial.breakdown.j_total <= 0.0:
        warnings.warn(
            f"initial functional value J = {record.initial.breakdown.j_total:.3e}"
            " <= 0: the search tends toward the zero-field stationary point;"
            " consider a stronger guess or the preparation stage",
            stacklevel=2,
        )
    return record


def _preparation_factor(bd: FunctionalBreakdown) -> float:
    penalty = abs(bd.j_energy + bd.j_ion)
    if bd.j_max <= 0.0 or penalty == 0.0:
        return 1.0
    return min(1.0, 0.5 * bd.j_max / penalty)


def _run_preparation(
    problem: ControlProblem, guess: np.ndarray, options: OptimizeOptions
) -> tuple[ControlProblem, np.ndarray]:
    """Penalty-ramped warmup: scale alpha and the sigma amplitude down until
    the functional starts positive, then walk the factor back up (x10 per
    stage) running a few iterations at each stage."""
    bd, _, _ = evaluate_with_gradient(guess, problem)
    factor = _preparation_factor(bd)
    if factor >= 1.0:
        return problem, guess
    x = guess
    while factor < 1.0:
        staged = replace(
            problem,
            alpha=problem.alpha * factor,
            sigma=replace(problem.sigma, scale=problem.sigma.scale * factor),
        )
        stage_options = replace(
            options,
            preparation=False,
            max_iterations=options.preparation_iterations,
            reset_limit=0,
        )
        record = optimize(staged, x, stage_options)
        x = record.x
        factor = min(1.0, factor * 10.0)
        if factor >= 1.0:
            break
    return problem, x
