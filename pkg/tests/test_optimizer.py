import math

import numpy as np
import pytest

from hhgopt.functional import evaluate, reduced_space
from hhgopt.optimizer import (
    DescentDirectionError,
    Evaluation,
    FeasibilityError,
    LineSearchError,
    LineSearchParams,
    OptimizeOptions,
    ProbePoint,
    bfgs_minimize,
    bfgs_update,
    initial_inverse_hessian,
    kappa_max,
    line_search,
    make_initial_guess,
    optimize,
)
from hhgopt.spectral import TimeGrid, dct1_inverse, endpoint_values, gaussian_filter


def _rng(seed=0):
    return np.random.default_rng(seed)


def _quadratic_probe_factory(f, df):
    def factory(kappa):
        return ProbePoint(
            kappa=kappa,
            value=f(kappa),
            slope=df(kappa),
            x=np.array([kappa]),
            evaluation=Evaluation(f(kappa), np.array([df(kappa)])),
        )

    return factory


class TestInitialHessian:
    def test_diagonal_entries(self):
        g = TimeGrid(1000.0, 1024)
        f_eps = gaussian_filter(0.06, 0.01, g)
        space = reduced_space(f_eps)
        ftilde = f_eps.values / 2e-6
        sinv = initial_inverse_hessian(space, ftilde, np.full(g.n_nodes, np.pi / 1000.0))
        j = space.indices[5]
        expected = ftilde[j] * 1000.0 / (2.0 * np.pi)
        assert sinv[5, 5] == pytest.approx(expected, rel=1e-14)
        assert np.count_nonzero(sinv - np.diag(np.diag(sinv))) == 0

    def test_rectangular_filter_gives_identity_scaling(self):
        # f in {0, 1} away from the boundary frequencies: S0^-1 is a multiple
        # of the identity, so the common unit initial Hessian is admissible.
        g = TimeGrid(100.0, 64)
        values = np.zeros(g.n_nodes)
        values[10:20] = 1.0
        space = reduced_space(values)
        sinv = initial_inverse_hessian(space, values / 2e-6, np.full(g.n_nodes, np.pi / 100.0))
        diag = np.diag(sinv)
        assert np.allclose(diag, diag[0])

    def test_first_direction_is_boundary_feasible(self, mini_problem, mini_guess):
        from hhgopt.functional import evaluate_with_gradient

        problem = mini_problem.freeze_substeps(
            mini_problem.reduced.expand(mini_guess), peak=0.15
        )
        _, g0, _ = evaluate_with_gradient(mini_guess, problem)
        sinv0 = initial_inverse_hessian(problem.reduced, problem.ftilde, problem.weights)
        p0 = -(sinv0 @ g0)
        e0, eT = endpoint_values(problem.reduced.expand(p0), problem.control_grid)
        scale = np.abs(dct1_inverse(problem.reduced.expand(p0), problem.control_grid)).max()
        assert abs(e0) <= 1e-10 * scale
        assert abs(eT) <= 1e-10 * scale

    def test_p0_matches_euler_lagrange_displacement(self):
        # Pure algebra of the gradient assembly: with S0^-1 = (1/2) f~/w and
        # g = 2w(x/f~ - mbar + l0 + lT cos), -S0^-1 g = -x + x_EL.
        g = TimeGrid(100.0, 64)
        f_eps = gaussian_filter(0.6, 0.2, g)
        space = reduced_space(f_eps, threshold=1e-6)
        r = space.indices
        ftilde = f_eps.values / 0.1
        w = np.pi / 100.0 / g.endpoint_halving()
        rng = _rng(4)
        x = rng.normal(size=space.size)
        mbar = rng.normal(size=g.n_nodes)
        l0, lT = 0.3, -0.2
        signs = np.where(r % 2 == 0, 1.0, -1.0)
        grad = 2.0 * w[r] * (x / ftilde[r] - mbar[r] + l0 + lT * signs)
        sinv0 = initial_inverse_hessian(space, ftilde, w)
        p0 = -(sinv0 @ grad)
        x_el = ftilde[r] * (mbar[r] - l0 - lT * signs)
        assert np.allclose(p0, -x + x_el, rtol=1e-12)


class TestBfgsUpdate:
    def test_secant_condition_and_symmetry(self):
        r = _rng(1)
        sinv = np.eye(6)
        for _ in range(5):
            delta = r.normal(size=6)
            gamma = delta + 0.3 * r.normal(size=6)
            if delta @ gamma <= 0:
                continue
            sinv = bfgs_update(sinv, delta, gamma)
            assert np.abs(sinv @ gamma - delta).max() <= 1e-10 * np.abs(delta).max()
            assert np.abs(sinv - sinv.T).max() <= 1e-12

    def test_nonpositive_curvature_rejected(self):
        with pytest.raises(ValueError):
            bfgs_update(np.eye(2), np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
        with pytest.raises(ValueError):
            bfgs_update(np.eye(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]))

    def test_quadratic_terminates_in_dimension_steps(self):
        # with exact line searches BFGS solves an n-dim quadratic in <= n+1
        # iterations
        r = _rng(7)
        n = 6
        m = r.normal(size=(n, n))
        a = m @ m.T + n * np.eye(n)
        b = r.normal(size=n)
        x = np.zeros(n)
        sinv = np.eye(n)
        for it in range(n + 1):
            g = a @ x - b
            if np.abs(g).max() < 1e-10:
                break
            p = -(sinv @ g)
            kappa = -(p @ g) / (p @ a @ p)  # exact minimizer along p
            delta = kappa * p
            x = x + delta
            gamma = a @ (x) - b - g
            if delta @ gamma > 0:
                sinv = bfgs_update(sinv, delta, gamma)
        assert np.abs(x - np.linalg.solve(a, b)).max() <= 1e-8


class TestKappaMax:
    def test_zero_field(self):
        q = np.array([0.0, 2.0, -1.0])
        assert kappa_max(np.zeros(3), q, 0.15) == pytest.approx(0.15 / 2.0)

    def test_zero_direction_unbounded(self):
        assert kappa_max(np.zeros(4), np.zeros(4), 0.15) == math.inf

    def test_overfull_field_rejected(self):
        with pytest.raises(FeasibilityError):
            kappa_max(np.array([0.2]), np.array([1.0]), 0.15)

    def test_binding_sample(self):
        eps_t = np.array([0.1, -0.05])
        q = np.array([1.0, -1.0])
        # headroom 0.05 upward at the first sample, 0.10 downward at the second
        assert kappa_max(eps_t, q, 0.15) == pytest.approx(0.05)


class TestLineSearch:
    def test_exact_minimizer_in_one_bracket_and_section(self):
        f = lambda k: (k - 0.3) ** 2
        df = lambda k: 2.0 * (k - 0.3)
        probe = _quadratic_probe_factory(f, df)
        result = line_search(probe, probe(0.0), LineSearchParams(), kappa_cap=math.inf)
        assert result.point.kappa == pytest.approx(0.3, abs=1e-12)
        assert result.n_probes == 2  # one bracketing probe, one section probe

    def test_peak_cap_accepts_boundary_point(self):
        f = lambda k: (k - 100.0) ** 2
        df = lambda k: 2.0 * (k - 100.0)
        probe = _quadratic_probe_factory(f, df)
        result = line_search(probe, probe(0.0), LineSearchParams(), kappa_cap=1.0)
        assert result.capped
        assert result.point.kappa == pytest.approx(1.0)

    def test_non_descent_rejected(self):
        f = lambda k: (k - 1.0) ** 2
        probe = _quadratic_probe_factory(f, lambda k: 2.0 * (k - 1.0))
        bad_start = ProbePoint(0.0, f(0.0), +1.0, np.zeros(1), Evaluation(f(0.0), np.ones(1)))
        with pytest.raises(DescentDirectionError):
            line_search(probe, bad_start, LineSearchParams(), kappa_cap=1.0)

    def test_zero_cap_rejected(self):
        f = lambda k: (k - 1.0) ** 2
        probe = _quadratic_probe_factory(f, lambda k: 2.0 * (k - 1.0))
        with pytest.raises(LineSearchError):
            line_search(probe, probe(0.0), LineSearchParams(), kappa_cap=0.0)


class TestBfgsMinimize:
    def test_quadratic_surrogate_converges(self):
        r = _rng(5)
        n = 8
        m = r.normal(size=(n, n))
        a = m @ m.T + n * np.eye(n)
        b = r.normal(size=n)

        def ev(x):
            return Evaluation(value=0.5 * x @ a @ x - b @ x, grad=a @ x - b)

        options = OptimizeOptions(
            max_iterations=60,
            termination_tol=1e-10,
            reset_limit=1,
            line_params=LineSearchParams(eps_max=1e9),
        )
        record = bfgs_minimize(ev, np.zeros(n), np.eye(n), options)
        assert np.abs(record.x - np.linalg.solve(a, b)).max() <= 1e-8

    def test_direction_cap_respected(self):
        a = np.diag([1.0, 4.0])
        b = np.array([10.0, 0.0])

        def ev(x):
            return Evaluation(value=0.5 * x @ a @ x - b @ x, grad=a @ x - b)

        seen = []

        def cap(x, p):
            seen.append(True)
            return 0.05

        options = OptimizeOptions(
            max_iterations=3, reset_limit=0, line_params=LineSearchParams(eps_max=1e9)
        )
        record = bfgs_minimize(ev, np.zeros(2), np.eye(2), options, direction_cap=cap)
        assert seen
        assert all(it.kappa <= 0.05 + 1e-12 for it in record.iterations)


class TestGuess:
    def test_filter_shaped_guess_warns_and_zeroes(self, mini_problem):
        with pytest.warns(UserWarning):
            x0 = make_initial_guess(3.0 * mini_problem.ftilde, mini_problem)
        assert np.abs(x0).max() <= 1e-12 * np.abs(3.0 * mini_problem.ftilde).max()

    def test_zero_guess_passes_through(self, mini_problem):
        x0 = make_initial_guess(
            np.zeros(mini_problem.control_grid.n_nodes), mini_problem
        )
        assert np.all(x0 == 0.0)

    def test_reference_guess_is_feasible(self, mini_problem, mini_guess):
        full = mini_problem.reduced.expand(mini_guess)
        e0, eT = endpoint_values(full, mini_problem.control_grid)
        peak = np.abs(dct1_inverse(full, mini_problem.control_grid)).max()
        assert max(abs(e0), abs(eT)) <= 1e-12 * peak


@pytest.mark.slow
class TestDrivenOptimization:
    def test_mini_run_improves_and_stays_feasible(self, mini_problem, mini_guess):
        options = OptimizeOptions(
            max_iterations=8, line_params=LineSearchParams(eps_max=0.15)
        )
        record = optimize(mini_problem, mini_guess, options)
        assert record.initial.breakdown.j_total > 0.0
        js = [it.breakdown.j_total for it in record.iterations]
        assert len(js) >= 3
        assert all(b >= a for a, b in zip(js, js[1:]))
        assert js[-1] > record.initial.breakdown.j_total
        # final iterate feasibility: endpoints, peak, band confinement
        full = mini_problem.reduced.expand(record.x)
        eps_t = dct1_inverse(full, mini_problem.control_grid)
        e0, eT = endpoint_values(full, mini_problem.control_grid)
        assert max(abs(e0), abs(eT)) <= max(1e-12 * np.abs(eps_t).max(), 1e-14)
        assert np.abs(eps_t).max() <= 0.15 * (1 + 1e-9)
        outside = np.ones(mini_problem.control_grid.n_nodes, dtype=bool)
        outside[mini_problem.reduced.indices] = False
        assert np.all(full[outside] == 0.0)
