"""Shared fixtures: the paper-scale model pieces are expensive (dense
diagonalization, CAP tuning), so they are built once per session.  The
"mini lab" is a shrunken domain and window used where a test only needs the
machinery to be exercised end to end, not the production scales."""

import numpy as np
import pytest

from hhgopt.absorber import cap_from_file, optimize_cap, build_cap
from hhgopt.dynamics import PropagatorSettings
from hhgopt.functional import ControlProblem
from hhgopt.system import PotentialModel, SpatialGrid, ground_state

DEFAULT_CAP = "src/hhgopt/data/cap_default.txt"


@pytest.fixture(scope="session")
def paper_grid():
    return SpatialGrid.paper()


@pytest.fixture(scope="session")
def paper_pot(paper_grid):
    return PotentialModel.build(paper_grid)


@pytest.fixture(scope="session")
def paper_ground(paper_pot):
    return ground_state(paper_pot)


@pytest.fixture(scope="session")
def paper_cap(paper_grid):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / DEFAULT_CAP
    return cap_from_file(path, paper_grid)


@pytest.fixture(scope="session")
def mini_grid():
    return SpatialGrid(-80.0, 80.0, 256)


@pytest.fixture(scope="session")
def mini_pot(mini_grid):
    return PotentialModel.build(mini_grid, absorber_width=20.0)


@pytest.fixture(scope="session")
def paper_ground_mini(mini_pot):
    return ground_state(mini_pot)


@pytest.fixture(scope="session")
def mini_cap_result(mini_grid):
    return optimize_cap(
        mini_grid, width=20.0, k_band=(0.3, 2.5), n_k=16, n_coeffs=5,
        budget=4000, seed=0,
    )


@pytest.fixture(scope="session")
def mini_cap(mini_cap_result, mini_grid):
    return build_cap(mini_cap_result.spec, mini_grid)


@pytest.fixture(scope="session")
def mini_problem(mini_grid, mini_cap):
    """Small but fully driven control problem (fast evaluations).

    The 7th harmonic sits just above the model's Bohr frequency, so the
    short window still produces a solid emission response; the reduced
    energy penalty puts the initial functional on the profitable side.
    """
    return ControlProblem.build(
        spatial_grid=mini_grid,
        absorber_width=20.0,
        cap=mini_cap,
        duration=120.0,
        n_t=128,
        quad_oversample=4,
        harmonic=7,
        alpha=2.5e-7,
        settings=PropagatorSettings(tol=1e-9),
    )


@pytest.fixture(scope="session")
def mini_guess(mini_problem):
    from hhgopt.experiments import build_reference_pulse, match_beta

    beta = match_beta("peak", 0.09, mini_problem)
    return build_reference_pulse(beta, mini_problem)


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
