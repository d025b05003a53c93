import numpy as np
import pytest

from hhgopt.system import (
    PotentialModel,
    SpatialGrid,
    apply_hamiltonian,
    braket,
    force_mask_coordinate,
    ground_state,
    hamiltonian_matrix,
    norm_squared,
    stationary_acceleration,
    truncated_coulomb,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


class TestGrid:
    def test_paper_defaults(self, paper_grid):
        assert paper_grid.n_x == 768
        assert paper_grid.dx == pytest.approx(0.625)
        assert paper_grid.x[0] == -240.0
        assert paper_grid.x[-1] == pytest.approx(240.0 - 0.625)

    def test_doubled_keeps_spacing(self, paper_grid):
        d = paper_grid.doubled()
        assert d.x_min == -480.0 and d.x_max == 480.0
        assert d.dx == paper_grid.dx
        assert d.n_x == 2 * paper_grid.n_x


class TestPotential:
    def test_truncated_coulomb_values(self):
        grid = SpatialGrid(-8.0, 8.0, 64)
        v = truncated_coulomb(grid)
        x = grid.x
        assert v[np.argmin(np.abs(x))] == pytest.approx(0.0, abs=1e-12)
        i = np.argmin(np.abs(x - np.sqrt(3.0)))
        assert 1.0 - 1.0 / np.sqrt(x[i] ** 2 + 1) == pytest.approx(v[i])
        assert abs((1.0 - 1.0 / np.sqrt(200.0**2 + 1)) - 1.0) < 5e-3

    def test_acceleration_values(self):
        grid = SpatialGrid(-8.0, 8.0, 64)  # dx = 0.25, so x = 1 is a node
        c = stationary_acceleration(grid)
        x = grid.x
        assert c[np.argmin(np.abs(x))] == pytest.approx(0.0, abs=1e-12)
        assert c[np.argmin(np.abs(x - 1.0))] == pytest.approx(-(2.0**-1.5), rel=1e-12)

    def test_acceleration_is_odd(self, paper_grid):
        c = stationary_acceleration(paper_grid)
        # x[j] and x[n-j] are mirror nodes of the periodic-convention grid
        j = np.arange(1, paper_grid.n_x // 2)
        assert np.allclose(c[j], -c[paper_grid.n_x - j], rtol=1e-12)


class TestForceMask:
    def test_window_properties(self, paper_grid):
        width = 40.0
        xt = force_mask_coordinate(paper_grid, width)
        x = paper_grid.x
        inner = np.abs(x) < 240.0 - width - 1.0
        assert np.abs(xt[inner] - x[inner]).max() < 1e-14
        # slope vanishes at the outer edge
        slope = np.gradient(xt, paper_grid.dx)
        assert abs(slope[0]) < 5e-3
        # monotone through the transition
        region = (x >= 200.0) & (x <= 239.0)
        assert np.all(np.diff(xt[region]) > 0.0)

    def test_width_validation(self, paper_grid):
        with pytest.raises(ValueError):
            force_mask_coordinate(paper_grid, 400.0)

    def test_force_vanishes_on_masked_potential(self, paper_pot):
        v = paper_pot.v0_masked
        x = paper_pot.grid.x
        edge = np.abs(x) > 236.0
        dv = np.gradient(v, paper_pot.grid.dx)
        assert np.abs(dv[edge]).max() < 1e-4


class TestHamiltonian:
    def test_plane_wave_kinetic_eigenvalue(self, paper_grid):
        free = PotentialModel(
            grid=paper_grid,
            v0=np.zeros(paper_grid.n_x),
            accel=np.zeros(paper_grid.n_x),
            v0_masked=np.zeros(paper_grid.n_x),
            x_masked=paper_grid.x,
            absorber_width=40.0,
        )
        k = paper_grid.k[13]
        psi = np.exp(1j * k * paper_grid.x)
        out = apply_hamiltonian(psi, 0.0, free)
        assert np.abs(out - 0.5 * k**2 * psi).max() < 1e-10

    def test_kinetic_composition_is_quartic(self, paper_grid):
        free = PotentialModel(
            grid=paper_grid,
            v0=np.zeros(paper_grid.n_x),
            accel=np.zeros(paper_grid.n_x),
            v0_masked=np.zeros(paper_grid.n_x),
            x_masked=np.zeros(paper_grid.n_x),
            absorber_width=40.0,
        )
        psi = _rng(3).normal(size=paper_grid.n_x) + 1j * _rng(4).normal(
            size=paper_grid.n_x
        )
        twice = apply_hamiltonian(apply_hamiltonian(psi, 0.0, free), 0.0, free)
        import scipy.fft as sfft

        quartic = sfft.ifft((paper_grid.kinetic_energies() ** 2) * sfft.fft(psi))
        assert np.abs(twice - quartic).max() <= 1e-12 * np.abs(quartic).max()

    def test_hermitian_without_cap(self, paper_pot):
        n = paper_pot.grid.n_x
        phi = _rng(5).normal(size=n) + 1j * _rng(6).normal(size=n)
        psi = _rng(7).normal(size=n) + 1j * _rng(8).normal(size=n)
        lhs = braket(paper_pot.grid, phi, apply_hamiltonian(psi, 0.04, paper_pot))
        # H = H^dagger means <phi|H psi> = <H phi|psi> = <psi|H phi>^*
        rhs = braket(paper_pot.grid, apply_hamiltonian(phi, 0.04, paper_pot), psi)
        swapped = braket(paper_pot.grid, psi, apply_hamiltonian(phi, 0.04, paper_pot))
        assert abs(lhs - rhs) <= 1e-12 * abs(lhs)
        assert abs(lhs - np.conj(swapped)) <= 1e-12 * abs(lhs)

    def test_cap_is_dissipative(self, paper_pot, paper_cap):
        n = paper_pot.grid.n_x
        psi = _rng(9).normal(size=n) + 1j * _rng(10).normal(size=n)
        h_psi = apply_hamiltonian(psi, 0.0, paper_pot, cap=paper_cap)
        hdag_psi = apply_hamiltonian(psi, 0.0, paper_pot, cap=paper_cap, adjoint=True)
        anti = braket(paper_pot.grid, psi, h_psi - hdag_psi) / 2j
        expected = braket(paper_pot.grid, psi, paper_cap.imag * psi)
        assert anti.real <= 1e-12
        assert anti.real == pytest.approx(expected.real, rel=1e-10)

    def test_adjoint_conjugates_cap_only(self, paper_pot, paper_cap):
        n = paper_pot.grid.n_x
        psi = _rng(11).normal(size=n) + 1j * _rng(12).normal(size=n)
        direct = apply_hamiltonian(psi, 0.01, paper_pot, cap=np.conj(paper_cap))
        adjoint = apply_hamiltonian(psi, 0.01, paper_pot, cap=paper_cap, adjoint=True)
        assert np.array_equal(direct, adjoint)

    def test_matrix_matches_operator(self, paper_pot, paper_cap):
        n = paper_pot.grid.n_x
        psi = _rng(13).normal(size=n) + 1j * _rng(14).normal(size=n)
        h = hamiltonian_matrix(paper_pot, cap=paper_cap, eps=0.03)
        direct = apply_hamiltonian(psi, 0.03, paper_pot, cap=paper_cap)
        assert np.abs(h @ psi - direct).max() <= 1e-10 * np.abs(direct).max()


class TestGroundState:
    def test_bohr_frequency_and_shape(self, paper_pot, paper_ground):
        psi0, e0, e1 = paper_ground
        assert e1 - e0 == pytest.approx(0.395, abs=2e-3)
        assert norm_squared(paper_pot.grid, psi0) == pytest.approx(1.0, abs=1e-12)
        x_mean = braket(paper_pot.grid, psi0, paper_pot.grid.x * psi0)
        assert abs(x_mean) <= 1e-10

    def test_eigen_residual(self, paper_pot, paper_ground):
        psi0, e0, _ = paper_ground
        residual = apply_hamiltonian(psi0, 0.0, paper_pot) - e0 * psi0
        assert np.sqrt(norm_squared(paper_pot.grid, residual)) <= 1e-8
