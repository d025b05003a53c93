"""Complex absorbing potentials at the grid edges.

The absorbing potential is parameterized over a local penetration coordinate
s in [0, 1] that runs from the inner edge of the absorber to the grid
boundary.  The real part is a finite cosine series; the imaginary part is the
negated square of a second cosine series, which guarantees Im V <= 0 for any
coefficients (positive imaginary components destabilize the propagation).
A quadratic ramp Im V = -eta*(w*s)^2 is kept as the untuned baseline form.

Absorption quality is judged statically: a plane wave of momentum k is
scattered off the discretized potential (one constant complex cell per grid
point) and the reflection and transmission probabilities are extracted.  The
cell-by-cell composition uses the scattering-matrix recursion, which stays
bounded for strongly absorbing cells where a raw transfer-matrix product
would overflow.

CAP coefficients are tuned by a seeded derivative-free search that minimizes
the worst R + T over a band of momenta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from hhgopt.system import SpatialGrid

__all__ = [
    "CapSpec",
    "CapOptimizationResult",
    "build_cap",
    "sample_profile",
    "scattering_coefficients",
    "baseline_quadratic_cap",
    "tune_baseline_eta",
    "optimize_cap",
    "cap_band_objective",
    "save_cap_file",
    "load_cap_file",
    "cap_from_file",
]


@dataclass(frozen=True)
class CapSpec:
    """Cosine-series absorbing-potential coefficients over one absorber.

    Re V(s) = sum_m real_coeffs[m] cos(m pi s)
    Im V(s) = -(sum_m imag_series_coeffs[m] cos(m pi s))^2 - eta*(width*s)^2

    with s in [0, 1] from the inner edge outward.  `baseline_eta` is zero for
    optimized potentials; it carries the degenerate quadratic form when no
    series coefficients are used.
    """

    real_coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    imag_series_coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    width: float = 40.0
    baseline_eta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "real_coeffs", np.asarray(self.real_coeffs, float))
        object.__setattr__(
            self, "imag_series_coeffs", np.asarray(self.imag_series_coeffs, float)
        )
        if not self.width > 0.0:
            raise ValueError("absorber width must be positive")
        if self.baseline_eta < 0.0:
            raise ValueError("baseline_eta must be nonnegative")


def _cosine_series(coeffs: np.ndarray, s: np.ndarray) -> np.ndarray:
    if coeffs.size == 0:
        return np.zeros_like(s)
    orders = np.arange(coeffs.size)
    return np.cos(np.pi * np.outer(s, orders)) @ coeffs


def sample_profile(spec: CapSpec, s: np.ndarray) -> np.ndarray:
    """Complex potential samples at penetration coordinates s in [0, 1]."""
    s = np.asarray(s, dtype=float)
    re = _cosine_series(spec.real_coeffs, s)
    im = -(_cosine_series(spec.imag_series_coeffs, s) ** 2)
    if spec.baseline_eta > 0.0:
        im = im - spec.baseline_eta * (spec.width * s) ** 2
    return re + 1j * im


def build_cap(spec: CapSpec, grid: SpatialGrid) -> np.ndarray:
    """Full-grid complex potential: mirrored absorbers at both boundaries."""
    if spec.width >= (grid.x_max - grid.x_min) / 2.0:
        raise ValueError("absorber width exceeds the half-domain")
    x = grid.x
    v = np.zeros(grid.n_x, dtype=complex)
    right_inner = grid.x_max - spec.width
    left_inner = grid.x_min + spec.width
    right = x >= right_inner
    left = x <= left_inner
    v[right] = sample_profile(spec, (x[right] - right_inner) / spec.width)
    v[left] = sample_profile(spec, (left_inner - x[left]) / spec.width)
    return v


def scattering_coefficients(
    v: np.ndarray, dx: float, k: float | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reflection/transmission probabilities of a piecewise-constant slab.

    Each entry of v is one constant complex cell of width dx; the medium is
    free (V = 0) on both sides.  Stationary scattering at energy E = k^2/2:
    the local wavevector is q = sqrt(2(E - V)) on the branch Im q >= 0, and
    cells are composed with the scattering-matrix star product so decaying
    exponentials never get inverted.  For purely real potentials R + T = 1;
    with Im V <= 0 the deficit 1 - R - T is the absorbed fraction.
    """
    k_arr = np.atleast_1d(np.asarray(k, dtype=float))
    if np.any(k_arr <= 0.0):
        raise ValueError("momentum k must be positive")
    v = np.asarray(v, dtype=complex)
    energies = 0.5 * k_arr**2

    # q per (k, cell), free wavevector prepended/appended.
    q_cells = np.sqrt(2.0 * (energies[:, None] - v[None, :]))
    q_cells = np.where(np.imag(q_cells) < 0.0, -q_cells, q_cells)
    q_seq = np.concatenate(
        [k_arr[:, None], q_cells, k_arr[:, None]], axis=1
    )  # (n_k, n_cells + 2)

    n_k = k_arr.size
    tp = np.ones(n_k, dtype=complex)  # transmission left -> right
    tm = np.ones(n_k, dtype=complex)  # transmission right -> left
    rp = np.zeros(n_k, dtype=complex)  # reflection for left incidence
    rm = np.zeros(n_k, dtype=complex)  # reflection for right incidence

    def star(t2p, r2m, r2p, t2m):
        nonlocal tp, rp, rm, tm
        denom = 1.0 - rm * r2p
        tp_new = t2p * tp / denom
        rp_new = rp + tm * r2p * tp / denom
        rm_new = r2m + t2p * rm * t2m / denom
        tm_new = tm * t2m / denom
        tp, rp, rm, tm = tp_new, rp_new, rm_new, tm_new

    n_cells = v.size
    for j in range(n_cells + 1):
        qa = q_seq[:, j]
        qb = q_seq[:, j + 1]
        r_ab = (qa - qb) / (qa + qb)
        star(2.0 * qa / (qa + qb), -r_ab, r_ab, 2.0 * qb / (qa + qb))
        if j < n_cells:
            phase = np.exp(1j * q_seq[:, j + 1] * dx)
            star(phase, np.zeros(n_k), np.zeros(n_k), phase)

    refl = np.abs(rp) ** 2
    trans = np.abs(tp) ** 2
    if np.isscalar(k) or np.ndim(k) == 0:
        return float(refl[0]), float(trans[0])
    return refl, trans


def _slab_coordinates(grid: SpatialGrid, width: float) -> np.ndarray:
    x = grid.x
    inner = grid.x_max - width
    return (x[x >= inner] - inner) / width


def cap_band_objective(
    spec: CapSpec, grid: SpatialGrid, k_values: np.ndarray
) -> float:
    """max over the momentum band of R(k) + T(k) for one absorber slab."""
    s = _slab_coordinates(grid, spec.width)
    v = sample_profile(spec, s)
    refl, trans = scattering_coefficients(v, grid.dx, k_values)
    return float(np.max(refl + trans))


def baseline_quadratic_cap(width: float, eta: float) -> CapSpec:
    return CapSpec(width=width, baseline_eta=eta)


def tune_baseline_eta(
    grid: SpatialGrid,
    width: float,
    k_values: np.ndarray,
    etas: np.ndarray | None = None,
) -> tuple[CapSpec, float]:
    """Best quadratic-ramp CAP over a log grid of curvatures."""
    if etas is None:
        etas = np.logspace(-6.0, 0.0, 121)
    best_eta, best_obj = etas[0], np.inf
    for eta in etas:
        obj = cap_band_objective(baseline_quadratic_cap(width, eta), grid, k_values)
        if obj < best_obj:
            best_eta, best_obj = eta, obj
    return baseline_quadratic_cap(width, float(best_eta)), best_obj


@dataclass(frozen=True)
class CapOptimizationResult:
    spec: CapSpec
    objective: float
    baseline: CapSpec
    baseline_objective: float
    n_evaluations: int
    improved: bool

    @property
    def improvement_factor(self) -> float:
        return self.baseline_objective / self.objective


def optimize_cap(
    grid: SpatialGrid,
    width: float = 40.0,
    k_band: tuple[float, float] = (0.2, 2.5),
    n_k: int = 24,
    n_coeffs: int = 6,
    budget: int = 40000,
    seed: int = 0,
) -> CapOptimizationResult:
    """Minimize the worst in-band R + T over the cosine coefficients.

    Deterministic given the seed: a Nelder-Mead descent in log objective,
    restarted from seeded perturbations of the incumbent.  n_coeffs = 0
    degenerates to the tuned quadratic baseline.  If the search cannot beat
    the baseline the best point found is still returned, flagged via
    `improved`.
    """
    k_values = np.linspace(k_band[0], k_band[1], n_k)
    if k_band[0] <= 0.0:
        raise ValueError("momentum band must be positive")
    baseline, baseline_obj = tune_baseline_eta(grid, width, k_values)
    if n_coeffs == 0:
        return CapOptimizationResult(
            baseline, baseline_obj, baseline, baseline_obj, 0, False
        )

    evaluations = 0

    def objective(theta: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        spec = CapSpec(
            real_coeffs=theta[:n_coeffs],
            imag_series_coeffs=theta[n_coeffs:],
            width=width,
        )
        return np.log10(cap_band_objective(spec, grid, k_values) + 1e-300)

    # Start from the cosine-series projection of the tuned quadratic ramp
    # (its imaginary amplitude sqrt(eta)*w*s), so the search begins at
    # baseline-like quality and only has to refine.
    amp = np.sqrt(baseline.baseline_eta) * width
    theta0 = np.zeros(2 * n_coeffs)
    theta0[0] = -0.05
    theta0[n_coeffs] = 0.5 * amp
    for m in range(1, n_coeffs):
        if m % 2 == 1:
            theta0[n_coeffs + m] = -amp * 4.0 / (np.pi**2 * m**2)

    rng = np.random.default_rng(seed)
    best_theta = theta0
    best_val = objective(theta0)
    per_restart = max(budget // 6, 400)
    while evaluations < budget:
        result = scipy.optimize.minimize(
            objective,
            best_theta,
            method="Nelder-Mead",
            options={
                "maxfev": min(per_restart, budget - evaluations),
                "maxiter": 10 * per_restart,
                "xatol": 1e-10,
                "fatol": 1e-12,
                "adaptive": True,
            },
        )
        if result.fun < best_val:
            best_val = result.fun
            best_theta = result.x
        if evaluations >= budget:
            break
        scale = 0.25 * np.abs(best_theta).max() + 0.05
        best_trial = None
        for _ in range(4):
            trial = best_theta + rng.normal(scale=scale, size=best_theta.size)
            val = objective(trial)
            if best_trial is None or val < best_trial[0]:
                best_trial = (val, trial)
        if best_trial is not None and best_trial[0] < best_val + 2.0:
            best_theta = best_trial[1]

    spec = CapSpec(
        real_coeffs=best_theta[:n_coeffs],
        imag_series_coeffs=best_theta[n_coeffs:],
        width=width,
    )
    obj = cap_band_objective(spec, grid, k_values)
    if obj >= baseline_obj:
        return CapOptimizationResult(
            baseline, baseline_obj, baseline, baseline_obj, evaluations, False
        )
    return CapOptimizationResult(
        spec, obj, baseline, baseline_obj, evaluations, obj < baseline_obj
    )


# --- portable sample-level CAP files -------------------------------------
#
# Line 1:  # cap v1 width=<a.u.> n=<points>
# Then n rows "x Re(V) Im(V)" with 17 significant digits, x ascending.  The
# rows hold the right-boundary slab from the inner edge through the full
# penetration depth inclusive (the last row sits at the periodic grid's
# excluded x_max; its value is what the mirrored left absorber takes at
# x_min).  The left absorber is the mirror image versus penetration depth.


def slab_samples(
    spec: CapSpec, grid: SpatialGrid
) -> tuple[np.ndarray, np.ndarray]:
    """(x, V) rows of the storable right-boundary slab, depth-inclusive."""
    n = int(round(spec.width / grid.dx))
    if abs(n * grid.dx - spec.width) > 1e-9 * grid.dx:
        raise ValueError("absorber width must be a whole number of grid cells")
    offsets = np.arange(n + 1) * grid.dx
    inner = grid.x_max - spec.width
    return inner + offsets, sample_profile(spec, offsets / spec.width)


def save_cap_file(path, x: np.ndarray, v: np.ndarray, width: float) -> None:
    x = np.asarray(x, float)
    v = np.asarray(v, complex)
    if x.ndim != 1 or x.shape != v.shape:
        raise ValueError("x and v must be matching 1D arrays")
    if x.size > 1 and not np.all(np.diff(x) > 0):
        raise ValueError("x must be ascending")
    lines = [f"# cap v1 width={width!r} n={x.size}"]
    for xi, vi in zip(x, v):
        lines.append(f"{xi:.17g} {vi.real:.17g} {vi.imag:.17g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_cap_file(path) -> tuple[float, np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        rows = [line.split() for line in fh if line.strip()]
    fields = header.lstrip("# ").split()
    if len(fields) < 4 or fields[0] != "cap" or fields[1] != "v1":
        raise ValueError(f"not a cap v1 file: {header!r}")
    meta = dict(item.split("=", 1) for item in fields[2:])
    width = float(meta["width"])
    n = int(meta["n"])
    if len(rows) != n:
        raise ValueError(f"expected {n} rows, found {len(rows)}")
    data = np.array(rows, dtype=float)
    return width, data[:, 0], data[:, 1] + 1j * data[:, 2]


def cap_from_file(path, grid: SpatialGrid) -> np.ndarray:
    """Place a stored slab at both boundaries of `grid` (same spacing).

    The file carries n+1 depth samples covering the full absorber width; the
    right boundary uses the first n (x_max itself is excluded from the
    periodic grid), the left boundary mirrors all of them.
    """
    width, x_slab, v_slab = load_cap_file(path)
    offsets = x_slab - x_slab[0]
    if x_slab.size > 1:
        dx_file = offsets[1] - offsets[0]
        if abs(dx_file - grid.dx) > 1e-9 * grid.dx:
            raise ValueError(
                f"stored spacing {dx_file} does not match grid spacing {grid.dx}"
            )
    v = np.zeros(grid.n_x, dtype=complex)
    x = grid.x
    right_inner = grid.x_max - width
    left_inner = grid.x_min + width
    right_idx = np.nonzero(x >= right_inner)[0]
    left_idx = np.nonzero(x <= left_inner)[0]
    if right_idx.size != v_slab.size - 1 or left_idx.size != v_slab.size:
        raise ValueError("stored slab does not tile the grid absorber region")
    v[right_idx] = v_slab[:-1]
    # Mirror: the left absorber sees the same profile vs penetration depth.
    penetration = (left_inner - x[left_idx]) / grid.dx
    v[left_idx] = v_slab[np.round(penetration).astype(int)]
    return v
