"""Configuration-driven experiment runner.

Experiments are described by INI-style text files (key = value under
named sections) that mirror the control-problem fields; unknown sections or
keys are rejected so a typo cannot silently fall back to a default.  Each
run mode writes portable artifacts into an output directory:

- field.csv        t, eps(t) of the run's driving field
- spectrum.csv     omega, harmonic_order, |eps_bar|, Cbar
- power_spectrum.csv   omega, harmonic_order, log10(Cbar^2)
- run_record.json  per-iteration functional breakdown (optimize mode)
- summary.json     headline numbers (J terms, survival, fluence, ...)

Floats are written with 17 significant digits, so reruns with the same
config and seed produce bit-identical files.
"""

from __future__ import annotations

import configparser
import dataclasses
import importlib.resources
import io
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hhgopt.absorber import (
    CapOptimizationResult,
    cap_from_file,
    optimize_cap,
    save_cap_file,
    slab_samples,
)
from hhgopt.dynamics import (
    PropagatorSettings,
    Trajectory,
    expectation_series,
)
from hhgopt.functional import (
    ControlProblem,
    FunctionalBreakdown,
    SigmaPenalty,
    evaluate,
    fluence,
    project_to_feasible,
)
from hhgopt.optimizer import (
    LineSearchParams,
    OptimizeOptions,
    make_initial_guess,
    optimize,
)
from hhgopt.spectral import dct1_forward, dct1_inverse
from hhgopt.system import SpatialGrid, ground_state

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SpectrumResult",
    "parse_config",
    "serialize_config",
    "build_problem",
    "default_guess_spectrum",
    "build_reference_pulse",
    "match_beta",
    "doubled_grid_check",
    "emit_spectrum",
    "run_optimize",
    "run_reference",
    "run_spectrum",
    "run_validate",
    "run_cap_optimize",
    "run_eigensolve",
]

DEFAULT_CAP_RESOURCE = "cap_default.txt"
RUN_MODES = ("optimize", "spectrum", "validate", "cap-optimize", "reference")


class ConfigError(ValueError):
    """Malformed, unknown, or inconsistent configuration content."""


@dataclass(frozen=True)
class ExperimentConfig:
    # [run]
    mode: str = "optimize"
    seed: int = 0
    # [problem]
    harmonic: int = 13
    omega0: float = 0.06
    alpha: float = 2e-6
    source_width: float = 0.01
    target_width: float = 0.01
    sigma_scale: float = 5e-3
    sigma_steepness: float = 50.0
    sigma_threshold: float = 0.9
    # [grid]
    x_min: float = -240.0
    x_max: float = 240.0
    n_x: int = 768
    absorber_width: float = 40.0
    # [time]
    duration: float = 1000.0
    n_t: int = 1024
    quad_oversample: int = 4
    # [propagation]
    tol: float = 1e-9
    order: int = 6
    substeps: int = 0  # 0: calibrate automatically
    max_substeps: int = 4096
    # [cap]
    cap_file: str = ""  # empty: packaged default potential
    cap_n_coeffs: int = 6
    cap_k_min: float = 0.2
    cap_k_max: float = 2.5
    cap_n_k: int = 24
    cap_budget: int = 40000
    # [optimizer]
    max_iterations: int = 60
    termination_tol: float = 1e-4
    reset_limit: int = 1
    eps_max: float = 0.15
    guess_amplitude: float = 5.0
    preparation: bool = False
    # [output]
    directory: str = "runs/out"


_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "run": {"mode": ("mode", str), "seed": ("seed", int)},
    "problem": {
        "harmonic": ("harmonic", int),
        "omega0": ("omega0", float),
        "alpha": ("alpha", float),
        "source_width": ("source_width", float),
        "target_width": ("target_width", float),
        "sigma_scale": ("sigma_scale", float),
        "sigma_steepness": ("sigma_steepness", float),
        "sigma_threshold": ("sigma_threshold", float),
    },
    "grid": {
        "x_min": ("x_min", float),
        "x_max": ("x_max", float),
        "n_x": ("n_x", int),
        "absorber_width": ("absorber_width", float),
    },
    "time": {
        "duration": ("duration", float),
        "n_t": ("n_t", int),
        "quad_oversample": ("quad_oversample", int),
    },
    "propagation": {
        "tol": ("tol", float),
        "order": ("order", int),
        "substeps": ("substeps", int),
        "max_substeps": ("max_substeps", int),
    },
    "cap": {
        "file": ("cap_file", str),
        "n_coeffs": ("cap_n_coeffs", int),
        "k_min": ("cap_k_min", float),
        "k_max": ("cap_k_max", float),
        "n_k": ("cap_n_k", int),
        "budget": ("cap_budget", int),
    },
    "optimizer": {
        "max_iterations": ("max_iterations", int),
        "termination_tol": ("termination_tol", float),
        "reset_limit": ("reset_limit", int),
        "eps_max": ("eps_max", float),
        "guess_amplitude": ("guess_amplitude", float),
        "preparation": ("preparation", bool),
    },
    "output": {"directory": ("directory", str)},
}


def _coerce(raw: str, kind: type, where: str):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {where} = {raw!r} as {kind.__name__}") from exc


def parse_config(source: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment file (or raw INI text)."""
    parser = configparser.ConfigParser(interpolation=None)
    text = source if isinstance(source, str) and "\n" in source else None
    try:
        if text is not None:
            parser.read_string(text)
        else:
            path = Path(source)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            parser.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            attr, kind = _SCHEMA[section][key]
            values[attr] = _coerce(raw, kind, f"[{section}] {key}")
    cfg = ExperimentConfig(**values)
    if cfg.mode not in RUN_MODES:
        raise ConfigError(f"unknown run mode {cfg.mode!r}; choose from {RUN_MODES}")
    if cfg.order not in (2, 4, 6):
        raise ConfigError("propagation order must be 2, 4 or 6")
    if cfg.harmonic < 1:
        raise ConfigError("harmonic must be a positive integer")
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; parse(serialize(cfg)) == cfg."""
    out = io.StringIO()
    for section, keys in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (attr, kind) in keys.items():
            value = getattr(cfg, attr)
            if kind is float:
                rendered = f"{value:.17g}"
            elif kind is bool:
                rendered = "true" if value else "false"
            else:
                rendered = str(value)
            out.write(f"{key} = {rendered}\n")
        out.write("\n")
    return out.getvalue()


def _spatial_grid(cfg: ExperimentConfig) -> SpatialGrid:
    return SpatialGrid(cfg.x_min, cfg.x_max, cfg.n_x)


def _resolve_cap(cfg: ExperimentConfig, grid: SpatialGrid) -> np.ndarray:
    if cfg.cap_file:
        return cap_from_file(cfg.cap_file, grid)
    resource = importlib.resources.files("hhgopt.data") / DEFAULT_CAP_RESOURCE
    with importlib.resources.as_file(resource) as path:
        return cap_from_file(path, grid)


def build_problem(cfg: ExperimentConfig) -> ControlProblem:
    grid = _spatial_grid(cfg)
    settings = PropagatorSettings(
        tol=cfg.tol,
        order=cfg.order,
        substeps=cfg.substeps or None,
        max_substeps=cfg.max_substeps,
    )
    return ControlProblem.build(
        spatial_grid=grid,
        absorber_width=cfg.absorber_width,
        cap=_resolve_cap(cfg, grid),
        duration=cfg.duration,
        n_t=cfg.n_t,
        quad_oversample=cfg.quad_oversample,
        omega0=cfg.omega0,
        source_width=cfg.source_width,
        alpha=cfg.alpha,
        harmonic=cfg.harmonic,
        target_width=cfg.target_width,
        sigma=SigmaPenalty(cfg.sigma_scale, cfg.sigma_steepness, cfg.sigma_threshold),
        settings=settings,
    )


def default_guess_spectrum(
    problem: ControlProblem, amplitude: float = 5.0
) -> np.ndarray:
    """Band-confined oscillatory guess: amplitude * f_eps-shaped Gaussian
    modulated by a sine that vanishes at the band center."""
    w = problem.control_grid.omegas
    center = problem.omega0
    width = 0.01
    return (
        amplitude
        * np.exp(-((w - center) ** 2) / (2.0 * width**2))
        * np.sin((w - center) * np.pi / 0.015)
    )


def build_reference_pulse(beta: float, problem: ControlProblem) -> np.ndarray:
    """Feasible single-color pulse: beta sin(omega0 (t - T/2)), band-filtered
    and endpoint-projected.  Linear in beta by construction."""
    grid = problem.control_grid
    harmonic_wave = beta * np.sin(problem.omega0 * (grid.times - grid.duration / 2.0))
    unc = problem.f_eps.values * dct1_forward(harmonic_wave, grid)
    return project_to_feasible(unc, problem)


def match_beta(
    target: str, value: float, problem: ControlProblem, verify_tol: float = 1e-6
) -> float:
    """Scale the reference pulse to a fluence or peak target.

    The construction is linear in beta, so fluence scales as beta^2 and the
    peak as beta; one measurement of the unit pulse gives the closed form,
    verified by re-measuring the matched pulse.
    """
    if value <= 0.0:
        raise ValueError("target value must be positive")
    unit = build_reference_pulse(1.0, problem)
    eps_t = dct1_inverse(problem.reduced.expand(unit), problem.control_grid)
    if target == "fluence":
        base = fluence(eps_t, problem.control_grid)
        beta = float(np.sqrt(value / base))
        achieved = beta**2 * base
    elif target == "peak":
        base = float(np.abs(eps_t).max())
        beta = value / base
        achieved = beta * base
    else:
        raise ValueError(f"unknown match target {target!r}")
    if abs(achieved - value) > verify_tol * value:
        raise RuntimeError(
            f"matched {target} {achieved} misses the target {value} "
            f"beyond {verify_tol:g} relative"
        )
    return beta


@dataclass(frozen=True)
class SpectrumResult:
    omega: np.ndarray
    harmonic_order: np.ndarray
    eps_abs: np.ndarray
    c_w: np.ndarray
    breakdown: FunctionalBreakdown

    def rows(self) -> np.ndarray:
        return np.column_stack(
            [self.omega, self.harmonic_order, self.eps_abs, self.c_w]
        )


def emit_spectrum(
    traj: Trajectory, eps_full: np.ndarray, problem: ControlProblem,
    breakdown: FunctionalBreakdown,
) -> SpectrumResult:
    """Spectra of the driving field and the emission observable."""
    c_series = expectation_series(traj, problem.pot.accel)
    cbar = dct1_forward(c_series, problem.mesh)
    eps_abs = np.zeros(problem.mesh.n_nodes)
    eps_abs[: problem.control_grid.n_nodes] = np.abs(eps_full)
    omega = problem.mesh.omegas
    return SpectrumResult(
        omega=omega,
        harmonic_order=omega / problem.omega0,
        eps_abs=eps_abs,
        c_w=cbar,
        breakdown=breakdown,
    )


# --- artifact writers ------------------------------------------------------


def _write_csv(path: Path, header: str, columns: list[np.ndarray]) -> None:
    rows = np.column_stack(columns)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_field(out: Path, problem: ControlProblem, eps_full: np.ndarray) -> None:
    grid = problem.control_grid
    _write_csv(out / "field.csv", "t,eps", [grid.times, dct1_inverse(eps_full, grid)])


def _write_spectrum(out: Path, spec: SpectrumResult) -> None:
    _write_csv(
        out / "spectrum.csv",
        "omega,harmonic_order,abs_eps_w,C_w",
        [spec.omega, spec.harmonic_order, spec.eps_abs, spec.c_w],
    )
    power = np.log10(np.maximum(spec.c_w**2, 1e-300))
    _write_csv(
        out / "power_spectrum.csv",
        "omega,harmonic_order,log10_C_w_sq",
        [spec.omega, spec.harmonic_order, power],
    )


def _summary_payload(
    cfg: ExperimentConfig, breakdown: FunctionalBreakdown, extra: dict | None = None
) -> dict:
    payload = {
        "mode": cfg.mode,
        "harmonic": cfg.harmonic,
        "seed": cfg.seed,
        **breakdown.as_dict(),
    }
    if extra:
        payload.update(extra)
    return payload


def _target_band_peak(spec: SpectrumResult, problem: ControlProblem) -> float:
    band = problem.f_c_mesh > 0.5
    if not np.any(band):
        return 0.0
    return float(np.abs(spec.c_w[band]).max())


# --- run modes --------------------------------------------------------------


def run_optimize(
    cfg: ExperimentConfig, out_dir: str | Path, problem: ControlProblem | None = None
) -> dict:
    """Full optimization run; writes field, spectra, run record, summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = problem or build_problem(cfg)
    guess = make_initial_guess(
        default_guess_spectrum(problem, cfg.guess_amplitude), problem
    )
    options = OptimizeOptions(
        max_iterations=cfg.max_iterations,
        termination_tol=cfg.termination_tol,
        reset_limit=cfg.reset_limit,
        line_params=LineSearchParams(eps_max=cfg.eps_max),
        preparation=cfg.preparation,
    )
    record = optimize(problem, guess, options)
    eps_full = problem.reduced.expand(record.x)
    breakdown, traj = evaluate(record.x, problem)
    spec = emit_spectrum(traj, eps_full, problem, breakdown)

    _write_field(out, problem, eps_full)
    _write_spectrum(out, spec)
    _write_json(out / "run_record.json", record.as_dict())
    np.save(out / "field_coeffs.npy", eps_full)
    summary = _summary_payload(
        cfg,
        breakdown,
        {
            "status": record.status,
            "iterations": len(record.iterations),
            "resets": record.resets,
            "n_evaluations": record.n_evaluations,
            "target_band_peak": _target_band_peak(spec, problem),
            "peak_field": float(
                np.abs(dct1_inverse(eps_full, problem.control_grid)).max()
            ),
        },
    )
    _write_json(out / "summary.json", summary)
    (out / "config.ini").write_text(serialize_config(cfg), encoding="utf-8")
    return summary


def run_reference(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    beta: float | None = None,
    match: tuple[str, float] | None = None,
    problem: ControlProblem | None = None,
) -> dict:
    """Propagate the single-color reference pulse (fixed or matched beta)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = problem or build_problem(cfg)
    if (beta is None) == (match is None):
        raise ConfigError("provide exactly one of beta or match=(kind, value)")
    if match is not None:
        beta = match_beta(match[0], match[1], problem)
    assert beta is not None
    x = build_reference_pulse(beta, problem)
    breakdown, traj = evaluate(x, problem)
    eps_full = problem.reduced.expand(x)
    spec = emit_spectrum(traj, eps_full, problem, breakdown)
    _write_field(out, problem, eps_full)
    _write_spectrum(out, spec)
    np.save(out / "field_coeffs.npy", eps_full)
    summary = _summary_payload(
        cfg,
        breakdown,
        {
            "beta": beta,
            "target_band_peak": _target_band_peak(spec, problem),
            "peak_field": float(
                np.abs(dct1_inverse(eps_full, problem.control_grid)).max()
            ),
        },
    )
    _write_json(out / "summary.json", summary)
    return summary


def run_spectrum(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    field_coeffs: np.ndarray | None = None,
    problem: ControlProblem | None = None,
) -> dict:
    """Propagate a stored (or zero) field and emit its spectra."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = problem or build_problem(cfg)
    if field_coeffs is None:
        field_coeffs = np.zeros(problem.control_grid.n_nodes)
    x = problem.reduced.restrict(field_coeffs)
    breakdown, traj = evaluate(x, problem)
    eps_full = problem.reduced.expand(x)
    spec = emit_spectrum(traj, eps_full, problem, breakdown)
    _write_field(out, problem, eps_full)
    _write_spectrum(out, spec)
    summary = _summary_payload(
        cfg, breakdown, {"target_band_peak": _target_band_peak(spec, problem)}
    )
    _write_json(out / "summary.json", summary)
    return summary


def doubled_grid_check(
    field_coeffs: np.ndarray, cfg: ExperimentConfig, problem: ControlProblem | None = None
) -> dict:
    """Re-propagate on the doubled spatial domain and compare J_max.

    The spacing, control window and absorber width stay the same; the
    absorbing potential is re-placed at the new boundaries.  Returns the
    relative difference (J_max - J_max_doubled)/J_max_doubled.
    """
    problem = problem or build_problem(cfg)
    doubled_cfg = dataclasses.replace(
        cfg,
        x_min=cfg.x_min - (cfg.x_max - cfg.x_min) / 2.0,
        x_max=cfg.x_max + (cfg.x_max - cfg.x_min) / 2.0,
        n_x=2 * cfg.n_x,
    )
    doubled = build_problem(doubled_cfg)

    x = problem.reduced.restrict(field_coeffs)
    breakdown, _ = evaluate(x, problem)
    x2 = doubled.reduced.restrict(field_coeffs)
    breakdown2, _ = evaluate(x2, doubled)
    j, j2 = breakdown.j_max, breakdown2.j_max
    delta_rel = (j - j2) / j2 if j2 != 0.0 else np.inf
    return {
        "j_max": j,
        "j_max_doubled": j2,
        "delta_rel_j_max": delta_rel,
        "survival": breakdown.survival,
        "survival_doubled": breakdown2.survival,
    }


def run_validate(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    field_coeffs: np.ndarray,
    accept: float = 1e-2,
    problem: ControlProblem | None = None,
) -> dict:
    """Doubled-grid validation mode; fails (nonzero flag) above `accept`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = doubled_grid_check(field_coeffs, cfg, problem=problem)
    result["accept_threshold"] = accept
    result["accepted"] = bool(abs(result["delta_rel_j_max"]) <= accept)
    _write_json(out / "validate.json", result)
    return result


def run_cap_optimize(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Re-optimize the absorbing potential and store it in the CAP format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = _spatial_grid(cfg)
    result: CapOptimizationResult = optimize_cap(
        grid,
        width=cfg.absorber_width,
        k_band=(cfg.cap_k_min, cfg.cap_k_max),
        n_k=cfg.cap_n_k,
        n_coeffs=cfg.cap_n_coeffs,
        budget=cfg.cap_budget,
        seed=cfg.seed,
    )
    if not result.improved and cfg.cap_n_coeffs > 0:
        warnings.warn(
            "cap optimization failed to beat the quadratic baseline; "
            "storing the best potential found",
            stacklevel=2,
        )
    x_slab, v_slab = slab_samples(result.spec, grid)
    path = out / "cap.txt"
    save_cap_file(path, x_slab, v_slab, cfg.absorber_width)
    summary = {
        "objective": result.objective,
        "baseline_objective": result.baseline_objective,
        "improvement_factor": result.improvement_factor,
        "n_evaluations": result.n_evaluations,
        "improved": result.improved,
        "cap_file": str(path),
    }
    _write_json(out / "summary.json", summary)
    return summary


def run_eigensolve(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Ground-state diagnostics of the stationary model."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from hhgopt.system import PotentialModel

    grid = _spatial_grid(cfg)
    pot = PotentialModel.build(grid, cfg.absorber_width)
    psi0, e0, e1 = ground_state(pot)
    _write_csv(out / "ground_state.csv", "x,psi0", [grid.x, psi0.real])
    summary = {"e0": e0, "e1": e1, "gap": e1 - e0}
    _write_json(out / "summary.json", summary)
    return summary
