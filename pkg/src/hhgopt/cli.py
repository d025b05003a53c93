"""Command-line front end.

    hhgopt optimize              --config problem.ini [--out DIR] [--seed N]
    hhgopt reference             --config problem.ini (--beta B | --match-fluence V | --match-peak V)
    hhgopt spectrum              --config problem.ini [--field FILE.npy]
    hhgopt validate-doubled-grid --config problem.ini --field FILE.npy [--accept TOL]
    hhgopt cap-optimize          --config problem.ini
    hhgopt eigensolve            --config problem.ini

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed acceptance check in validate mode.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from hhgopt import experiments as ex
from hhgopt.dynamics import PropagationAccuracyError, PropagationError
from hhgopt.functional import BoundaryViolationError
from hhgopt.optimizer import FeasibilityError, LineSearchError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VALIDATION = 4

_NUMERICAL_ERRORS = (
    PropagationError,
    PropagationAccuracyError,
    LineSearchError,
    FeasibilityError,
    BoundaryViolationError,
    FloatingPointError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hhgopt",
        description="Optimal-control enhancement of selected harmonics "
        "in a 1D strong-field model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="experiment INI file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--tol", type=float, default=None,
                       help="override propagation tolerance")

    common(sub.add_parser("optimize", help="run the control optimization"))

    ref = sub.add_parser("reference", help="propagate the single-color reference")
    common(ref)
    group = ref.add_mutually_exclusive_group(required=True)
    group.add_argument("--beta", type=float, help="fixed amplitude")
    group.add_argument("--match-fluence", type=float, help="match this fluence")
    group.add_argument("--match-peak", type=float, help="match this peak field")

    spect = sub.add_parser("spectrum", help="emit spectra of a stored field")
    common(spect)
    spect.add_argument("--field", default=None,
                       help=".npy file with full-grid spectral coefficients")

    val = sub.add_parser("validate-doubled-grid",
                         help="doubled-domain boundary-artifact check")
    common(val)
    val.add_argument("--field", required=True,
                     help=".npy file with full-grid spectral coefficients")
    val.add_argument("--accept", type=float, default=1e-2,
                     help="acceptance threshold on |delta_rel J_max|")

    common(sub.add_parser("cap-optimize", help="re-optimize the absorber"))
    common(sub.add_parser("eigensolve", help="stationary-model eigenvalues"))
    return parser


def _load_config(args: argparse.Namespace, mode: str) -> ex.ExperimentConfig:
    cfg = ex.parse_config(args.config)
    overrides: dict = {"mode": mode}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.tol is not None:
        overrides["tol"] = args.tol
    return dataclasses.replace(cfg, **overrides)


def _out_dir(args: argparse.Namespace, cfg: ex.ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path(cfg.directory)


def _load_field(path: str) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim != 1:
        raise ex.ConfigError(f"field file {path} must hold a 1D coefficient array")
    return arr


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    command = args.command
    mode = {"validate-doubled-grid": "validate"}.get(command, command)
    try:
        cfg = _load_config(args, mode if mode in ex.RUN_MODES else "spectrum")
        out = _out_dir(args, cfg)
        if command == "optimize":
            summary = ex.run_optimize(cfg, out)
        elif command == "reference":
            if args.beta is not None:
                summary = ex.run_reference(cfg, out, beta=args.beta)
            elif args.match_fluence is not None:
                summary = ex.run_reference(cfg, out, match=("fluence", args.match_fluence))
            else:
                summary = ex.run_reference(cfg, out, match=("peak", args.match_peak))
        elif command == "spectrum":
            coeffs = _load_field(args.field) if args.field else None
            summary = ex.run_spectrum(cfg, out, field_coeffs=coeffs)
        elif command == "validate-doubled-grid":
            summary = ex.run_validate(
                cfg, out, _load_field(args.field), accept=args.accept
            )
            print(json.dumps(summary, indent=2, sort_keys=True))
            return EXIT_OK if summary["accepted"] else EXIT_VALIDATION
        elif command == "cap-optimize":
            summary = ex.run_cap_optimize(cfg, out)
        elif command == "eigensolve":
            summary = ex.run_eigensolve(cfg, out)
        else:  # pragma: no cover - argparse enforces the choices
            raise ex.ConfigError(f"unknown command {command}")
    except ex.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
