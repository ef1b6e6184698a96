"""Command line interface: solve an instance, analyze its spectrum, or run
Monte-Carlo MSE benchmarks.

Exit codes: 0 on success, 1 on a validation error (bad arguments or bad
instance data), 2 on a numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench
from .engine import export_run_csv, run_apc
from .exceptions import InputError, NumericalError
from .model import load_instance, partition_rows, projection_complement
from .spectral import (
    gain_from_system,
    neumann_margin,
    verify_eigenvector_formula,
    verify_multiplicity_structure,
    verify_spectrum,
)
from .theory import prediction_report

#: Dense eigensolves above this state dimension are skipped by `analyze`.
_DESK_SCALE = 600


class _UsageError(Exception):
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; map those to the validation
    # exit code instead.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _complex_repr(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="apc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the solver on an instance file and print the solution")
    solve.add_argument("instance", help="path to an instance JSON file")
    solve.add_argument("--t", type=int, default=None, help="number of rounds (default: automatic)")
    solve.add_argument("--mode", choices=["sequential", "threads"], default="sequential")
    solve.add_argument("--csv", default=None, help="also write the per-round trajectory CSV here")

    analyze = sub.add_parser("analyze", help="emit the spectral report and error prediction as JSON")
    analyze.add_argument("instance", help="path to an instance JSON file")
    analyze.add_argument("--t-max", type=int, default=50, help="rounds of transient norms to include")
    analyze.add_argument("--out", default=None, help="write the JSON here instead of stdout")

    b = sub.add_parser("bench", help="run a Monte-Carlo MSE experiment")
    b.add_argument("--m", type=int, default=32)
    b.add_argument("--s", type=int, default=16)
    b.add_argument("--kappa", type=float, default=1.6, help="condition-number target (0 disables targeting)")
    b.add_argument("--noise-power", type=float, default=1e-4)
    b.add_argument("--trials", type=int, default=200)
    b.add_argument("--t-max", type=int, default=20)
    b.add_argument("--seed", type=int, default=42)
    b.add_argument("--out", required=True, help="output path prefix (writes .csv, .svg, .json)")
    b.add_argument(
        "--sweep",
        default=None,
        help="sweep spec, e.g. m=8,32,128 or kappa=1.56,3.0,6.0 or noise=1e-5,1e-4,1e-3",
    )
    b.add_argument("--noise-dist", choices=["gaussian", "uniform"], default="gaussian")
    b.add_argument("--fixed-truth", action="store_true", help="reuse one ground truth per curve")
    b.add_argument("--workers", type=int, default=1)
    return parser


def _parse_sweep(spec: str) -> tuple[str, tuple]:
    name, _, raw = spec.partition("=")
    name = name.strip().lower()
    mapping = {"m": "m", "kappa": "kappa", "noise": "noise_power", "noise_power": "noise_power"}
    if name not in mapping or not raw:
        raise InputError(f"bad sweep spec {spec!r}; expected name=v1,v2,...")
    try:
        values = tuple(float(v) for v in raw.split(","))
    except ValueError as exc:
        raise InputError(f"bad sweep values in {spec!r}: {exc}") from exc
    if mapping[name] == "m":
        values = tuple(int(v) for v in values)
    return mapping[name], values


def _cmd_solve(args) -> int:
    system = load_instance(args.instance)
    record = run_apc(system, rounds=args.t, mode=args.mode)
    for z in record.final:
        print(_complex_repr(z))
    if args.csv:
        export_run_csv(record, args.csv, include_coords=True)
    return 0


def _cmd_analyze(args) -> int:
    system = load_instance(args.instance)
    gain, spectrum, params = gain_from_system(system)
    blocks = partition_rows(system)
    projections = [projection_complement(block) for block in blocks]
    report: dict = {
        "m": system.m,
        "s": system.s,
        "theta_min": spectrum.theta_min,
        "theta_max": spectrum.theta_max,
        "kappa": params.kappa,
        "alpha": params.alpha,
        "gamma": params.gamma,
        "eta": params.eta,
    }
    if gain.dim <= _DESK_SCALE:
        spectral = verify_spectrum(gain, spectrum.thetas, params)
        eigvec = verify_eigenvector_formula(gain, spectrum, projections, params)
        mult = verify_multiplicity_structure(gain, spectrum.thetas, params)
        smallest, margin = neumann_margin(gain, params.alpha)
        report["spectrum"] = spectral.to_json_dict()
        report["eigenvector_max_residual"] = eigvec.max_residual
        report["eigenvector_degenerate_pairs"] = len(eigvec.degenerate)
        report["shifted_rank"] = mult.shifted_rank
        report["shifted_rank_bound"] = mult.rank_bound
        report["fixed_point_margin"] = margin
    else:
        report["spectrum"] = None
        report["note"] = f"state dimension {gain.dim} above dense verification scale"
    if system.x_star is not None:
        report["prediction"] = prediction_report(
            system, params, spectrum.x, gain, blocks, projections, t_max=args.t_max
        )
    else:
        report["prediction"] = None
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_bench(args) -> int:
    sweep, sweep_values = (None, ())
    if args.sweep:
        sweep, sweep_values = _parse_sweep(args.sweep)
    cfg = bench.ExperimentConfig(
        m=args.m,
        s=args.s,
        target_kappa=None if args.kappa == 0 else args.kappa,
        noise_power=args.noise_power,
        trials=args.trials,
        t_max=args.t_max,
        seed=args.seed,
        sweep=sweep,
        sweep_values=sweep_values,
        noise_dist=args.noise_dist,
        fixed_truth=args.fixed_truth,
        workers=args.workers,
    )
    curves = bench.run_mse_experiment(cfg)
    paths = bench.emit_outputs(curves, args.out, config=cfg)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        return _cmd_bench(args)
    except _UsageError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return 1
    except (InputError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
