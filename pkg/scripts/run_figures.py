#!/usr/bin/env python3
"""Reproduce the three benchmark figures: MSE vs rounds under varying agent
count, conditioning, and noise power.

Writes fig1/fig2/fig3 artifacts (.csv, .svg, .json) into the output directory
and prints settle-round diagnostics for each curve.

Usage:
    python scripts/run_figures.py --out-dir results --trials 200
"""

import argparse
import sys
import time

from apc.bench import ExperimentConfig, emit_outputs, flatten_round, run_mse_experiment


def run_figure(name, cfg, out_dir):
    started = time.time()
    curves = run_mse_experiment(cfg)
    paths = emit_outputs(curves, f"{out_dir}/{name}", config=cfg)
    print(f"{name}: {time.time() - started:.1f}s -> {paths['csv']}")
    for curve in curves:
        final = curve.points[-1][1]
        print(
            f"  {cfg.sweep}={curve.sweep_value:g}: settled by T={flatten_round(curve)}, "
            f"final MSE {final:.3e}, kappa {curve.kappa:.3f}, alpha {curve.alpha:.3f}"
        )
    return curves


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)

    common = dict(trials=args.trials, workers=args.workers)

    run_figure(
        "fig1_agents",
        ExperimentConfig(
            m=8, s=8, target_kappa=1.6, noise_power=1e-4, t_max=20,
            seed=args.seed, sweep="m", sweep_values=(8, 32, 128), **common,
        ),
        args.out_dir,
    )
    run_figure(
        "fig2_conditioning",
        ExperimentConfig(
            m=32, s=16, noise_power=1e-4, t_max=25,
            seed=args.seed + 1, sweep="kappa", sweep_values=(1.56, 3.0, 6.0), **common,
        ),
        args.out_dir,
    )
    run_figure(
        "fig3_noise",
        ExperimentConfig(
            m=32, s=16, target_kappa=1.6, t_max=20,
            seed=args.seed + 2, sweep="noise_power",
            sweep_values=(1e-5, 1e-4, 1e-3), **common,
        ),
        args.out_dir,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
