"""Toy-scene benchmark: static density sweep, speed and interval sweep, positioning.

Trains every model once (about 15 minutes on one core) and prints the tables the
acceptance suite checks. Usage: python scripts/toy_benchmark.py [--seed 0] [--skip-static]
"""
import argparse

import numpy as np

from odechan.experiments import ToyRun

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-static", action="store_true")
    ap.add_argument("--skip-trajectory", action="store_true")
    args = ap.parse_args()
    run = ToyRun(args.seed)

    if not args.skip_static:
        print("\nstatic prediction, mean NMSE over held-out positions")
        print(f"{'density':>8s} {'ode':>8s} {'nn_db':>8s} {'ode wins':>9s}")
        for density in (25.0, 100.0):
            ode, nn_db = run.static_nmse(density)
            print(f"{density:8g} {ode.mean():8.3f} {nn_db.mean():8.3f} {np.mean(ode < nn_db):9.0%}")

    if not args.skip_trajectory:
        conditions = [(10.0, 1e-3), (40.0, 1e-3), (40.0, 2e-3)]
        results = {c: run.trajectory_benchmark(*c) for c in conditions}
        methods = list(results[conditions[0]])
        print("\nnext-sample prediction, mean NMSE")
        print(f"{'speed':>6s} {'dt ms':>6s} " + " ".join(f"{m:>9s}" for m in methods))
        for (speed, dt), row in results.items():
            print(f"{speed:6g} {dt * 1e3:6g} " + " ".join(f"{row[m]:9.3f}" for m in methods))

        print("\nposition error at the last measured sample, median cm")
        print(f"{'speed':>6s} {'dt ms':>6s} {'iterated':>9s} {'single':>9s}")
        for speed, dt in conditions:
            it, single = run.positioning_errors(speed, dt)
            print(f"{speed:6g} {dt * 1e3:6g} {np.median(it) * 100:9.2f} {np.median(single) * 100:9.2f}")
