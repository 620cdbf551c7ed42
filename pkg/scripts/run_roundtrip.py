"""Synthetic round-trip experiment: generate seeded trips on an extract, path
them, and report endpoint accuracy against the random-guess baseline.

    python scripts/run_roundtrip.py tests/data/fi_suburb.osm --trips 50 --seeds 0 1 2 --noise 0 0.03
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from elastic_pathing.eval import evaluate, quartile_comparison, summarize
from elastic_pathing.graph import graph_from_osm
from elastic_pathing.pathing import PathingConfig, search
from elastic_pathing.synth import DriverProfile, generate_suite


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("osm")
    ap.add_argument("--trips", type=int, default=50)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.03])
    ap.add_argument("--delta", type=float, default=PathingConfig.delta)
    ap.add_argument("--quartiles", action="store_true", help="also print the per-quartile baseline comparison")
    args = ap.parse_args()

    graph = graph_from_osm(args.osm)
    config = PathingConfig(delta=args.delta)
    print("seed noise  n  <=250m  <=500m  <=800m  mean_m  median_m  mean_s  max_s  best_effort")
    for seed in args.seeds:
        for noise in args.noise:
            trips = generate_suite(graph, args.trips, seed=seed, profile=DriverProfile(noise_sigma=noise))
            pairs, times, best_effort = [], [], 0
            for trip in trips:
                t0 = time.perf_counter()
                best = search(graph, trip.trace, trip.start, config).results[0]
                times.append(time.perf_counter() - t0)
                best_effort += best.best_effort
                pairs.append((best, trip))
            evals = evaluate(pairs)
            s = summarize(evals)
            print(f"{seed:4d} {noise:5.2f} {s.n:3d}  {s.within[250.0]:6.2f}  {s.within[500.0]:6.2f}  "
                  f"{s.within[800.0]:6.2f}  {s.mean_error:6.0f}  {s.median_error:8.0f}  "
                  f"{np.mean(times):6.3f}  {max(times):5.2f}  {best_effort:11d}")
            if args.quartiles:
                for lo, hi, err, base in quartile_comparison(evals):
                    print(f"      length [{lo:6.0f}, {hi:6.0f}] m: mean error {err:6.0f} m, guess baseline {base:6.0f} m")


if __name__ == "__main__":
    main()
