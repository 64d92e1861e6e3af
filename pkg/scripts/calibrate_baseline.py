"""Sensitivity of the Example 2 design to the unstated baseline hazard.

For each baseline rate prints the null rejection rate of the information-time
boundary, the mean stopping analysis, and the Brownian comparator's coverage
errors at a chosen beta. None of this needs the hybrid resampler, so it is fast.

Usage: python scripts/calibrate_baseline.py --beta -0.6931 --reps 600
"""

import argparse
import dataclasses

import numpy as np

from seqsurv.resample import Example2Config, brownian_siegmund_pvalue, coverage_errors
from seqsurv.trial_sim import TestSpec, generate_trial, replicate_rng, run_test


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.5, 1.0])
    ap.add_argument("--beta", type=float, default=0.0)
    ap.add_argument("--reps", type=int, default=600)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--monitoring", choices=("discrete", "continuous"), default="discrete")
    args = ap.parse_args()
    for rate in args.rates:
        cfg = dataclasses.replace(Example2Config(), baseline_rate=rate)
        spec = TestSpec("cox", boundary=cfg.boundary, alpha=cfg.alpha)
        p, stops, null_rej = [], [], []
        for r in range(args.reps):
            o = run_test(generate_trial(cfg.scenario(args.beta), replicate_rng(args.seed, 0, r)), spec,
                         cfg.analysis_times)
            p.append(brownian_siegmund_pvalue(o, args.beta, cfg.boundary, monitoring=args.monitoring))
            stops.append(o.stop_index)
            o0 = run_test(generate_trial(cfg.scenario(0.0), replicate_rng(args.seed, 1, r)), spec,
                          cfg.analysis_times)
            null_rej.append(o0.reject)
        lo, up = coverage_errors(p, cfg.alpha)
        print(f"rate {rate:<5} null rejection {np.mean(null_rej):.4f}  mean stop {np.mean(stops):.2f}"
              f"  brownian errors {100 * lo:.2f}% / {100 * up:.2f}%", flush=True)


if __name__ == "__main__":
    main()
