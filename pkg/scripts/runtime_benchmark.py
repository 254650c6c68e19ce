"""Per-iteration runtime of the update variants as the target count grows.

CLAIM   Extraction updates cost far less per iteration than full separation
        (iva-ip1) once the mic count is moderately large, the two pair-update
        formulations order as ive-ip2-new < ive-ip2-old, and ive-ip2-new
        scales roughly linearly in the number of targets.

DESIGN  Spectral scenarios with 8 mics, 64 bins, 500 frames, targets
        K = 1..3.  Every (variant, K) cell is run --reps times in round-robin
        order under a single BLAS thread; the per-run statistic is the median
        per-iteration wall time with the first (warm-up) iteration dropped,
        and cells report the median over repetitions.  A log-log line fit
        over K gives the ive-ip2-new growth exponent.

Run:    python3 scripts/runtime_benchmark.py [--reps 5] [--iters 50]
"""

import argparse

import numpy as np
from threadpoolctl import threadpool_limits

from ivex.runner import ExtractionConfig, run_extraction
from ivex.simulate import make_scenario

NUM_MICS = 8
NUM_FREQS = 64
NUM_FRAMES = 500
TARGETS = (1, 2, 3)
VARIANTS = ("ive-ip1", "ive-ip2-new", "ive-ip2-old", "iva-ip1")


def measure(args):
    scenarios = {
        k: make_scenario(num_sources=k, num_mics=NUM_MICS,
                         num_noises=NUM_MICS - k, snr_db=5.0,
                         domain="spectral", seed=args.seed,
                         num_freqs=NUM_FREQS, num_frames=NUM_FRAMES)
        for k in TARGETS
    }
    samples = {(v, k): [] for v in VARIANTS for k in TARGETS}
    with threadpool_limits(limits=1):
        for _ in range(args.reps):
            for variant in VARIANTS:
                for k in TARGETS:
                    config = ExtractionConfig(variant=variant, num_sources=k,
                                              iterations=args.iters)
                    run = run_extraction(scenarios[k].mixture, config)
                    per_iter = run.trajectory.per_iteration_seconds[1:]
                    samples[(variant, k)].append(np.median(per_iter))
    return {cell: float(np.median(times)) for cell, times in samples.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--iters", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cells = measure(args)

    header = "  ".join(f"{'K=' + str(k):>10}" for k in TARGETS)
    print(f"{'ms/iteration':<14}{header}")
    for variant in VARIANTS:
        row = "  ".join(f"{cells[(variant, k)] * 1e3:>10.3f}" for k in TARGETS)
        print(f"{variant:<14}{row}")

    log_k = np.log(np.asarray(TARGETS, dtype=float))
    log_t = np.log([cells[("ive-ip2-new", k)] for k in TARGETS])
    exponent = np.polyfit(log_k, log_t, 1)[0]
    print(f"\nive-ip2-new growth exponent over K: {exponent:.3f}")
    k1 = {v: cells[(v, 1)] for v in VARIANTS}
    ordered = sorted(k1, key=k1.get)
    print("single-target ordering:", " < ".join(ordered))


if __name__ == "__main__":
    main()
