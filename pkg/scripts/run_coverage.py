#!/usr/bin/env python3
"""Bootstrap confidence-interval coverage for the value of a fixed rule.

Replicates the following experiment: draw n rows from the worked
binary-outcome example process, estimate the value of the exact
natural-treatment rule, and form a 95% percentile bootstrap interval.  Over
--replications independent samples the interval should cover the exact value
about 95% of the time, and with a binary outcome every interval must stay
inside [0, 1].

Monte Carlo replications run in parallel when --workers > 1; each replication
derives its own seed stream, so the result does not depend on scheduling.
"""

import argparse
import json
from concurrent.futures import ProcessPoolExecutor

from superregime.estimate import EstimationConfig, bootstrap_value_ci
from superregime.simulate import build_example_law, child_seed, draw_sample, oracle_value, true_regime


def one_replication(args: tuple) -> dict:
    r, n, bootstrap_reps, seed, c = args
    law = build_example_law(3, c=c)
    regime = true_regime(law, "superoptimal_LA")
    truth = oracle_value(law, regime)
    dataset = draw_sample(law, n, seed=child_seed(seed, 101, r))
    config = EstimationConfig(bootstrap_reps=bootstrap_reps, seed=child_seed(seed, 202, r))
    point, ci, _info = bootstrap_value_ci(dataset, regime, config)
    return {
        "covered": bool(ci.lo <= truth <= ci.hi),
        "in_unit": bool(0.0 <= ci.lo and ci.hi <= 1.0),
        "width": ci.hi - ci.lo,
        "point": point,
    }


def coverage_experiment(
    replications: int = 100,
    n: int = 5_000,
    bootstrap_reps: int = 500,
    seed: int = 0,
    c: float = 0.2,
    workers: int = 1,
) -> dict:
    jobs = [(r, n, bootstrap_reps, seed, c) for r in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_replication, jobs))
    else:
        results = [one_replication(job) for job in jobs]
    law = build_example_law(3, c=c)
    truth = oracle_value(law, true_regime(law, "superoptimal_LA"))
    return {
        "replications": replications,
        "n": n,
        "bootstrap_reps": bootstrap_reps,
        "truth": truth,
        "covered": sum(r["covered"] for r in results),
        "all_in_unit": all(r["in_unit"] for r in results),
        "mean_width": sum(r["width"] for r in results) / replications,
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--replications", type=int, default=100)
    parser.add_argument("--n", type=int, default=5_000)
    parser.add_argument("--bootstrap-reps", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()

    result = coverage_experiment(
        replications=args.replications,
        n=args.n,
        bootstrap_reps=args.bootstrap_reps,
        seed=args.seed,
        workers=args.workers,
    )
    if args.json:
        print(json.dumps(result, indent=2))
        return 0
    print(
        f"covered {result['covered']}/{result['replications']} "
        f"(truth {result['truth']:.4f}, mean CI width {result['mean_width']:.4f}, "
        f"all CIs in [0,1]: {result['all_in_unit']})"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
