#!/usr/bin/env python3
"""Full six-case protocol at full scale (10k +- 3k events, bucket 32, window 100).

    python scripts/full_protocol.py --repetitions 5 --out results/full
"""
import argparse
import logging

from calldetect.harness import RunConfig, run_all


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repetitions", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default="results/full")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    config = RunConfig(base_seed=args.seed, repetitions=args.repetitions, jobs=args.jobs, output_dir=args.out)
    summary = run_all(config)
    for r in summary.results:
        accs = " ".join(f"{rep.accuracy:.2f}" for rep in r.reports)
        print(f"{r.case_id.value:8s} mean {r.mean_accuracy:.3f}  [{accs}]")
    print(f"average over cases 1-5: {summary.average:.3f}")


if __name__ == "__main__":
    main()
