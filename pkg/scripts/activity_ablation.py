#!/usr/bin/env python3
"""Per-case accuracy with and without the activity-value feature, over several seeds.

    python scripts/activity_ablation.py --seeds 5 --profile desk
"""
import argparse

import numpy as np

from calldetect.harness import RunConfig, run_all


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--repetitions", type=int, default=5)
    parser.add_argument("--profile", choices=["full", "desk"], default="desk")
    args = parser.parse_args()

    table: dict[tuple[str, bool], list[float]] = {}
    for seed in range(args.seeds):
        for ablate in (False, True):
            cfg = RunConfig.from_mapping({"base_seed": seed, "repetitions": args.repetitions,
                                          "ablate_activity_value": ablate}, profile=args.profile)
            for r in run_all(cfg, write=False).results:
                table.setdefault((r.case_id.value, ablate), []).append(r.mean_accuracy)

    print(f"{'case':8s} {'with activity':>16s} {'ablated':>16s}")
    for case in dict.fromkeys(c for c, _ in table):
        cells = []
        for ablate in (False, True):
            v = np.array(table[(case, ablate)])
            cells.append(f"{v.mean():.3f} +- {v.std():.3f}")
        print(f"{case:8s} {cells[0]:>16s} {cells[1]:>16s}")


if __name__ == "__main__":
    main()
