"""Command line entry point: generate, run, classify, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from calldetect.activity import InsufficientDataError, extract_features, train_predictor, write_feature_csv
from calldetect.harness import CaseRunError, RunConfig, classify_trace, read_results_csv, render_svg, run_all
from calldetect.simulator import (
    TraceParseError,
    derive_seed,
    generate_case_dataset,
    generate_reference_experiment,
    save_dataset,
    write_trace,
)

# CLI flag dest -> RunConfig field
_FLAG_FIELDS = {
    "seed": "base_seed",
    "cases": "cases",
    "n_authentic": "n_authentic",
    "n_compromised": "n_compromised",
    "mean": "event_count_mean",
    "sd": "event_count_sd",
    "bucket_size": "bucket_size",
    "window_size": "window_size",
    "train_fraction": "train_fraction",
    "repetitions": "repetitions",
    "ablate_activity": "ablate_activity_value",
    "regularization": "regularization",
    "epochs": "epochs",
    "out": "output_dir",
    "jobs": "jobs",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with RunConfig keys; flags override it")
    p.add_argument("--profile", choices=["full", "desk"], help="preset; desk = mean 1000, sd 300, window 50")
    p.add_argument("--seed", type=int)
    p.add_argument("--cases", type=lambda s: [c for c in s.split(",") if c],
                   help="comma separated, e.g. control,case1,case5")
    p.add_argument("--n-authentic", type=int)
    p.add_argument("--n-compromised", type=int)
    p.add_argument("--mean", type=float, help="event count mean")
    p.add_argument("--sd", type=float, help="event count standard deviation")
    p.add_argument("--bucket-size", type=int)
    p.add_argument("--window-size", type=int)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--ablate-activity", action="store_true", default=None,
                   help="zero the activity value feature before training")
    p.add_argument("--regularization", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--jobs", type=int, help="worker processes across cases")
    p.add_argument("--out", help="output directory")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    profile = args.profile
    if args.config is not None:
        values.update(json.loads(args.config.read_text(encoding="utf-8")))
        profile = profile or values.pop("profile", None)
    for flag, key in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return RunConfig.from_mapping(values, profile=profile)


def cmd_generate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out = Path(config.output_dir)
    for case in config.cases:
        case_dir = out / case.value
        ds_seed = derive_seed(config.base_seed, case.ordinal, 0)
        dataset = generate_case_dataset(case, ds_seed, config.n_authentic, config.n_compromised,
                                        config.event_count_mean, config.event_count_sd)
        manifest = save_dataset(dataset, case_dir)
        reference = generate_reference_experiment(case, ds_seed, config.event_count_mean, config.event_count_sd)
        write_trace(case_dir / "reference.trace", reference.trace.names())
        predictor = train_predictor(reference.trace, config.pipeline)
        features = [extract_features(e.trace, predictor, config.pipeline, strict=False) for e in dataset.experiments]
        write_feature_csv(case_dir / "features.csv", features, dataset.universe)
        print(f"{case.value}: {len(dataset.experiments)} experiments -> {manifest}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    started = time.perf_counter()
    try:
        summary = run_all(config)
    except CaseRunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for result in summary.results:
        print(f"{result.case_id.value:8s} mean accuracy {result.mean_accuracy:.3f} "
              f"({len(result.reports)} reps, {result.wall_time:.1f}s)")
    if summary.average is not None:
        print(f"average over cases 1-5: {summary.average:.3f}")
    print(f"wrote {config.output_dir}/results.csv, accuracy.svg, run_manifest.json "
          f"in {time.perf_counter() - started:.1f}s")
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    try:
        verdict = classify_trace(args.trace, args.model)
    except (TraceParseError, InsufficientDataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    activity = "n/a" if verdict.activity_value is None else verdict.activity_value
    print(f"verdict: {verdict.label.value}")
    print(f"activity_value: {activity}")
    print(f"reason: {verdict.reason}")
    return verdict.exit_code


def cmd_report(args: argparse.Namespace) -> int:
    results = Path(args.results)
    means, average = read_results_csv(results)
    svg_path = Path(args.svg) if args.svg else results.with_name("accuracy.svg")
    svg_path.write_text(render_svg(means), encoding="utf-8")
    for case_id, acc in means.items():
        print(f"{case_id:8s} {acc:.3f}")
    if average is not None:
        print(f"average over cases 1-5: {average:.3f}")
    print(f"wrote {svg_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calldetect", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write per-case datasets, trace files and feature CSVs")
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run the full per-case protocol")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("classify", help="classify one recorded trace with a stored model")
    p.add_argument("trace", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", help="re-render the SVG chart from a results.csv")
    p.add_argument("results", type=Path)
    p.add_argument("--svg", help="output path (default: accuracy.svg next to results)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
