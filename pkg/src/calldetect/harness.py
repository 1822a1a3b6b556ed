"""Per-case experiment protocol, result files and the single-trace classifier."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence
from xml.sax.saxutils import escape

import numpy as np

from calldetect.activity import (
    ContextTablePredictor,
    InsufficientDataError,
    PipelineConfig,
    extract_features,
    train_predictor,
)
from calldetect.classifier import EvalReport, SvmHyperparams, evaluate, load_model, predict, save_model, split_dataset, train_svm
from calldetect.metrics import CallTrace, CallUniverse, Label
from calldetect.simulator import (
    Case,
    derive_seed,
    generate_case_dataset,
    generate_reference_experiment,
    read_trace,
)

log = logging.getLogger(__name__)

RESULTS_HEADER = ["case_id", "repetition", "accuracy", "tn", "fp", "fn", "tp"]
SUMMARY_ID = "average_cases_1_5"

PROFILES: dict[str, dict[str, Any]] = {
    "full": {},
    "desk": {"event_count_mean": 1000.0, "event_count_sd": 300.0, "window_size": 50},
}


class CaseRunError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    cases: tuple[Case, ...] = tuple(Case)
    base_seed: int = 0
    n_authentic: int = 30
    n_compromised: int = 30
    event_count_mean: float = 10000.0
    event_count_sd: float = 3000.0
    bucket_size: int = 32
    window_size: int = 100
    train_fraction: float = 2 / 3
    repetitions: int = 1
    ablate_activity_value: bool = False
    regularization: float = 1.0
    epochs: int = 200
    output_dir: str = "results"
    save_models: bool = True
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(Case.parse(c) if isinstance(c, str) else c for c in self.cases))
        if not self.cases:
            raise ValueError("no cases configured")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.n_authentic < 2 or self.n_compromised < 2:
            raise ValueError("need >= 2 experiments per label")
        if self.event_count_mean <= 0 or self.event_count_sd < 0:
            raise ValueError("event count mean must be > 0 and sd >= 0")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        self.pipeline  # validates bucket/window sizes

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.bucket_size, self.window_size)

    @classmethod
    def from_mapping(cls, values: dict[str, Any], profile: str | None = None) -> "RunConfig":
        merged: dict[str, Any] = {}
        if profile:
            if profile not in PROFILES:
                raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
            merged.update(PROFILES[profile])
        merged.update(values)
        known = {f.name for f in fields(cls)}
        unknown = set(merged) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "cases" in merged:
            merged["cases"] = tuple(merged["cases"])
        return cls(**merged)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["cases"] = [c.value for c in self.cases]
        return d


@dataclass
class CaseResult:
    case_id: Case
    reports: list[EvalReport]
    wall_time: float = 0.0
    activity_values: list[dict[str, list[int]]] = field(default_factory=list, repr=False)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.reports]))


@dataclass
class RunSummary:
    results: list[CaseResult]
    average: float | None  # over cases 1-5 only; None when none ran

    def by_case(self, case: Case) -> CaseResult:
        return next(r for r in self.results if r.case_id is case)


def run_case(case: Case, config: RunConfig, models_dir: Path | None = None) -> CaseResult:
    """Generate, featurize, split, train and evaluate ``config.repetitions`` times."""
    started = time.perf_counter()
    pipeline = config.pipeline
    hp_base = SvmHyperparams(config.regularization, config.epochs)
    reports, activity = [], []
    for rep in range(config.repetitions):
        try:
            ds_seed = derive_seed(config.base_seed, case.ordinal, rep)
            dataset = generate_case_dataset(case, ds_seed, config.n_authentic, config.n_compromised,
                                            config.event_count_mean, config.event_count_sd)
            reference = generate_reference_experiment(case, ds_seed, config.event_count_mean,
                                                      config.event_count_sd)
            predictor = train_predictor(reference.trace, pipeline)
            feats = {e.trace.experiment_id: extract_features(e.trace, predictor, pipeline, strict=False)
                     for e in dataset.experiments}
            train, test = split_dataset(dataset, config.train_fraction, seed=derive_seed(ds_seed, 1))
            train_f = [feats[e.trace.experiment_id] for e in train.experiments]
            test_f = [feats[e.trace.experiment_id] for e in test.experiments]
            svm = train_svm(train_f, replace(hp_base, seed=derive_seed(ds_seed, 2)),
                            ablate_activity=config.ablate_activity_value)
            reports.append(evaluate(svm, test_f, len(train_f), case.value))
        except (ValueError, InsufficientDataError) as exc:
            raise CaseRunError(f"{case.value} repetition {rep}: {exc}") from exc
        activity.append({
            label.value: [feats[e.trace.experiment_id].activity_value for e in dataset.by_label(label)]
            for label in (Label.AUTHENTIC, Label.COMPROMISED)
        })
        if models_dir is not None:
            models_dir.mkdir(parents=True, exist_ok=True)
            save_model(models_dir / f"{case.value}_r{rep}.json", svm,
                       universe_names=dataset.universe.names,
                       pipeline=asdict(pipeline), predictor=predictor.to_dict())
        log.info("%s rep %d: accuracy %.3f", case.value, rep, reports[-1].accuracy)
    return CaseResult(case, reports, time.perf_counter() - started, activity)


def _run_case_job(args: tuple[Case, RunConfig, Path | None]) -> CaseResult:
    return run_case(*args)


def headline_average(results: Sequence[CaseResult]) -> float | None:
    scored = [r.mean_accuracy for r in results if r.case_id is not Case.CONTROL]
    return float(np.mean(scored)) if scored else None


def run_all(config: RunConfig, write: bool = True) -> RunSummary:
    out = Path(config.output_dir)
    models_dir = out / "models" if (write and config.save_models) else None
    jobs = [(case, config, models_dir) for case in config.cases]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_case_job, jobs))
    else:
        results = [_run_case_job(j) for j in jobs]
    summary = RunSummary(results, headline_average(results))
    if write:
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(out / "results.csv", summary)
        (out / "accuracy.svg").write_text(render_svg(_case_means(summary)), encoding="utf-8")
        (out / "run_manifest.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    return summary


def write_results_csv(path: Path, summary: RunSummary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for result in summary.results:
            for rep, r in enumerate(result.reports):
                writer.writerow([result.case_id.value, rep, f"{r.accuracy:.6f}", r.tn, r.fp, r.fn, r.tp])
        avg = "" if summary.average is None else f"{summary.average:.6f}"
        writer.writerow([SUMMARY_ID, "", avg, "", "", "", ""])


def read_results_csv(path: Path) -> tuple[dict[str, float], float | None]:
    """Per-case mean accuracy (in file order) and the stored headline average."""
    per_case: dict[str, list[float]] = {}
    average = None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["case_id"] == SUMMARY_ID:
                average = float(row["accuracy"]) if row["accuracy"] else None
            else:
                per_case.setdefault(row["case_id"], []).append(float(row["accuracy"]))
    return {k: float(np.mean(v)) for k, v in per_case.items()}, average


def _case_means(summary: RunSummary) -> dict[str, float]:
    return {r.case_id.value: r.mean_accuracy for r in summary.results}


def render_svg(case_means: dict[str, float], width: int = 520, height: int = 320) -> str:
    """Bar chart of per-case accuracy with a red line at the cases 1-5 average."""
    left, right, top, bottom = 50, 20, 30, 40
    plot_w, plot_h = width - left - right, height - top - bottom
    names = list(case_means)
    slot = plot_w / max(1, len(names))
    bar_w = slot * 0.6

    def y_of(acc: float) -> float:
        return top + plot_h * (1.0 - acc)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">Accuracy per case</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_of(tick)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{width - right}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{tick:.2f}</text>')
    for i, name in enumerate(names):
        acc = case_means[name]
        x = left + i * slot + (slot - bar_w) / 2
        y = y_of(acc)
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{top + plot_h - y:.1f}" '
                     f'fill="#4878a8"><title>{escape(name)}: {acc:.3f}</title></rect>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" text-anchor="middle">{acc:.2f}</text>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{top + plot_h + 16:.1f}" '
                     f'text-anchor="middle">{escape(name)}</text>')
    scored = [v for k, v in case_means.items() if k != Case.CONTROL.value]
    if scored:
        avg = float(np.mean(scored))
        y = y_of(avg)
        parts.append(f'<line x1="{left}" y1="{y:.1f}" x2="{width - right}" y2="{y:.1f}" '
                     f'stroke="red" stroke-width="2" stroke-dasharray="6,3"/>')
        parts.append(f'<text x="{width - right}" y="{y - 4:.1f}" text-anchor="end" fill="red">'
                     f'average {avg:.3f}</text>')
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{width - right}" y2="{top + plot_h}" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@dataclass(frozen=True)
class Verdict:
    label: Label
    activity_value: int | None
    reason: str

    @property
    def exit_code(self) -> int:
        return 2 if self.label is Label.COMPROMISED else 0


def classify_trace(trace_file: str | Path, model_file: str | Path) -> Verdict:
    """Apply a stored model to a recorded trace.

    Any call name outside the model's universe is an immediate COMPROMISED
    verdict. Raises ``TraceParseError`` on malformed files.
    """
    names = read_trace(trace_file)
    model, doc = load_model(model_file)
    universe = CallUniverse(doc["universe"])
    unseen = sorted({n for n in names if n not in universe})
    if unseen:
        return Verdict(Label.COMPROMISED, None, f"unseen call type: {', '.join(unseen)}")
    if doc.get("predictor") is None:
        raise ValueError(f"{model_file}: model has no next-call predictor")
    pipeline = PipelineConfig(**doc["pipeline"])
    predictor = ContextTablePredictor.from_dict(doc["predictor"])
    trace = CallTrace.from_names(names, universe)
    feature = extract_features(trace, predictor, pipeline)
    return Verdict(predict(model, feature), feature.activity_value, "svm decision")
