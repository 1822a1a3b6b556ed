"""Device state-machine simulator producing labeled call traces.

The machine idles in q_I; each event moves it to the benign state (probability
``p_benign``) or the malicious state (``p_malicious``), which emits its fixed
call template and returns to idle. After a Gaussian-distributed number of
events the machine halts without emitting anything.

Randomness: every experiment owns a ``numpy.random.Generator(PCG64(seed))``.
Per-experiment seeds come from ``numpy.random.SeedSequence`` over
``(base_seed, case ordinal, index)`` so datasets are reproducible across runs
and platforms.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from calldetect.metrics import CallTrace, CallUniverse, Label, metric_profile

MANIFEST_FORMAT = "calldetect-dataset/1"
REFERENCE_TAG = 0xFFFF_FFFF


class Case(str, enum.Enum):
    CONTROL = "control"
    CASE1_SD_M_C = "case1"
    CASE2_SD_C_M = "case2"
    CASE3_LD = "case3"
    CASE4_ED = "case4"
    CASE5_HD = "case5"

    @property
    def ordinal(self) -> int:
        return list(Case).index(self)

    @classmethod
    def parse(cls, text: str) -> "Case":
        text = text.strip().lower()
        for case in cls:
            if text in (case.value, case.name.lower()):
                return case
        raise ValueError(f"unknown case {text!r}; expected one of {[c.value for c in cls]}")


_TEMPLATES: dict[Case, tuple[tuple[str, ...], tuple[str, ...]]] = {
    Case.CONTROL: (("malloc", "malloc", "free", "free"), ("malloc", "malloc", "free", "free")),
    Case.CASE1_SD_M_C: (("malloc", "free"), ("malloc", "free", "mmap")),
    Case.CASE2_SD_C_M: (("malloc", "free", "mmap"), ("malloc", "free")),
    # the malicious list must not be a repetition of the benign one, or the
    # two states emit indistinguishable streams
    Case.CASE3_LD: (("malloc", "free"), ("malloc", "malloc", "free")),
    Case.CASE4_ED: (("malloc", "malloc", "malloc", "free"), ("malloc", "free", "free", "free")),
    Case.CASE5_HD: (("malloc", "malloc", "free", "free"), ("malloc", "free", "malloc", "free")),
}


def _profile_holds(case: Case, benign: Sequence[str], malicious: Sequence[str]) -> bool:
    universe = CallUniverse([*benign, *malicious])
    p = metric_profile(CallTrace.from_names(benign, universe), CallTrace.from_names(malicious, universe))
    same_types = p.sd_benign_malicious == 0 and p.sd_malicious_benign == 0
    if case is Case.CASE1_SD_M_C:
        return p.sd_malicious_benign > 0
    if case is Case.CASE2_SD_C_M:
        return p.sd_benign_malicious > 0 and p.sd_malicious_benign == 0
    if case is Case.CASE3_LD:
        return same_types and p.ld != 0
    if case is Case.CASE4_ED:
        return same_types and p.ld == 0 and p.ed != 0
    if case is Case.CASE5_HD:
        return same_types and p.ld == 0 and p.ed == 0 and p.hd != 0
    return p.hd == 0


def case_templates(case: Case) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Built-in (benign, malicious) call lists whose metric profile isolates ``case``."""
    benign, malicious = _TEMPLATES[case]
    if not _profile_holds(case, benign, malicious):
        raise AssertionError(f"templates for {case.value} violate its metric profile")
    return benign, malicious


@dataclass(frozen=True)
class DeviceModel:
    benign_template: tuple[str, ...]
    malicious_template: tuple[str, ...]
    p_benign: float = 1.0
    p_malicious: float = 0.0
    event_count_mean: float = 10000.0
    event_count_sd: float = 3000.0

    def __post_init__(self):
        if not self.benign_template or not self.malicious_template:
            raise ValueError("templates must be non-empty")
        for p in (self.p_benign, self.p_malicious):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability out of range: {p}")
        if abs(self.p_benign + self.p_malicious - 1.0) > 1e-12:
            raise ValueError("p_benign + p_malicious must equal 1")
        if self.event_count_mean <= 0 or self.event_count_sd < 0:
            raise ValueError("event count mean must be > 0 and sd >= 0")

    @property
    def universe(self) -> CallUniverse:
        return CallUniverse([*self.benign_template, *self.malicious_template])


@dataclass(frozen=True, eq=False)
class Experiment:
    trace: CallTrace
    device: Label
    seed: int
    event_count: int
    # call offsets at which a malicious emission starts
    malicious_offsets: np.ndarray

    @property
    def n_malicious(self) -> int:
        return int(self.malicious_offsets.size)


@dataclass(eq=False)
class Dataset:
    experiments: list[Experiment]
    universe: CallUniverse
    case: Case

    def by_label(self, label: Label) -> list[Experiment]:
        return [e for e in self.experiments if e.device is label]


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def sample_event_count(rng: np.random.Generator, mean: float, sd: float) -> int:
    if mean <= 0:
        raise ValueError("mean must be positive")
    value = rng.normal(mean, sd) if sd > 0 else float(mean)
    return max(0, int(np.rint(value)))


def run_experiment(model: DeviceModel, seed: int, *, event_count: int | None = None,
                   universe: CallUniverse | None = None, experiment_id: int = 0) -> Experiment:
    """Execute the state machine once.

    ``event_count`` overrides the Gaussian draw (the draw is still consumed so
    the Bernoulli stream does not shift).
    """
    universe = universe if universe is not None else model.universe
    rng = np.random.Generator(np.random.PCG64(seed))
    drawn = sample_event_count(rng, model.event_count_mean, model.event_count_sd)
    n = drawn if event_count is None else int(event_count)

    is_malicious = rng.random(n) < model.p_malicious
    benign = universe.encode(model.benign_template)
    malicious = universe.encode(model.malicious_template)

    lengths = np.where(is_malicious, malicious.size, benign.size)
    starts = np.zeros(n, dtype=np.int64)
    if n:
        np.cumsum(lengths[:-1], out=starts[1:])
    total = int(lengths.sum())
    # call k belongs to event owner[k], at position k - starts[owner[k]] in its template
    owner = np.repeat(np.arange(n), lengths)
    pos = np.arange(total) - starts[owner]
    calls = np.where(is_malicious[owner],
                     malicious[np.minimum(pos, malicious.size - 1)],
                     benign[np.minimum(pos, benign.size - 1)])

    device = Label.AUTHENTIC if model.p_malicious == 0 else Label.COMPROMISED
    trace = CallTrace(calls.astype(np.int32), universe, device, experiment_id)
    return Experiment(trace, device, int(seed), n, starts[is_malicious])


def _case_model(case: Case, compromised: bool, mean: float, sd: float) -> DeviceModel:
    benign, malicious = case_templates(case)
    p_m = 0.01 if compromised else 0.0
    return DeviceModel(benign, malicious, 1.0 - p_m, p_m, mean, sd)


def generate_case_dataset(case: Case, base_seed: int, n_authentic: int = 30, n_compromised: int = 30,
                          mean: float = 10000.0, sd: float = 3000.0) -> Dataset:
    """Authentic runs use (p_C, p_M) = (1, 0); compromised runs use (0.99, 0.01)."""
    if n_authentic < 1 or n_compromised < 1:
        raise ValueError("need at least one experiment per label")
    authentic = _case_model(case, False, mean, sd)
    compromised = _case_model(case, True, mean, sd)
    universe = authentic.universe
    experiments = []
    for i in range(n_authentic + n_compromised):
        model = authentic if i < n_authentic else compromised
        seed = derive_seed(base_seed, case.ordinal, i)
        experiments.append(run_experiment(model, seed, universe=universe, experiment_id=i))
    return Dataset(experiments, universe, case)


def generate_reference_experiment(case: Case, base_seed: int, mean: float = 10000.0,
                                  sd: float = 3000.0) -> Experiment:
    """One authentic run, seeded apart from every dataset index, for training the predictor."""
    model = _case_model(case, False, mean, sd)
    seed = derive_seed(base_seed, case.ordinal, REFERENCE_TAG)
    return run_experiment(model, seed, experiment_id=REFERENCE_TAG)


class TraceParseError(ValueError):
    pass


def write_trace(path: str | Path, names: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name in names:
            fh.write(name)
            fh.write("\n")


def read_trace(path: str | Path) -> list[str]:
    """Parse a one-call-per-line trace file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise TraceParseError(f"{path}: not valid UTF-8") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceParseError(f"{path}: empty trace")
    names = []
    for lineno, line in enumerate(lines, 1):
        name = line.rstrip("\r").strip()
        if not name or any(ch.isspace() for ch in name):
            raise TraceParseError(f"{path}:{lineno}: malformed call name {line!r}")
        names.append(name)
    return names


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write trace files plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    entries = []
    for exp in dataset.experiments:
        rel = f"traces/{exp.device.value}_{exp.trace.experiment_id:04d}.trace"
        write_trace(out_dir / rel, exp.trace.names())
        entries.append({
            "trace": rel,
            "label": exp.device.value,
            "seed": exp.seed,
            "event_count": exp.event_count,
            "case_id": dataset.case.value,
            "experiment_id": exp.trace.experiment_id,
        })
    manifest = {
        "format": MANIFEST_FORMAT,
        "case_id": dataset.case.value,
        "universe": dataset.universe.names,
        "experiments": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_dataset(manifest_path: str | Path) -> Dataset:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    if doc.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"unsupported manifest format {doc.get('format')!r}")
    universe = CallUniverse(doc["universe"])
    experiments = []
    for entry in doc["experiments"]:
        names = read_trace(manifest_path.parent / entry["trace"])
        label = Label(entry["label"])
        trace = CallTrace.from_names(names, universe, label, entry.get("experiment_id", 0))
        # malicious offsets are not persisted
        experiments.append(Experiment(trace, label, entry["seed"], entry["event_count"],
                                      np.empty(0, dtype=np.int64)))
    return Dataset(experiments, universe, Case.parse(doc["case_id"]))

