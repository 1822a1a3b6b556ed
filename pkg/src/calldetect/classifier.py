"""Linear SVM over feature vectors: split, train, predict, evaluate, persist.

Training minimizes ``0.5*|(w, b)|^2 + C * sum(hinge)`` on z-scored features
(the bias is folded in as a constant-1 column, so it is regularized too). The
solver is Pegasos-style stochastic subgradient descent: with
``lam = 1 / (C * n)`` the step at update ``t`` is ``1 / (lam * t)``, samples are
visited in a seeded random order each epoch, and the returned model is the
running average of all iterates. Positive class is COMPROMISED; a decision
value of exactly 0 maps to AUTHENTIC.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from calldetect.activity import FeatureVector
from calldetect.metrics import Label
from calldetect.simulator import Dataset

MODEL_FORMAT = "calldetect-model/1"


@dataclass(frozen=True)
class SvmHyperparams:
    regularization: float = 1.0
    epochs: int = 200
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.regularization <= 0:
            raise ValueError("regularization must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(eq=False)
class SvmModel:
    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_scales: np.ndarray
    hyperparams: SvmHyperparams
    ablate_activity: bool = False
    objective_history: list[float] = field(default_factory=list, repr=False)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feature_means) / self.feature_scales

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.weights.size:
            raise ValueError(f"feature dimension {x.shape[1]} != model dimension {self.weights.size}")
        return self.standardize(x) @ self.weights + self.bias


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # rows: true (authentic, compromised); cols: predicted
    n_train: int
    n_test: int
    case_id: str | None = None

    @property
    def tn(self) -> int:
        return int(self.confusion[0, 0])

    @property
    def fp(self) -> int:
        return int(self.confusion[0, 1])

    @property
    def fn(self) -> int:
        return int(self.confusion[1, 0])

    @property
    def tp(self) -> int:
        return int(self.confusion[1, 1])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(dataset: Dataset, train_fraction: float = 2 / 3, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified split; each label sends ``round(train_fraction * count)`` experiments to train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    train, test = [], []
    for label in (Label.AUTHENTIC, Label.COMPROMISED):
        group = dataset.by_label(label)
        if len(group) < 2:
            raise ValueError(f"need >= 2 {label.value} experiments to split, have {len(group)}")
        n_train = _round_half_up(train_fraction * len(group))
        if not 0 < n_train < len(group):
            raise ValueError(f"train_fraction={train_fraction} leaves an empty side for {label.value}")
        order = rng.permutation(len(group))
        train.extend(group[i] for i in sorted(order[:n_train]))
        test.extend(group[i] for i in sorted(order[n_train:]))
    return (Dataset(train, dataset.universe, dataset.case),
            Dataset(test, dataset.universe, dataset.case))


def _design(features: Sequence[FeatureVector], ablate_activity: bool) -> np.ndarray:
    dims = {len(f) for f in features}
    if len(dims) != 1:
        raise ValueError(f"feature vectors have mixed dimensions {sorted(dims)}")
    return np.vstack([f.as_array(ablate_activity) for f in features])


def _targets(features: Sequence[FeatureVector]) -> np.ndarray:
    if any(f.label is None for f in features):
        raise ValueError("training features must be labeled")
    return np.array([1.0 if f.label is Label.COMPROMISED else -1.0 for f in features])


def hinge_objective(w: np.ndarray, b: float, z: np.ndarray, y: np.ndarray, c: float) -> float:
    margins = y * (z @ w + b)
    return float(0.5 * (w @ w + b * b) + c * np.maximum(0.0, 1.0 - margins).sum())


def train_svm(features: Sequence[FeatureVector], hyperparams: SvmHyperparams = SvmHyperparams(),
              ablate_activity: bool = False) -> SvmModel:
    x = _design(features, ablate_activity)
    y = _targets(features)
    if len(set(y)) < 2:
        raise ValueError("training data must contain both labels")

    means = x.mean(axis=0)
    scales = x.std(axis=0)
    scales[scales == 0] = 1.0
    z = (x - means) / scales

    n, d = z.shape
    c = hyperparams.regularization
    lam = 1.0 / (c * n)
    batch = min(hyperparams.batch_size, n)
    rng = np.random.Generator(np.random.PCG64(hyperparams.seed))
    za = np.hstack([z, np.ones((n, 1))])

    w = np.zeros(d + 1)
    w_avg = np.zeros(d + 1)
    t = 0
    history = []
    for _ in range(hyperparams.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            zb, yb = za[idx], y[idx]
            active = yb * (zb @ w) < 1.0
            grad = lam * w - (yb[active, None] * zb[active]).sum(axis=0) / idx.size
            t += 1
            w = w - grad / (lam * t)
            w_avg += (w - w_avg) / t
        history.append(hinge_objective(w_avg[:-1], w_avg[-1], z, y, c))

    return SvmModel(w_avg[:-1].copy(), float(w_avg[-1]), means, scales, hyperparams, ablate_activity, history)


def predict(model: SvmModel, feature: FeatureVector) -> Label:
    value = model.decision_function(feature.as_array(model.ablate_activity))[0]
    return Label.COMPROMISED if value > 0 else Label.AUTHENTIC


def predict_many(model: SvmModel, features: Sequence[FeatureVector]) -> list[Label]:
    values = model.decision_function(_design(features, model.ablate_activity))
    return [Label.COMPROMISED if v > 0 else Label.AUTHENTIC for v in values]


def evaluate(model: SvmModel, test: Sequence[FeatureVector], n_train: int = 0,
             case_id: str | None = None) -> EvalReport:
    if not test:
        raise ValueError("empty test set")
    confusion = np.zeros((2, 2), dtype=np.int64)
    for feature, pred in zip(test, predict_many(model, test)):
        row = 1 if feature.label is Label.COMPROMISED else 0
        col = 1 if pred is Label.COMPROMISED else 0
        confusion[row, col] += 1
    return EvalReport(float(np.trace(confusion)) / len(test), confusion, n_train, len(test), case_id)


def save_model(path: str | Path, model: SvmModel, *, universe_names: Sequence[str],
               pipeline: dict, predictor: dict | None = None) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "feature_means": model.feature_means.tolist(),
        "feature_scales": model.feature_scales.tolist(),
        "hyperparams": asdict(model.hyperparams),
        "ablate_activity": model.ablate_activity,
        "universe": list(universe_names),
        "pipeline": pipeline,
        "predictor": predictor,
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> tuple[SvmModel, dict]:
    """Returns the model and the raw document (universe, pipeline, predictor)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    model = SvmModel(
        np.asarray(doc["weights"], dtype=float),
        float(doc["bias"]),
        np.asarray(doc["feature_means"], dtype=float),
        np.asarray(doc["feature_scales"], dtype=float),
        SvmHyperparams(**doc["hyperparams"]),
        bool(doc.get("ablate_activity", False)),
    )
    return model, doc
