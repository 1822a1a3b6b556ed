"""Activity-signal pipeline.

trace -> bucketed (context, target) rows -> per-row misprediction bits ->
sum-convolution / max-pool cascade -> one integer per trace. Combined with
per-call-type totals and frequencies this gives the classifier's feature vector.
"""
from __future__ import annotations

import abc
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from calldetect.metrics import CallTrace, CallUniverse, Label, call_count_vector


class InsufficientDataError(ValueError):
    """Input is shorter than the configured bucket or window."""


@dataclass(frozen=True)
class PipelineConfig:
    bucket_size: int = 32
    window_size: int = 100

    def __post_init__(self):
        if self.bucket_size < 2:
            raise ValueError("bucket_size must be >= 2")
        # a window of 1 leaves the cascade length unchanged and never terminates
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")


def bucket(trace: CallTrace, config: PipelineConfig) -> np.ndarray:
    """All ``len(trace) - bucket_size + 1`` sliding windows, shape ``(rows, bucket_size)``.

    Column ``-1`` is the target call, the rest are its context.
    """
    if len(trace) < config.bucket_size:
        raise InsufficientDataError(
            f"trace of length {len(trace)} is shorter than bucket_size={config.bucket_size}")
    return sliding_window_view(trace.calls, config.bucket_size)


def _context_keys(contexts: np.ndarray) -> np.ndarray:
    contexts = np.ascontiguousarray(contexts, dtype=np.int32)
    return contexts.view(np.dtype((np.void, contexts.dtype.itemsize * contexts.shape[1]))).ravel()


class NextCallPredictor(abc.ABC):
    """Maps a context of ``bucket_size - 1`` call ids to a predicted next call id."""

    @abc.abstractmethod
    def predict(self, contexts: np.ndarray) -> np.ndarray:
        """Vectorized prediction for a ``(rows, context_len)`` array."""

    def predict_one(self, context) -> int:
        return int(self.predict(np.asarray(context, dtype=np.int32)[None, :])[0])


class ContextTablePredictor(NextCallPredictor):
    """Majority next-call lookup keyed on the full context.

    Unseen contexts fall back to the globally most frequent target. Ties go to
    the lowest call id in both cases.
    """

    def __init__(self, contexts: np.ndarray, predictions: np.ndarray, fallback: int):
        contexts = np.asarray(contexts, dtype=np.int32)
        self.context_len = contexts.shape[1]
        keys = _context_keys(contexts)
        order = np.argsort(keys, kind="stable")
        self._keys = keys[order]
        self._contexts = contexts[order]
        self._predictions = np.asarray(predictions, dtype=np.int32)[order]
        self.fallback = int(fallback)

    @classmethod
    def fit(cls, rows: np.ndarray, n_types: int) -> "ContextTablePredictor":
        contexts, targets = rows[:, :-1], rows[:, -1].astype(np.int64)
        keys, first, inverse = np.unique(_context_keys(contexts), return_index=True, return_inverse=True)
        counts = np.zeros((keys.size, n_types), dtype=np.int64)
        np.add.at(counts, (inverse.ravel(), targets), 1)
        # argmax returns the first maximum, i.e. the lowest id on ties
        predictions = counts.argmax(axis=1)
        fallback = int(np.bincount(targets, minlength=n_types).argmax())
        return cls(np.asarray(contexts)[first], predictions, fallback)

    def predict(self, contexts: np.ndarray) -> np.ndarray:
        contexts = np.asarray(contexts)
        if contexts.ndim != 2 or contexts.shape[1] != self.context_len:
            raise ValueError(f"expected contexts of width {self.context_len}, got shape {contexts.shape}")
        out = np.full(contexts.shape[0], self.fallback, dtype=np.int32)
        if self._keys.size == 0 or contexts.shape[0] == 0:
            return out
        query = _context_keys(contexts)
        idx = np.searchsorted(self._keys, query)
        idx_clipped = np.minimum(idx, self._keys.size - 1)
        hit = (idx < self._keys.size) & (self._keys[idx_clipped] == query)
        out[hit] = self._predictions[idx_clipped[hit]]
        return out

    def __len__(self) -> int:
        return int(self._keys.size)

    def to_dict(self) -> dict:
        return {
            "kind": "context_table",
            "context_len": self.context_len,
            "contexts": self._contexts.tolist(),
            "predictions": self._predictions.tolist(),
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ContextTablePredictor":
        contexts = np.asarray(doc["contexts"], dtype=np.int32).reshape(-1, doc["context_len"])
        return cls(contexts, np.asarray(doc["predictions"], dtype=np.int32), doc["fallback"])


def train_predictor(training_trace: CallTrace, config: PipelineConfig) -> ContextTablePredictor:
    return ContextTablePredictor.fit(bucket(training_trace, config), len(training_trace.universe))


def prediction_signal(model: NextCallPredictor, rows: np.ndarray) -> np.ndarray:
    """0 where the target was predicted correctly, 1 where the prediction failed."""
    rows = np.asarray(rows)
    if rows.shape[0] == 0:
        raise ValueError("no bucketed rows")
    return (model.predict(rows[:, :-1]) != rows[:, -1]).astype(np.uint8)


def convolve_sum(signal, window: int) -> np.ndarray:
    """Stride-1 sliding sum, ``len(signal) - window + 1`` outputs."""
    x = np.asarray(signal, dtype=np.int64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if x.size < window:
        raise InsufficientDataError(f"signal of length {x.size} shorter than window {window}")
    csum = np.concatenate(([0], np.cumsum(x)))
    return csum[window:] - csum[:-window]


def max_pool(signal, window: int) -> np.ndarray:
    """Non-overlapping max pooling; a trailing partial window is pooled as-is."""
    x = np.asarray(signal, dtype=np.int64)
    if x.size == 0:
        raise ValueError("empty signal")
    if window < 1:
        raise ValueError("window must be >= 1")
    return np.maximum.reduceat(x, np.arange(0, x.size, window))


def reduce_signal(signal, config: PipelineConfig) -> int:
    """Collapse a prediction signal to one integer via the conv/max-pool cascade."""
    current = np.asarray(signal, dtype=np.int64)
    w = config.window_size
    while current.size > w:
        current = max_pool(convolve_sum(current, w), w)
    return int(current.sum())


@dataclass(frozen=True, eq=False)
class FeatureVector:
    totals: np.ndarray
    frequencies: np.ndarray
    activity_value: int
    label: Label | None = None

    def as_array(self, ablate_activity: bool = False) -> np.ndarray:
        activity = 0.0 if ablate_activity else float(self.activity_value)
        return np.concatenate([self.totals.astype(float), self.frequencies, [activity]])

    def __len__(self) -> int:
        return 2 * self.totals.size + 1


def extract_features(trace: CallTrace, model: NextCallPredictor, config: PipelineConfig,
                     strict: bool = True) -> FeatureVector:
    """Totals, relative frequencies and activity value for one trace.

    With ``strict=False`` a trace too short to bucket (e.g. a zero-event
    experiment) gets activity value 0 instead of raising.
    """
    totals = call_count_vector(trace)
    frequencies = totals / max(1, len(trace))
    if not strict and len(trace) < config.bucket_size:
        activity = 0
    else:
        activity = reduce_signal(prediction_signal(model, bucket(trace, config)), config)
    label = None if trace.label is Label.UNLABELED else trace.label
    return FeatureVector(totals, frequencies, activity, label)


def feature_header(universe: CallUniverse) -> list[str]:
    return ([f"call_total_{n}" for n in universe.names]
            + [f"call_freq_{n}" for n in universe.names]
            + ["activity_value", "label"])


def write_feature_csv(path: str | Path, features: Iterable[FeatureVector], universe: CallUniverse) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(feature_header(universe))
        for fv in features:
            writer.writerow([*map(int, fv.totals), *(repr(float(f)) for f in fv.frequencies),
                             fv.activity_value, fv.label.value if fv.label else ""])


def read_feature_csv(path: str | Path) -> tuple[CallUniverse, list[FeatureVector]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k = (len(header) - 2) // 2
        universe = CallUniverse(h.removeprefix("call_total_") for h in header[:k])
        out = []
        for row in reader:
            totals = np.array([int(v) for v in row[:k]], dtype=np.int64)
            freqs = np.array([float(v) for v in row[k:2 * k]])
            out.append(FeatureVector(totals, freqs, int(row[2 * k]), Label(row[2 * k + 1]) if row[2 * k + 1] else None))
    return universe, out
