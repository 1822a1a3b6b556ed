"""Compromised-device detection from system/library call traces."""

from calldetect.metrics import (
    CallTrace,
    CallUniverse,
    IncomparableTracesError,
    HammingUndefinedError,
    Label,
    call_count_vector,
    euclidean_distance,
    hamming_distance,
    length_distance,
    set_distance,
)
from calldetect.simulator import Case, Dataset, DeviceModel, Experiment, case_templates, generate_case_dataset
from calldetect.activity import FeatureVector, PipelineConfig, extract_features, reduce_signal
from calldetect.classifier import SvmHyperparams, SvmModel, evaluate, split_dataset, train_svm

__all__ = [
    "CallTrace",
    "CallUniverse",
    "Case",
    "Dataset",
    "DeviceModel",
    "Experiment",
    "FeatureVector",
    "HammingUndefinedError",
    "IncomparableTracesError",
    "Label",
    "PipelineConfig",
    "SvmHyperparams",
    "SvmModel",
    "call_count_vector",
    "case_templates",
    "euclidean_distance",
    "evaluate",
    "extract_features",
    "generate_case_dataset",
    "hamming_distance",
    "length_distance",
    "reduce_signal",
    "set_distance",
    "split_dataset",
    "train_svm",
]
