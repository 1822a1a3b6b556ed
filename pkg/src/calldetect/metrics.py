"""Call-list difference measures: set, length, euclidean and hamming distance.

Traces are sequences of interned call ids over a shared :class:`CallUniverse`.
All functions here are pure.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class IncomparableTracesError(ValueError):
    """Raised when two traces are defined over different call universes."""


class HammingUndefinedError(ValueError):
    """Raised when hamming distance is requested for traces of unequal length."""


class Label(str, enum.Enum):
    AUTHENTIC = "authentic"
    COMPROMISED = "compromised"
    UNLABELED = "unlabeled"


class CallUniverse:
    """Bijective name <-> id interning table; ids assigned in first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self.names: list[str] = []
        self.index: dict[str, int] = {}
        for name in names:
            self.intern(name)

    @classmethod
    def from_sequences(cls, sequences: Iterable[Iterable[str]]) -> "CallUniverse":
        universe = cls()
        for seq in sequences:
            for name in seq:
                universe.intern(name)
        return universe

    def intern(self, name: str) -> int:
        if name not in self.index:
            self.index[name] = len(self.names)
            self.names.append(name)
        return self.index[name]

    def encode(self, names: Iterable[str]) -> np.ndarray:
        """Map names to ids. Raises KeyError on a name outside the universe."""
        return np.fromiter((self.index[n] for n in names), dtype=np.int32)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.names[i] for i in ids]

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: object) -> bool:
        return name in self.index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CallUniverse):
            return NotImplemented
        return self.names == other.names

    def __hash__(self) -> int:
        return hash(tuple(self.names))

    def __repr__(self) -> str:
        return f"CallUniverse({self.names!r})"


@dataclass(frozen=True, eq=False)
class CallTrace:
    calls: np.ndarray
    universe: CallUniverse
    label: Label = Label.UNLABELED
    experiment_id: int = 0

    def __post_init__(self):
        calls = np.asarray(self.calls, dtype=np.int32)
        if calls.ndim != 1:
            raise ValueError("calls must be one-dimensional")
        if calls.size and (calls.min() < 0 or calls.max() >= len(self.universe)):
            raise ValueError("call id outside universe")
        calls.setflags(write=False)
        object.__setattr__(self, "calls", calls)

    @classmethod
    def from_names(cls, names: Sequence[str], universe: CallUniverse | None = None,
                   label: Label = Label.UNLABELED, experiment_id: int = 0) -> "CallTrace":
        if universe is None:
            universe = CallUniverse(names)
        return cls(universe.encode(names), universe, label, experiment_id)

    def names(self) -> list[str]:
        return self.universe.decode(self.calls)

    def __len__(self) -> int:
        return int(self.calls.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CallTrace):
            return NotImplemented
        return (self.universe == other.universe and self.label == other.label
                and self.experiment_id == other.experiment_id
                and np.array_equal(self.calls, other.calls))

    __hash__ = None  # type: ignore[assignment]


def _check_universe(a: CallTrace, b: CallTrace) -> None:
    if a.universe is not b.universe and a.universe != b.universe:
        raise IncomparableTracesError(
            f"traces use different call universes: {a.universe.names} vs {b.universe.names}")


def call_count_vector(trace: CallTrace) -> np.ndarray:
    """Per-call-type occurrence counts, length K."""
    return np.bincount(trace.calls, minlength=len(trace.universe)).astype(np.int64)


def set_distance(a: CallTrace, b: CallTrace) -> int:
    """Number of distinct call types present in ``a`` but absent from ``b``.

    Not symmetric.
    """
    _check_universe(a, b)
    present_a = call_count_vector(a) > 0
    present_b = call_count_vector(b) > 0
    return int(np.count_nonzero(present_a & ~present_b))


def length_distance(a: CallTrace, b: CallTrace) -> int:
    _check_universe(a, b)
    return abs(len(a) - len(b))


def euclidean_distance(a: CallTrace, b: CallTrace) -> float:
    _check_universe(a, b)
    diff = call_count_vector(a) - call_count_vector(b)
    return float(np.sqrt(np.dot(diff, diff)))


def hamming_distance(a: CallTrace, b: CallTrace) -> int:
    """Positions at which two equal-length traces differ.

    Unequal lengths raise :class:`HammingUndefinedError`; compare
    :func:`length_distance` first.
    """
    _check_universe(a, b)
    if len(a) != len(b):
        raise HammingUndefinedError(
            f"hamming distance undefined for lengths {len(a)} and {len(b)}")
    return int(np.count_nonzero(a.calls != b.calls))


@dataclass(frozen=True)
class MetricProfile:
    """All four distances between a benign and a malicious call list."""

    sd_benign_malicious: int
    sd_malicious_benign: int
    ld: int
    ed: float
    hd: int | None = field(default=None)


def metric_profile(benign: CallTrace, malicious: CallTrace) -> MetricProfile:
    ld = length_distance(benign, malicious)
    return MetricProfile(
        sd_benign_malicious=set_distance(benign, malicious),
        sd_malicious_benign=set_distance(malicious, benign),
        ld=ld,
        ed=euclidean_distance(benign, malicious),
        hd=hamming_distance(benign, malicious) if ld == 0 else None,
    )
