"""
Domain models: subject records, per-cell survival samples and the two-arm
stratified dataset.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, Iterator, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from stratah.exceptions import InvalidInput, MissingStratumArm


class Arm(IntEnum):
    """Treatment arm; group j in the estimator formulas."""
    CONTROL = 0
    TREATMENT = 1


class SubjectRecord(BaseModel):
    """One subject's observed follow-up: X = min(T, C) and the event flag."""

    model_config = ConfigDict(frozen=True)

    time: float = Field(..., ge=0.0, description="Observed time in months")
    event: bool = Field(..., description="True when the event was observed")
    arm: Arm
    stratum: str = Field(..., min_length=1)

    @field_validator("time")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("time must be finite")
        return value


@dataclass(frozen=True, eq=False)
class SurvivalSample:
    """Right-censored one-sample data, stored as parallel numpy arrays."""

    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        events = np.asarray(self.events, dtype=bool)
        if times.ndim != 1 or times.shape != events.shape:
            raise InvalidInput("times and events must be one-dimensional arrays of equal length")
        if times.size and (not np.all(np.isfinite(times)) or np.any(times < 0)):
            raise InvalidInput("times must be finite and non-negative")
        times.setflags(write=False)
        events.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events)

    @property
    def n(self) -> int:
        return int(self.times.size)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[float, bool]]) -> "SurvivalSample":
        pairs = list(pairs)
        if not pairs:
            return cls(np.empty(0), np.empty(0, dtype=bool))
        times, events = zip(*pairs)
        return cls(np.asarray(times, dtype=float), np.asarray(events, dtype=bool))


SampleLike = Union[SurvivalSample, Sequence[Tuple[float, bool]]]


def as_sample(sample: SampleLike) -> SurvivalSample:
    """Coerce a list of (time, event) pairs into a SurvivalSample."""
    if isinstance(sample, SurvivalSample):
        return sample
    return SurvivalSample.from_pairs(sample)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Two-arm stratified trial data in columnar form.

    Strata are indexed 1..K in sorted label order. ``arm_labels`` keeps the
    original labels from the input file, control first.
    """

    times: np.ndarray
    events: np.ndarray
    arms: np.ndarray
    strata: np.ndarray
    stratum_labels: Tuple[str, ...]
    arm_labels: Tuple[str, str] = ("0", "1")
    _cells: Dict[Tuple[int, str], SurvivalSample] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        sample = SurvivalSample(self.times, self.events)
        arms = np.asarray(self.arms, dtype=int)
        strata = np.asarray(self.strata, dtype=object)
        if arms.shape != sample.times.shape or strata.shape != sample.times.shape:
            raise InvalidInput("dataset columns must have equal length")
        if not set(np.unique(arms)).issubset({0, 1}):
            raise InvalidInput("arm codes must be 0 (control) or 1 (treatment)")
        object.__setattr__(self, "times", sample.times)
        object.__setattr__(self, "events", sample.events)
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "strata", strata)
        object.__setattr__(self, "stratum_labels", tuple(sorted(set(self.stratum_labels))))

        for stratum in self.stratum_labels:
            for arm in Arm:
                mask = (arms == arm) & (strata == stratum)
                if not mask.any():
                    raise MissingStratumArm("no subjects in cell", arm=int(arm), stratum=stratum)
                self._cells[(int(arm), stratum)] = SurvivalSample(sample.times[mask], sample.events[mask])

    @classmethod
    def from_records(cls, records: Iterable[SubjectRecord],
                     arm_labels: Tuple[str, str] = ("0", "1")) -> "Dataset":
        records = list(records)
        return cls(
            times=np.array([r.time for r in records], dtype=float),
            events=np.array([r.event for r in records], dtype=bool),
            arms=np.array([int(r.arm) for r in records], dtype=int),
            strata=np.array([r.stratum for r in records], dtype=object),
            stratum_labels=tuple({r.stratum for r in records}),
            arm_labels=arm_labels,
        )

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def K(self) -> int:
        return len(self.stratum_labels)

    def cell(self, arm: int, stratum: str) -> SurvivalSample:
        """Survival sample of one (arm, stratum) cell."""
        try:
            return self._cells[(int(arm), stratum)]
        except KeyError:
            raise MissingStratumArm("unknown cell", arm=int(arm), stratum=stratum) from None

    def arm_cells(self, arm: int) -> Dict[str, SurvivalSample]:
        """Per-stratum samples of one arm, in stratum order."""
        return {stratum: self.cell(arm, stratum) for stratum in self.stratum_labels}

    def cell_sizes(self) -> Dict[str, Dict[int, int]]:
        return {s: {int(a): self.cell(a, s).n for a in Arm} for s in self.stratum_labels}

    def records(self) -> Iterator[SubjectRecord]:
        """Rows in input order."""
        for time, event, arm, stratum in zip(self.times, self.events, self.arms, self.strata):
            yield SubjectRecord(time=float(time), event=bool(event), arm=Arm(int(arm)), stratum=str(stratum))
