from pydantic import BaseModel, ConfigDict, model_validator
from typing import Optional, List, Dict, Iterator
from enum import Enum

from prosodid.core.errors import FoldPlanError


class Tier(str, Enum):
    WORD = "word"
    SYLLABLE = "syllable"


# ============= Annotation Schemas =============

class UnitSegment(BaseModel):
    """A word or syllable with time bounds in seconds."""
    model_config = ConfigDict(frozen=True)

    start: float
    end: float
    tier: Tier
    text: Optional[str] = None
    recording_id: str = ""

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"invalid unit bounds [{self.start}, {self.end})")
        return self

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


# ============= Manifest Schemas =============

class RecordingEntry(BaseModel):
    """One recording of the corpus, as read from its WAV header."""
    recording_id: str
    speaker_id: str
    dialect: str
    wav_path: str
    annotation_path: Optional[str] = None
    sample_rate: int
    n_samples: int

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


class CorpusManifest(BaseModel):
    """
    Corpus inventory: recordings, speaker -> dialect map and per-dialect
    duration totals in minutes.
    """
    root: str
    recordings: List[RecordingEntry]
    speakers: Dict[str, str]
    totals: Dict[str, float]
    unreadable: Dict[str, str] = {}

    @property
    def dialects(self) -> List[str]:
        return sorted(set(self.speakers.values()))

    def class_index(self) -> Dict[str, int]:
        return {d: i for i, d in enumerate(self.dialects)}

    def speaker_durations(self) -> Dict[str, float]:
        """Total recorded seconds per speaker."""
        durations: Dict[str, float] = {s: 0.0 for s in self.speakers}
        for rec in self.recordings:
            durations[rec.speaker_id] += rec.duration
        return durations

    def recording(self, recording_id: str) -> RecordingEntry:
        for rec in self.recordings:
            if rec.recording_id == recording_id:
                return rec
        raise KeyError(recording_id)

    def speaker_counts(self) -> Dict[str, int]:
        counts = {d: 0 for d in self.dialects}
        for dialect in self.speakers.values():
            counts[dialect] += 1
        return counts


# ============= Fold Plan Schemas =============

class Split(BaseModel):
    """One train/test partition of a fold plan."""
    repeat: int
    fold: int
    train_speakers: List[str]
    test_speakers: List[str]


class FoldPlan(BaseModel):
    """
    Speaker groups per repeat: assignments[repeat][dialect] holds k lists of
    speaker ids. Group f of every dialect forms the test set of fold f.
    """
    model_config = ConfigDict(frozen=True)

    k: int
    repeats: int
    seed: int
    assignments: List[Dict[str, List[List[str]]]]
    spreads: List[Dict[str, float]] = []

    @property
    def speakers(self) -> List[str]:
        if not self.assignments:
            return []
        return sorted(s for groups in self.assignments[0].values() for g in groups for s in g)

    def split(self, repeat: int, fold: int) -> Split:
        groups = self.assignments[repeat]
        test = sorted(s for dialect_groups in groups.values() for s in dialect_groups[fold])
        train = sorted(
            s for dialect_groups in groups.values()
            for f, g in enumerate(dialect_groups) if f != fold for s in g
        )
        if set(test) & set(train):
            raise FoldPlanError(f"speakers in both train and test: {sorted(set(test) & set(train))}")
        return Split(repeat=repeat, fold=fold, train_speakers=train, test_speakers=test)

    def splits(self) -> Iterator[Split]:
        for repeat in range(self.repeats):
            for fold in range(self.k):
                yield self.split(repeat, fold)
