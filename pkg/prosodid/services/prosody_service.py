"""
Prosody Service - per-speaker normalization, unit descriptors, feature
combinations and context stacking
"""
import csv
import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from prosodid.core.errors import DescriptorError, SignalError, SpeakerStatsError
from prosodid.schemas.corpus import UnitSegment
from prosodid.schemas.signals import NormalizedTrack, ProsodicTrack

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10
DESCRIPTORS = ("mean", "std", "min", "max", "range")
VOICING_COLUMN = "F0_voicing_missing"


class Feature(str, Enum):
    EN = "EN"
    F0 = "F0"
    ST = "ST"
    DUR = "DUR"


FEATURE_ORDER = (Feature.EN, Feature.F0, Feature.ST, Feature.DUR)


@dataclass(frozen=True)
class FeatureCombo:
    """Non-empty subset of {EN, F0, ST, DUR}, kept in canonical order."""
    features: Tuple[Feature, ...]

    def __post_init__(self):
        if not self.features:
            raise DescriptorError("feature combination must not be empty")
        unique = {Feature(f) for f in self.features}
        object.__setattr__(self, "features", tuple(f for f in FEATURE_ORDER if f in unique))

    @classmethod
    def parse(cls, text: str) -> "FeatureCombo":
        """Accepts 'EN+F0+ST' or 'EN,F0,ST' (case-insensitive)."""
        parts = [p.strip().upper() for p in text.replace(",", "+").split("+") if p.strip()]
        try:
            return cls(tuple(Feature(p) for p in parts))
        except ValueError:
            raise DescriptorError(f"unknown feature in combination {text!r}")

    @classmethod
    def all(cls) -> List["FeatureCombo"]:
        """The 15 combinations: singles first, then pairs, triples and the full set."""
        return [
            cls(subset)
            for size in range(1, len(FEATURE_ORDER) + 1)
            for subset in itertools.combinations(FEATURE_ORDER, size)
        ]

    @property
    def name(self) -> str:
        return "+".join(f.value for f in self.features)

    def __contains__(self, feature) -> bool:
        return Feature(feature) in self.features

    def layout(self, voicing_flag: bool = False) -> Tuple[str, ...]:
        names: List[str] = []
        for feature in self.features:
            if feature is Feature.DUR:
                names.append("DUR")
                continue
            names.extend(f"{feature.value}_{d}" for d in DESCRIPTORS)
            if feature is Feature.F0 and voicing_flag:
                names.append(VOICING_COLUMN)
        return tuple(names)

    def __str__(self) -> str:
        return self.name


def parse_combos(value: Union[str, Sequence[str]]) -> List[FeatureCombo]:
    if isinstance(value, str):
        if value.strip().lower() == "all":
            return FeatureCombo.all()
        value = [value]
    return [FeatureCombo.parse(v) for v in value]


# ============= Speaker Normalization =============

@dataclass(frozen=True)
class SpeakerStats:
    speaker_id: str
    f0_median: float
    tilt_mean: float
    tilt_std: float


def speaker_stats(tracks: Iterable[ProsodicTrack], speaker_id: str = "") -> SpeakerStats:
    """
    Median voiced F0 pooled over all the speaker's recordings, and
    population mean/std of tilt over all frames. A zero tilt std is
    replaced by 1.0.
    """
    tracks = list(tracks)
    voiced_f0 = np.concatenate([t.f0[t.voiced.astype(bool)] for t in tracks]) if tracks else np.array([])
    voiced_f0 = voiced_f0[voiced_f0 > 0]
    if voiced_f0.size == 0:
        raise SpeakerStatsError(f"speaker {speaker_id!r} has no voiced frames")

    tilt = np.concatenate([t.tilt for t in tracks])
    tilt_mean = float(np.mean(tilt))
    tilt_std = float(np.std(tilt))
    if not tilt_std > 0:
        logger.warning(f"Speaker {speaker_id}: zero spectral tilt variance, using unit scale")
        tilt_std = 1.0

    return SpeakerStats(
        speaker_id=speaker_id,
        f0_median=float(np.median(voiced_f0)),
        tilt_mean=tilt_mean,
        tilt_std=tilt_std,
    )


def normalize_f0(f0, stats: SpeakerStats):
    """Semitones relative to the speaker median: 12 * log2(f0 / median)."""
    values = np.asarray(f0, dtype=np.float64)
    if np.any(~(values > 0)):
        raise SignalError("F0 normalization called on unvoiced (non-positive) values")
    result = 12.0 * np.log2(values / stats.f0_median)
    return float(result) if result.ndim == 0 else result


def normalize_tracks(track: ProsodicTrack, stats: SpeakerStats) -> NormalizedTrack:
    voiced = track.voiced.astype(bool) & (track.f0 > 0)
    f0 = np.full(len(track), np.nan)
    if voiced.any():
        f0[voiced] = normalize_f0(track.f0[voiced], stats)
    return NormalizedTrack(
        energy=np.log(track.energy + LOG_FLOOR),
        f0=f0,
        tilt=(track.tilt - stats.tilt_mean) / stats.tilt_std,
        frame_times=track.frame_times,
        recording_id=track.recording_id,
        speaker_id=stats.speaker_id,
    )


# ============= Unit Descriptors =============

@dataclass
class DescriptorVector:
    unit_ref: UnitSegment
    values: np.ndarray
    layout: Tuple[str, ...]
    dialect: str = ""
    voicing_missing: bool = False

    def __post_init__(self):
        if len(self.values) != len(self.layout):
            raise DescriptorError(f"{len(self.values)} values for a layout of {len(self.layout)}")

    @property
    def dim(self) -> int:
        return len(self.values)


def _stats(values: np.ndarray) -> List[float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    return [float(np.mean(values)), float(np.std(values)), lo, hi, hi - lo]


def unit_descriptors(
    track: NormalizedTrack,
    unit: UnitSegment,
    combo: FeatureCombo,
    dialect: str = "",
    voicing_flag: bool = False,
) -> DescriptorVector:
    """
    Mean, std, min, max and range of each frame feature over the frames
    whose centres lie in [start, end), plus log duration for DUR. F0 uses
    voiced frames only; a fully unvoiced unit gets zeros and is flagged.
    """
    mask = (track.frame_times >= unit.start) & (track.frame_times < unit.end)
    if not mask.any():
        raise DescriptorError(f"unit [{unit.start}, {unit.end}) of {track.recording_id!r} covers no frames")

    values: List[float] = []
    missing = False
    for feature in combo.features:
        if feature is Feature.EN:
            values.extend(_stats(track.energy[mask]))
        elif feature is Feature.ST:
            values.extend(_stats(track.tilt[mask]))
        elif feature is Feature.F0:
            f0 = track.f0[mask]
            f0 = f0[~np.isnan(f0)]
            if f0.size:
                values.extend(_stats(f0))
            else:
                missing = True
                values.extend([0.0] * len(DESCRIPTORS))
            if voicing_flag:
                values.append(1.0 if missing else 0.0)
        else:
            values.append(float(np.log(max(unit.end - unit.start, LOG_FLOOR))))

    return DescriptorVector(
        unit_ref=unit,
        values=np.asarray(values, dtype=np.float64),
        layout=combo.layout(voicing_flag),
        dialect=dialect,
        voicing_missing=missing,
    )


def recording_descriptors(
    track: NormalizedTrack,
    units: Sequence[UnitSegment],
    combo: FeatureCombo,
    dialect: str = "",
    voicing_flag: bool = False,
) -> List[DescriptorVector]:
    """Descriptors of every unit in order; units covering no frame are skipped."""
    vectors = []
    for unit in units:
        try:
            vectors.append(unit_descriptors(track, unit, combo, dialect, voicing_flag))
        except DescriptorError as e:
            logger.warning(f"Skipping unit: {e}")
    return vectors


# ============= Context Stacking =============

def context_layout(layout: Sequence[str], width: int = 2) -> Tuple[str, ...]:
    names = []
    for offset in range(-width, width + 1):
        tag = "t" if offset == 0 else f"t{offset:+d}"
        names.extend(f"{tag}:{name}" for name in layout)
    return tuple(names)


def stack_matrix(base: np.ndarray, width: int = 2) -> np.ndarray:
    """Row i becomes [x_{i-w}, ..., x_i, ..., x_{i+w}] with zero rows past the edges."""
    n, dim = base.shape
    padded = np.vstack([np.zeros((width, dim)), base, np.zeros((width, dim))])
    return np.hstack([padded[k: k + n] for k in range(2 * width + 1)])


def stack_context(vectors: Sequence[DescriptorVector], width: int = 2) -> List[DescriptorVector]:
    """
    Concatenate each vector with its `width` predecessors and successors in
    the same recording; positions past the edges are zero blocks.
    """
    if not vectors:
        return []
    stacked_values = stack_matrix(np.stack([v.values for v in vectors]), width)
    layout = context_layout(vectors[0].layout, width)
    stacked = []
    for i, v in enumerate(vectors):
        stacked.append(DescriptorVector(
            unit_ref=v.unit_ref,
            values=stacked_values[i],
            layout=layout,
            dialect=v.dialect,
            voicing_missing=v.voicing_missing,
        ))
    return stacked


# ============= Export =============

def descriptor_matrix(vectors: Sequence[DescriptorVector]) -> np.ndarray:
    if not vectors:
        return np.zeros((0, 0))
    return np.stack([v.values for v in vectors])


def write_descriptor_csv(vectors: Sequence[DescriptorVector], path: Union[str, Path]) -> int:
    """
    One row per unit: recording_id, unit index (within its recording),
    start, end, dialect, then the descriptor values. Returns the row count.
    """
    layout = vectors[0].layout if vectors else ()
    index: Dict[str, int] = {}
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["recording_id", "unit_index", "start", "end", "dialect", *layout])
        for v in vectors:
            rid = v.unit_ref.recording_id
            i = index.get(rid, 0)
            index[rid] = i + 1
            writer.writerow([
                rid, i, repr(v.unit_ref.start), repr(v.unit_ref.end), v.dialect,
                *(repr(float(x)) for x in v.values),
            ])
    return len(vectors)
