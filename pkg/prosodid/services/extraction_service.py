"""
Extraction Service - runs the per-recording front end (tracks, word and
syllable tiers), per-speaker normalization and full descriptor matrices,
and stores everything in the feature cache
"""
import logging
import os
from pathlib import Path
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from prosodid.core.config import settings
from prosodid.core.errors import CacheError, ProsodidError
from prosodid.db.feature_cache import DESCRIPTORS, TRACKS, FeatureCache
from prosodid.schemas.corpus import CorpusManifest, RecordingEntry, Tier, UnitSegment
from prosodid.schemas.experiment import ExperimentConfig
from prosodid.schemas.signals import ProsodicTrack
from prosodid.services import dsp_service, prosody_service, syllable_service
from prosodid.services.corpus_service import load_wav, parse_annotations
from prosodid.services.prosody_service import FeatureCombo

logger = logging.getLogger(__name__)

FULL_COMBO = FeatureCombo.all()[-1]


@dataclass
class RecordingFront:
    """Everything extracted from one recording before normalization."""
    track: ProsodicTrack
    words: List[UnitSegment]
    syllables: List[UnitSegment]


@dataclass
class ExtractionResult:
    recordings: int = 0
    cache_hits: int = 0
    computed: int = 0
    failed: Dict[str, str] = field(default_factory=dict)
    units: Dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failed


@dataclass
class TierFeatures:
    """Full-layout descriptor matrix of one recording for one tier."""
    recording_id: str
    speaker_id: str
    dialect: str
    starts: np.ndarray
    ends: np.ndarray
    matrix: np.ndarray
    layout: Tuple[str, ...]
    voicing_missing: np.ndarray

    def __len__(self) -> int:
        return len(self.starts)

    def select(self, combo: FeatureCombo, voicing_flag: bool = False) -> np.ndarray:
        """Columns of the combo's layout, in that layout's order."""
        columns = [self.layout.index(name) for name in combo.layout(voicing_flag)]
        return self.matrix[:, columns]


def resolve_workers(workers: Optional[int], n_jobs: int) -> int:
    """Requested worker count, else settings, else one per processor; capped by the job count."""
    n = workers or settings.DEFAULT_WORKERS or os.cpu_count() or 1
    return max(1, min(n, max(n_jobs, 1)))


def feature_cache(config: ExperimentConfig) -> FeatureCache:
    return FeatureCache(config.cache_dir, config.extraction_fingerprint())


# ============= Front End =============

def extract_recording(entry: RecordingEntry, config: ExperimentConfig) -> RecordingFront:
    """
    Load, pre-process and analyse one recording. Syllables are detected on
    the pre-processed signal, or read from the annotation file when
    descriptors.syllable_source is "annotated" and the file has a syllable
    tier. Either way, when the recording has word annotations, syllables
    are restricted to the annotated words.
    """
    rec = load_wav(entry.wav_path, entry.recording_id, entry.speaker_id, entry.dialect)
    analysed = dsp_service.preprocess(rec, config.frame, config.denoise)
    track = dsp_service.analyse(analysed, config.frame, config.pitch, config.tilt)

    words: List[UnitSegment] = []
    syllables: List[UnitSegment] = []
    if entry.annotation_path:
        words = parse_annotations(entry.annotation_path, Tier.WORD, entry.recording_id)
        if config.descriptors.syllable_source == "annotated":
            syllables = parse_annotations(entry.annotation_path, Tier.SYLLABLE, entry.recording_id)
    else:
        logger.warning(f"Recording {entry.recording_id} has no annotation file; word tier is empty")

    if syllables:
        logger.debug(f"Recording {entry.recording_id}: using {len(syllables)} annotated syllables")
    else:
        syllables = syllable_service.syllabify(analysed, config.oscillator)
    if words:
        syllables = syllable_service.restrict_to_units(syllables, words)
    return RecordingFront(track=track, words=words, syllables=syllables)


def _units_to_arrays(units: List[UnitSegment]) -> Tuple[np.ndarray, np.ndarray]:
    return (
        np.array([u.start for u in units], dtype=np.float64),
        np.array([u.end for u in units], dtype=np.float64),
    )


def _arrays_to_units(starts: np.ndarray, ends: np.ndarray, tier: Tier, recording_id: str) -> List[UnitSegment]:
    return [
        UnitSegment(start=float(s), end=float(e), tier=tier, recording_id=recording_id)
        for s, e in zip(starts, ends)
    ]


def save_front(cache: FeatureCache, entry: RecordingEntry, front: RecordingFront) -> None:
    word_starts, word_ends = _units_to_arrays(front.words)
    syl_starts, syl_ends = _units_to_arrays(front.syllables)
    t = front.track
    cache.write(TRACKS, entry.recording_id, {
        "energy": t.energy, "f0": t.f0, "voiced": t.voiced.astype(np.bool_),
        "tilt": t.tilt, "frame_times": t.frame_times,
        "word_starts": word_starts, "word_ends": word_ends,
        "syllable_starts": syl_starts, "syllable_ends": syl_ends,
    }, meta={"recording_id": entry.recording_id, "speaker_id": entry.speaker_id, "dialect": entry.dialect})


def load_front(cache: FeatureCache, recording_id: str) -> RecordingFront:
    data = cache.read(TRACKS, recording_id)
    track = ProsodicTrack(
        energy=data["energy"], f0=data["f0"], voiced=data["voiced"].astype(bool),
        tilt=data["tilt"], frame_times=data["frame_times"], recording_id=recording_id,
    )
    return RecordingFront(
        track=track,
        words=_arrays_to_units(data["word_starts"], data["word_ends"], Tier.WORD, recording_id),
        syllables=_arrays_to_units(data["syllable_starts"], data["syllable_ends"], Tier.SYLLABLE, recording_id),
    )


def _front_job(entry: RecordingEntry, config: ExperimentConfig) -> Tuple[str, Optional[str]]:
    cache = feature_cache(config)
    try:
        save_front(cache, entry, extract_recording(entry, config))
    except ProsodidError as exc:
        return entry.recording_id, f"{type(exc).__name__}: {exc}"
    except Exception as exc:
        logger.exception(f"Unexpected error while extracting {entry.recording_id}")
        return entry.recording_id, f"{type(exc).__name__}: {exc}"
    return entry.recording_id, None


# ============= Corpus Extraction =============

def extract_corpus(
    manifest: CorpusManifest,
    config: ExperimentConfig,
    workers: Optional[int] = None,
    progress: bool = False,
) -> ExtractionResult:
    """
    Extract every recording of the manifest into the feature cache. Cached
    recordings are not recomputed. Failures are recorded per recording and
    the run continues; speakers left without usable tracks fail as a whole.
    """
    cache = feature_cache(config)
    cache.write_config()
    result = ExtractionResult(recordings=len(manifest.recordings) + len(manifest.unreadable))
    result.failed.update(manifest.unreadable)

    cached = set(cache.entries(TRACKS))
    pending = [e for e in manifest.recordings if e.recording_id not in cached]
    result.cache_hits = len(manifest.recordings) - len(pending)
    if pending:
        n_jobs = resolve_workers(workers or config.workers, len(pending))
        logger.info(f"Extracting {len(pending)} recordings with {n_jobs} workers ({result.cache_hits} cached)")
        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(_front_job)(entry, config)
            for entry in tqdm(pending, desc="extract", disable=not progress)
        )
        for recording_id, error in outcomes:
            if error is None:
                result.computed += 1
            else:
                logger.error(f"Extraction failed for {recording_id}: {error}")
                result.failed[recording_id] = error
    else:
        logger.info(f"All {result.cache_hits} recordings found in cache")

    _build_descriptors(manifest, config, cache, result)
    return result


def _build_descriptors(
    manifest: CorpusManifest,
    config: ExperimentConfig,
    cache: FeatureCache,
    result: ExtractionResult,
) -> None:
    """Per-speaker normalization and full-layout descriptors for both tiers."""
    flag = config.descriptors.voicing_flag
    by_speaker: Dict[str, List[RecordingEntry]] = {}
    for entry in manifest.recordings:
        if entry.recording_id not in result.failed:
            by_speaker.setdefault(entry.speaker_id, []).append(entry)

    counts = {tier.value: 0 for tier in Tier}
    for speaker_id, entries in sorted(by_speaker.items()):
        if all(cache.exists(DESCRIPTORS, e.recording_id) for e in entries):
            for e in entries:
                data = cache.read(DESCRIPTORS, e.recording_id)
                for tier in Tier:
                    counts[tier.value] += len(data[f"{tier.value}_starts"])
            continue

        fronts = {e.recording_id: load_front(cache, e.recording_id) for e in entries}
        try:
            stats = prosody_service.speaker_stats([f.track for f in fronts.values()], speaker_id)
        except ProsodidError as exc:
            logger.error(f"Speaker {speaker_id}: {exc}")
            for e in entries:
                result.failed[e.recording_id] = f"{type(exc).__name__}: {exc}"
            continue

        for e in entries:
            front = fronts[e.recording_id]
            normalized = prosody_service.normalize_tracks(front.track, stats)
            arrays: Dict[str, np.ndarray] = {}
            for tier, units in ((Tier.WORD, front.words), (Tier.SYLLABLE, front.syllables)):
                vectors = prosody_service.recording_descriptors(normalized, units, FULL_COMBO, e.dialect, flag)
                starts, ends = _units_to_arrays([v.unit_ref for v in vectors])
                width = len(FULL_COMBO.layout(flag))
                arrays[f"{tier.value}_starts"] = starts
                arrays[f"{tier.value}_ends"] = ends
                arrays[f"{tier.value}_matrix"] = (
                    prosody_service.descriptor_matrix(vectors) if vectors else np.zeros((0, width))
                )
                arrays[f"{tier.value}_voicing_missing"] = np.array([v.voicing_missing for v in vectors], dtype=np.bool_)
                counts[tier.value] += len(vectors)
            cache.write(DESCRIPTORS, e.recording_id, arrays, meta={
                "recording_id": e.recording_id,
                "speaker_id": e.speaker_id,
                "dialect": e.dialect,
                "layout": list(FULL_COMBO.layout(flag)),
                "f0_median": stats.f0_median,
            })
    result.units = counts
    logger.info(f"Descriptors ready: {counts[Tier.WORD.value]} words, {counts[Tier.SYLLABLE.value]} syllables")


def load_tier_features(
    manifest: CorpusManifest,
    config: ExperimentConfig,
    tier: Tier,
) -> List[TierFeatures]:
    """
    Cached descriptor matrices of every recording for one tier, in manifest
    order. Recordings whose extraction failed are absent from the cache and
    are skipped with a warning; an empty result is an error.
    """
    cache = feature_cache(config)
    tier = Tier(tier)
    features: List[TierFeatures] = []
    for entry in manifest.recordings:
        if not cache.exists(DESCRIPTORS, entry.recording_id):
            logger.warning(f"No cached descriptors for {entry.recording_id}; skipped")
            continue
        data = cache.read(DESCRIPTORS, entry.recording_id)
        features.append(TierFeatures(
            recording_id=entry.recording_id,
            speaker_id=entry.speaker_id,
            dialect=entry.dialect,
            starts=data[f"{tier.value}_starts"],
            ends=data[f"{tier.value}_ends"],
            matrix=data[f"{tier.value}_matrix"],
            layout=tuple(data["meta"]["layout"]),
            voicing_missing=data[f"{tier.value}_voicing_missing"],
        ))
    if not features:
        raise CacheError(f"feature cache {cache.root} holds no descriptors; run extract first")
    return features


def export_descriptors(
    features: List[TierFeatures],
    combo: FeatureCombo,
    tier: Tier,
    path,
    voicing_flag: bool = False,
) -> int:
    """Write one tier's descriptors for a combo as CSV."""
    vectors = []
    for rec in features:
        values = rec.select(combo, voicing_flag)
        for i, (s, e) in enumerate(zip(rec.starts, rec.ends)):
            vectors.append(prosody_service.DescriptorVector(
                unit_ref=UnitSegment(start=float(s), end=float(e), tier=Tier(tier), recording_id=rec.recording_id),
                values=values[i],
                layout=combo.layout(voicing_flag),
                dialect=rec.dialect,
                voicing_missing=bool(rec.voicing_missing[i]),
            ))
    return prosody_service.write_descriptor_csv(vectors, path)


def export_tracks(manifest: CorpusManifest, config: ExperimentConfig, out_dir: Union[str, Path]) -> int:
    """Cached tracks as one CSV per recording; returns the number written."""
    cache = feature_cache(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for entry in manifest.recordings:
        if not cache.exists(TRACKS, entry.recording_id):
            continue
        track = load_front(cache, entry.recording_id).track
        dsp_service.write_track_csv(track, out_dir / f"{entry.recording_id}.tracks.csv")
        written += 1
    return written
