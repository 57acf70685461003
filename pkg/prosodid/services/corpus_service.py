"""
Corpus Service - audio and annotation ingestion, manifest building and
speaker-disjoint fold planning
"""
import logging
import warnings
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.io import wavfile

from prosodid.core.errors import AnnotationError, AudioFormatError, CorpusError, FoldPlanError
from prosodid.schemas.corpus import CorpusManifest, FoldPlan, RecordingEntry, Tier, UnitSegment
from prosodid.schemas.signals import AudioRecording

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

METADATA_FILE = "speakers.tsv"
ANNOTATION_SUFFIX = ".tsv"
PAUSE_LABELS = {"<p>", "", "sil"}


# ============= Audio =============

def _read_wav(path: PathLike, mmap: bool = False) -> Tuple[int, np.ndarray]:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(str(path), mmap=mmap)
    except FileNotFoundError:
        raise AudioFormatError(f"audio file not found: {path}")
    except (ValueError, OSError, EOFError) as exc:
        raise AudioFormatError(f"unreadable WAV file {path}: {exc}")
    if data.dtype not in (np.uint8, np.int16):
        raise AudioFormatError(f"unsupported encoding {data.dtype} in {path}; expected 8/16-bit PCM")
    if data.shape[0] == 0:
        raise AudioFormatError(f"zero-length audio in {path}")
    return rate, data


def load_wav(
    path: PathLike,
    recording_id: Optional[str] = None,
    speaker_id: str = "",
    dialect: str = "",
) -> AudioRecording:
    """
    Read an 8/16-bit PCM WAV file as mono samples in [-1, 1].
    Multi-channel audio is averaged to mono.
    """
    rate, data = _read_wav(path)
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    else:
        samples = data.astype(np.float64) / 32768.0
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioRecording(
        samples=samples,
        sample_rate=int(rate),
        recording_id=recording_id if recording_id is not None else Path(path).stem,
        speaker_id=speaker_id,
        dialect=dialect,
    )


def save_wav(path: PathLike, rec: AudioRecording) -> None:
    """Write a recording as 16-bit PCM mono."""
    pcm = np.clip(np.round(rec.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), rec.sample_rate, pcm)


def wav_header_info(path: PathLike) -> Tuple[int, int]:
    """Sample rate and frame count without decoding the samples."""
    rate, data = _read_wav(path, mmap=True)
    return int(rate), int(data.shape[0])


# ============= Annotations =============

def parse_annotations(path: PathLike, tier: Union[Tier, str], recording_id: Optional[str] = None) -> List[UnitSegment]:
    """
    Parse a tab-separated annotation file and return the units of one tier,
    time-ordered, with pause labels removed.
    """
    tier = Tier(tier)
    rid = recording_id if recording_id is not None else Path(path).name.split(".")[0]
    units: List[UnitSegment] = []

    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise AnnotationError(f"cannot read annotation file {path}: {exc}")

    for line_no, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) == 3:
            fields.append("")
        if len(fields) != 4:
            raise AnnotationError(f"{path}:{line_no}: expected 4 tab-separated fields, got {len(fields)}")
        try:
            start, end = float(fields[0]), float(fields[1])
        except ValueError:
            raise AnnotationError(f"{path}:{line_no}: start/end are not numbers")
        if end <= start:
            raise AnnotationError(f"{path}:{line_no}: end {end} <= start {start}")
        if start < 0:
            raise AnnotationError(f"{path}:{line_no}: negative start time")
        try:
            line_tier = Tier(fields[2].strip())
        except ValueError:
            raise AnnotationError(f"{path}:{line_no}: unknown tier {fields[2]!r}")
        if line_tier != tier:
            continue
        units.append(UnitSegment(start=start, end=end, tier=tier, text=fields[3], recording_id=rid))

    units.sort(key=lambda u: u.start)
    for prev, cur in zip(units, units[1:]):
        if cur.start < prev.end:
            raise AnnotationError(
                f"{path}: overlapping {tier.value} units [{prev.start}, {prev.end}) and [{cur.start}, {cur.end})"
            )

    return [u for u in units if (u.text or "").strip() not in PAUSE_LABELS]


def write_annotations(path: PathLike, units: List[UnitSegment]) -> None:
    """Serialize units in the tab-separated annotation format."""
    with open(path, "w", encoding="utf-8") as f:
        for unit in units:
            f.write(f"{unit.start!r}\t{unit.end!r}\t{unit.tier.value}\t{unit.text or ''}\n")


# ============= Manifest =============

def _read_metadata(path: Path) -> List[Tuple[str, str, str]]:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f.read().splitlines(), start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = [x.strip() for x in line.split("\t")]
            if len(fields) != 3 or not all(fields):
                raise CorpusError(f"{path}:{line_no}: expected speaker_id<TAB>dialect<TAB>recording_id")
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def build_manifest(root: PathLike, strict: bool = True) -> CorpusManifest:
    """
    Scan a corpus directory (WAV files, `<id>.tsv` annotations and a
    speakers.tsv metadata file) and build its manifest.

    With strict=False, recordings whose WAV cannot be read are listed in
    `unreadable` instead of failing the whole manifest.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusError(f"corpus root is not a directory: {root}")

    wavs: Dict[str, Path] = {}
    for wav in sorted(root.rglob("*.wav")):
        if wav.stem in wavs:
            raise CorpusError(f"duplicate recording id {wav.stem!r}")
        wavs[wav.stem] = wav
    if not wavs:
        raise CorpusError(f"no recordings under {root}")

    metadata_path = root / METADATA_FILE
    if not metadata_path.exists():
        raise CorpusError(f"speaker metadata file missing: {metadata_path}")

    speakers: Dict[str, str] = {}
    recording_meta: Dict[str, Tuple[str, str]] = {}
    for speaker_id, dialect, recording_id in _read_metadata(metadata_path):
        known = speakers.setdefault(speaker_id, dialect)
        if known != dialect:
            raise CorpusError(f"speaker {speaker_id!r} listed under dialects {known!r} and {dialect!r}")
        if recording_id in recording_meta and recording_meta[recording_id][0] != speaker_id:
            raise CorpusError(f"recording {recording_id!r} assigned to more than one speaker")
        recording_meta[recording_id] = (speaker_id, dialect)

    missing_meta = sorted(set(wavs) - set(recording_meta))
    if missing_meta:
        raise CorpusError(f"recordings without speaker metadata: {missing_meta}")
    missing_audio = sorted(set(recording_meta) - set(wavs))
    if missing_audio:
        raise CorpusError(f"metadata lists recordings with no audio: {missing_audio}")

    recordings: List[RecordingEntry] = []
    unreadable: Dict[str, str] = {}
    for recording_id, wav in wavs.items():
        speaker_id, dialect = recording_meta[recording_id]
        try:
            rate, n_samples = wav_header_info(wav)
        except AudioFormatError as exc:
            if strict:
                raise
            logger.error(f"Skipping unreadable recording {recording_id}: {exc}")
            unreadable[recording_id] = f"{type(exc).__name__}: {exc}"
            continue
        annotation = wav.with_suffix(ANNOTATION_SUFFIX)
        recordings.append(RecordingEntry(
            recording_id=recording_id,
            speaker_id=speaker_id,
            dialect=dialect,
            wav_path=str(wav),
            annotation_path=str(annotation) if annotation.exists() else None,
            sample_rate=rate,
            n_samples=n_samples,
        ))

    totals: Dict[str, float] = {d: 0.0 for d in sorted(set(speakers.values()))}
    for rec in recordings:
        totals[rec.dialect] += rec.duration / 60.0

    manifest = CorpusManifest(
        root=str(root),
        recordings=recordings,
        speakers=dict(sorted(speakers.items())),
        totals=totals,
        unreadable=unreadable,
    )
    logger.info(
        f"Manifest built: {len(recordings)} recordings, {len(speakers)} speakers, "
        f"{len(totals)} dialects"
    )
    return manifest


def save_manifest(manifest: CorpusManifest, path: PathLike) -> None:
    Path(path).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")


def load_manifest(path: PathLike) -> CorpusManifest:
    return CorpusManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))


# ============= Fold Planning =============

def _assign_greedy(
    durations: List[Tuple[str, float]],
    k: int,
    rng: Optional[np.random.Generator],
) -> List[List[str]]:
    """
    Longest-first bin packing into k groups. Without rng each speaker goes
    to the lightest group (lowest index on ties). With rng a speaker goes to
    a random group among those whose load is within half its duration of
    the lightest one, which keeps groups balanced while varying membership.
    """
    groups: List[List[str]] = [[] for _ in range(k)]
    loads = np.zeros(k)
    if rng is None:
        order = sorted(durations, key=lambda item: (-item[1], item[0]))
    else:
        tie_break = rng.permutation(len(durations))
        order = [durations[i] for i in sorted(range(len(durations)), key=lambda i: (-durations[i][1], tie_break[i]))]

    for speaker, duration in order:
        if rng is None:
            target = int(np.argmin(loads))
        else:
            candidates = np.flatnonzero(loads <= loads.min() + 0.5 * duration + 1e-12)
            target = int(rng.choice(candidates))
        groups[target].append(speaker)
        loads[target] += duration
    return [sorted(g) for g in groups]


def group_spread(groups: List[List[str]], durations: Dict[str, float]) -> float:
    """max - min of group durations (same unit as `durations`)."""
    loads = [sum(durations[s] for s in g) for g in groups]
    return max(loads) - min(loads)


def split_folds(
    manifest: CorpusManifest,
    k: int = 4,
    repeats: int = 5,
    seed: int = 0,
    allow_deficit: bool = True,
) -> FoldPlan:
    """
    Split the speakers of every dialect into k groups of approximately equal
    duration. Repeat 0 is the plain greedy assignment; later repeats are
    reseeded from (seed, repeat).
    """
    if k < 1 or repeats < 1:
        raise FoldPlanError("k and repeats must be >= 1")

    durations = manifest.speaker_durations()
    by_dialect: Dict[str, List[Tuple[str, float]]] = {}
    for speaker, dialect in sorted(manifest.speakers.items()):
        by_dialect.setdefault(dialect, []).append((speaker, durations.get(speaker, 0.0)))

    for dialect, members in sorted(by_dialect.items()):
        if len(members) < k:
            message = f"dialect {dialect!r} has {len(members)} speakers for {k} folds; some groups stay empty"
            if not allow_deficit:
                raise FoldPlanError(message)
            logger.warning(message)

    assignments: List[Dict[str, List[List[str]]]] = []
    spreads: List[Dict[str, float]] = []
    for repeat in range(repeats):
        rng = None if repeat == 0 else np.random.default_rng([seed, repeat])
        groups = {d: _assign_greedy(members, k, rng) for d, members in sorted(by_dialect.items())}
        assignments.append(groups)
        spreads.append({d: group_spread(g, durations) / 60.0 for d, g in groups.items()})

    plan = FoldPlan(k=k, repeats=repeats, seed=seed, assignments=assignments, spreads=spreads)
    for split in plan.splits():
        assert not set(split.train_speakers) & set(split.test_speakers)
    return plan
