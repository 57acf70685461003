"""
Synthetic Service - pseudo-speech corpus with controllable per-dialect
prosody: pulse-train source, two-formant filter, syllable amplitude
modulation, word-level F0 contours and stressed-syllable tilt
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy import signal

from prosodid.core.errors import ConfigError
from prosodid.schemas.corpus import Tier, UnitSegment
from prosodid.schemas.experiment import DialectParams, SynthConfig
from prosodid.schemas.signals import AudioRecording
from prosodid.services.corpus_service import METADATA_FILE, save_wav, write_annotations

logger = logging.getLogger(__name__)

FORMANTS = ((500.0, 80.0), (1500.0, 120.0))
PAUSE_RANGE = (0.15, 0.35)
BURST_SEC = 0.02
PEAK = 0.9


def _resonator(freq: float, bandwidth: float, sample_rate: int) -> Tuple[np.ndarray, np.ndarray]:
    r = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2.0 * np.pi * freq / sample_rate
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return np.array([1.0 - r]), a


def _speaker_params(base: DialectParams, jitter: float, rng: np.random.Generator) -> DialectParams:
    """Per-speaker draw around the dialect row (log-normal scale factors)."""
    def scale():
        return float(np.exp(rng.normal(0.0, jitter)))

    return base.model_copy(update={
        "f0_base": base.f0_base * scale(),
        "f0_range": base.f0_range * scale(),
        "energy_depth": float(np.clip(base.energy_depth * scale(), 0.0, 1.0)),
        "syllable_rate": base.syllable_rate * scale(),
    })


def _plan_recording(p: DialectParams, n_words: int, unit_jitter: float, rng: np.random.Generator):
    """Word and syllable time spans: (words, syllables, total duration)."""
    t = float(rng.uniform(*PAUSE_RANGE))
    words: List[Tuple[float, float]] = []
    syllables: List[Tuple[float, float, bool]] = []
    for _ in range(n_words):
        start = t
        for k in range(int(rng.integers(1, 4))):
            dur = (1.0 / p.syllable_rate) * (1.0 + unit_jitter * rng.uniform(-1.0, 1.0))
            syllables.append((t, t + dur, k == 0))
            t += dur
        words.append((start, t))
        t += float(rng.uniform(*PAUSE_RANGE))
    return words, syllables, t


def synthesize_recording(
    p: DialectParams,
    config: SynthConfig,
    rng: np.random.Generator,
    recording_id: str = "",
) -> Tuple[AudioRecording, List[UnitSegment], List[UnitSegment]]:
    """One pseudo-speech recording with its word and syllable tiers."""
    sr = config.sample_rate
    words, syllables, total = _plan_recording(p, config.words_per_recording, config.unit_jitter, rng)
    n = int(np.ceil(total * sr))
    times = np.arange(n) / sr

    # F0: rise-fall over each word spanning f0_range semitones
    f0 = np.full(n, p.f0_base)
    amp = np.zeros(n)
    tilt = np.zeros(n)
    burst = np.zeros(n, dtype=bool)
    for w_start, w_end in words:
        span = (times >= w_start) & (times < w_end)
        u = (times[span] - w_start) / (w_end - w_start)
        direction = 1.0 if rng.random() < 0.5 else -1.0
        f0[span] = p.f0_base * 2.0 ** (direction * p.f0_range * (np.sin(np.pi * u) - 0.5) / 12.0)
    for s_start, s_end, stressed in syllables:
        span = (times >= s_start) & (times < s_end)
        u = (times[span] - s_start) / (s_end - s_start)
        peak = 1.0 if stressed else 1.0 - 0.5 * p.energy_depth
        amp[span] = peak * ((1.0 - p.energy_depth) + p.energy_depth * np.sin(np.pi * u) ** 2)
        if stressed:
            tilt[span] = p.tilt_offset
        burst[(times >= s_start) & (times < s_start + BURST_SEC)] = True

    phase = np.cumsum(f0 / sr)
    pulses = np.zeros(n)
    pulses[1:][np.diff(np.floor(phase)) > 0] = 1.0
    voiced = pulses * (amp > 0) * ~burst
    for freq, bw in FORMANTS:
        b, a = _resonator(freq, bw, sr)
        voiced = signal.lfilter(b, a, voiced)
    source = voiced + 0.3 * burst * amp * rng.normal(0.0, 1.0, n)

    shaped = source * amp
    shaped[1:] -= tilt[1:] * shaped[:-1]
    shaped /= max(np.max(np.abs(shaped)), 1e-12)
    samples = PEAK * shaped + config.noise_level * rng.normal(0.0, 1.0, n)
    samples = np.clip(samples, -1.0, 1.0)

    rec = AudioRecording(samples=samples, sample_rate=sr, recording_id=recording_id)
    word_units = [
        UnitSegment(start=s, end=e, tier=Tier.WORD, text=f"w{i}", recording_id=recording_id)
        for i, (s, e) in enumerate(words)
    ]
    syllable_units = [
        UnitSegment(start=s, end=e, tier=Tier.SYLLABLE, text=f"s{i}", recording_id=recording_id)
        for i, (s, e, _) in enumerate(syllables)
    ]
    return rec, word_units, syllable_units


def _with_pauses(words: Sequence[UnitSegment], recording_id: str) -> List[UnitSegment]:
    """Word tier with '<p>' entries filling the gaps between words."""
    out: List[UnitSegment] = []
    prev_end = 0.0
    for w in words:
        if w.start > prev_end:
            out.append(UnitSegment(start=prev_end, end=w.start, tier=Tier.WORD, text="<p>", recording_id=recording_id))
        out.append(w)
        prev_end = w.end
    return out


def validate_dialects(dialects: Sequence) -> List[DialectParams]:
    try:
        rows = [d if isinstance(d, DialectParams) else DialectParams.model_validate(d) for d in dialects]
    except ValidationError as exc:
        raise ConfigError(f"invalid dialect parameter row: {exc}")
    if len(rows) < 2:
        raise ConfigError(f"need at least 2 dialect rows, got {len(rows)}")
    names = [d.name for d in rows]
    if len(set(names)) != len(names) or not all(n and "\t" not in n for n in names):
        raise ConfigError(f"dialect names must be unique and non-empty: {names}")
    return rows


def generate_synthetic_corpus(
    out_dir: Union[str, Path],
    config: Optional[SynthConfig] = None,
    seed: int = 0,
) -> Path:
    """
    Write `<dialect>/<speaker>_rNN.wav` with matching `.tsv` annotations
    (word tier with pauses, syllable tier) and speakers.tsv. The same seed
    gives a byte-identical corpus.
    """
    config = config or SynthConfig()
    dialects = validate_dialects(config.dialects)
    if config.n_speakers < 1 or config.n_recordings < 1 or config.words_per_recording < 1:
        raise ConfigError("n_speakers, n_recordings and words_per_recording must be >= 1")

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    metadata: List[str] = []
    for d_index, dialect in enumerate(dialects):
        (root / dialect.name).mkdir(exist_ok=True)
        for s in range(config.n_speakers):
            speaker_id = f"{dialect.name}_s{s + 1:02d}"
            rng = np.random.default_rng([seed, d_index, s])
            params = _speaker_params(dialect, config.speaker_jitter, rng)
            for r in range(config.n_recordings):
                recording_id = f"{speaker_id}_r{r + 1:02d}"
                rec, words, syllables = synthesize_recording(params, config, rng, recording_id)
                save_wav(root / dialect.name / f"{recording_id}.wav", rec)
                write_annotations(root / dialect.name / f"{recording_id}.tsv", _with_pauses(words, recording_id) + syllables)
                metadata.append(f"{speaker_id}\t{dialect.name}\t{recording_id}")

    (root / METADATA_FILE).write_text(
        "# speaker_id\tdialect\trecording_id\n" + "\n".join(metadata) + "\n", encoding="utf-8"
    )
    (root / "dialects.json").write_text(
        json.dumps({"seed": seed, "config": config.model_dump()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logger.info(
        f"Synthetic corpus written to {root}: {len(dialects)} dialects x {config.n_speakers} speakers "
        f"x {config.n_recordings} recordings"
    )
    return root
