from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pytest
from scipy.io import wavfile

from prosodid.models import LabeledDataset
from prosodid.schemas.corpus import CorpusManifest, RecordingEntry


def pulse_train(f0: float, duration: float, sample_rate: int = 8000, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """Glottal-like pulse train through a one-pole low-pass, peak 0.5."""
    n = int(duration * sample_rate)
    phase = np.cumsum(np.full(n, f0 / sample_rate))
    x = np.zeros(n)
    x[1:][np.diff(np.floor(phase)) > 0] = 1.0
    y = np.zeros(n)
    for i in range(n):
        y[i] = x[i] + (0.9 * y[i - 1] if i else 0.0)
    y = 0.5 * y / np.max(np.abs(y))
    if noise:
        y = y + noise * np.random.default_rng(seed).normal(size=n)
    return y


def write_pcm(path: Path, samples: np.ndarray, sample_rate: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), sample_rate, np.round(np.clip(samples, -1, 1) * 32767).astype(np.int16))


@pytest.fixture
def make_corpus(tmp_path):
    """
    Factory for small on-disk corpora: {dialect: {speaker: [seconds, ...]}}.
    Each recording is a voiced pulse train with a two-word annotation.
    """

    def _make(layout: Dict[str, Dict[str, Sequence[float]]], sample_rate: int = 8000) -> Path:
        root = tmp_path / "corpus"
        rows: List[str] = []
        for d_index, (dialect, speakers) in enumerate(sorted(layout.items())):
            for s_index, (speaker, durations) in enumerate(sorted(speakers.items())):
                for r, seconds in enumerate(durations):
                    rid = f"{speaker}_r{r + 1:02d}"
                    f0 = 100.0 + 30.0 * d_index + 5.0 * s_index
                    write_pcm(root / dialect / f"{rid}.wav", pulse_train(f0, seconds, sample_rate), sample_rate)
                    half = round(seconds / 2, 3)
                    (root / dialect / f"{rid}.tsv").write_text(
                        f"0.05\t{half}\tword\tyksi\n{half}\t{round(seconds - 0.05, 3)}\tword\tkaksi\n",
                        encoding="utf-8",
                    )
                    rows.append(f"{speaker}\t{dialect}\t{rid}")
        (root / "speakers.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        return root

    return _make


def manifest_from_minutes(minutes: Dict[str, Dict[str, float]]) -> CorpusManifest:
    """In-memory manifest where every speaker has one recording of the given length."""
    recordings: List[RecordingEntry] = []
    speakers: Dict[str, str] = {}
    for dialect, per_speaker in minutes.items():
        for speaker, m in per_speaker.items():
            speakers[speaker] = dialect
            recordings.append(RecordingEntry(
                recording_id=f"{speaker}_r01", speaker_id=speaker, dialect=dialect,
                wav_path=f"/nonexistent/{speaker}_r01.wav", sample_rate=100, n_samples=int(round(m * 60 * 100)),
            ))
    totals = {d: float(sum(v.values())) for d, v in minutes.items()}
    return CorpusManifest(root="/nonexistent", recordings=recordings, speakers=speakers, totals=totals)


def gaussian_blobs(
    n_classes: int = 3,
    per_class: int = 30,
    dim: int = 4,
    spread: float = 0.3,
    seq_len: int = 10,
    seed: int = 0,
) -> Tuple[LabeledDataset, np.ndarray]:
    """Well-separated clusters cut into single-class sequences; returns (dataset, centres)."""
    rng = np.random.default_rng(seed)
    centres = rng.normal(0.0, 3.0, size=(n_classes, dim))
    sequences, labels = [], []
    for c in range(n_classes):
        points = centres[c] + spread * rng.normal(size=(per_class, dim))
        for a in range(0, per_class, seq_len):
            sequences.append(points[a:a + seq_len])
            labels.append(np.full(len(points[a:a + seq_len]), c))
    return LabeledDataset.from_sequences(sequences, labels, n_classes), centres


@pytest.fixture
def blobs():
    return gaussian_blobs()
