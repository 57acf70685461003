"""
Array-carrying value types. These are dataclasses rather than pydantic
models because they wrap numpy arrays.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from prosodid.core.errors import SignalError


@dataclass(frozen=True)
class AudioRecording:
    """Mono samples in [-1, 1] plus speaker/dialect metadata."""
    samples: np.ndarray
    sample_rate: int
    recording_id: str = ""
    speaker_id: str = ""
    dialect: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise SignalError(f"sample rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise SignalError(f"recording {self.recording_id!r} has no samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples: np.ndarray, sample_rate: Optional[int] = None) -> "AudioRecording":
        return replace(self, samples=samples, sample_rate=sample_rate or self.sample_rate)


@dataclass(frozen=True)
class ProsodicTrack:
    """Frame-aligned raw prosodic streams of one recording."""
    energy: np.ndarray
    f0: np.ndarray
    voiced: np.ndarray
    tilt: np.ndarray
    frame_times: np.ndarray
    recording_id: str = ""

    def __post_init__(self):
        n = len(self.frame_times)
        if not (len(self.energy) == len(self.f0) == len(self.voiced) == len(self.tilt) == n):
            raise SignalError("prosodic track streams have different lengths")

    def __len__(self) -> int:
        return len(self.frame_times)


@dataclass(frozen=True)
class NormalizedTrack:
    """
    Speaker-normalized streams: log energy, semitone F0 (NaN where
    unvoiced) and z-scored tilt.
    """
    energy: np.ndarray
    f0: np.ndarray
    tilt: np.ndarray
    frame_times: np.ndarray
    recording_id: str = ""
    speaker_id: str = ""

    def __len__(self) -> int:
        return len(self.frame_times)
