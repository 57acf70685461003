from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Literal, Optional, List, Union
import json

from prosodid.schemas.corpus import Tier


class StrictModel(BaseModel):
    """Base for configuration models: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")


# ============= Signal Analysis Schemas =============

class FrameSpec(StrictModel):
    """Analysis framing: 25 ms window, 5 ms hop at 8 kHz by default."""
    window_len: float = 0.025
    hop: float = 0.005
    sample_rate: int = 8000

    @model_validator(mode="after")
    def _check(self):
        if not 0 < self.hop <= self.window_len:
            raise ValueError("frame hop must satisfy 0 < hop <= window_len")
        if self.window_samples < 2:
            raise ValueError("analysis window must span at least 2 samples")
        return self

    @property
    def window_samples(self) -> int:
        return int(round(self.window_len * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return max(1, int(round(self.hop * self.sample_rate)))


class DenoiseConfig(StrictModel):
    enabled: bool = True
    over_subtraction: float = 2.0
    spectral_floor: float = 0.02
    noise_quantile: float = 0.1
    smoothing_frames: int = 5
    min_duration: float = 1.0


class PitchConfig(StrictModel):
    f0_min: float = 60.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.3
    octave_cost: float = 0.35
    voicing_transition_cost: float = 0.2
    lag_weight: float = 0.3
    n_candidates: int = 5


class TiltConfig(StrictModel):
    n_mels: int = 26
    n_fft: int = 256


class OscillatorConfig(StrictModel):
    """Damped harmonic oscillator driven by the amplitude envelope."""
    center_freq: float = Field(default=5.0, gt=0)
    q_factor: float = Field(default=0.5, gt=0)
    envelope_rate: float = 1000.0
    envelope_cutoff: float = 30.0
    min_duration: float = 0.05
    min_prominence: float = 0.05


class DescriptorConfig(StrictModel):
    voicing_flag: bool = False
    # "annotated" takes the syllable tier from the annotation file when it has one
    syllable_source: Literal["detected", "annotated"] = "detected"


# ============= Classifier Hyperparameters =============

class KNNConfig(StrictModel):
    k: int = 10


class SVMConfig(StrictModel):
    c: float = 100.0
    sigma: float = 12.0790
    tol: float = 1e-3
    max_iter: int = 200000


class ForestConfig(StrictModel):
    n_trees: int = 50
    min_leaf: int = 2
    max_depth: Optional[int] = None


class CRFConfig(StrictModel):
    l2: float = 1.0
    max_iter: int = 100
    history: int = 10
    gtol: float = 1e-5


class LSTMParams(StrictModel):
    hidden: int = 128
    delay: int = Field(default=0, ge=0, le=10)
    batch: int = 128
    epochs: int = 200
    lr: float = 0.1
    clip: float = 5.0
    init_scale: float = 0.08
    forget_bias: float = 1.0


class ClassifierConfig(StrictModel):
    knn: KNNConfig = KNNConfig()
    svm: SVMConfig = SVMConfig()
    rf: ForestConfig = ForestConfig()
    crf: CRFConfig = CRFConfig()
    lstm: LSTMParams = LSTMParams()
    lstm_delays: List[int] = [0]

    @field_validator("lstm_delays")
    @classmethod
    def _delay_range(cls, value: List[int]) -> List[int]:
        if not value or any(not 0 <= d <= 10 for d in value):
            raise ValueError("lstm_delays must be a non-empty list of integers in 0..10")
        return value


# ============= Synthetic Corpus Schemas =============

class DialectParams(StrictModel):
    """Prosodic parameters of one synthetic dialect."""
    name: str
    f0_base: float = 120.0
    f0_range: float = 4.0
    energy_depth: float = 0.6
    tilt_offset: float = 0.0
    syllable_rate: float = 5.0

    @model_validator(mode="after")
    def _check(self):
        if self.f0_base <= 0 or self.f0_range < 0:
            raise ValueError(f"dialect {self.name}: F0 base must be > 0 and range >= 0")
        if not 0 <= self.energy_depth <= 1:
            raise ValueError(f"dialect {self.name}: energy depth must lie in [0, 1]")
        if not -0.95 < self.tilt_offset < 0.95:
            raise ValueError(f"dialect {self.name}: tilt offset must lie in (-0.95, 0.95)")
        if self.syllable_rate <= 0:
            raise ValueError(f"dialect {self.name}: syllable rate must be > 0")
        return self


def default_dialect_table() -> List[DialectParams]:
    """Five well-separated dialects; F0 bases are 4 semitones apart and stay inside the 60-400 Hz tracker range."""
    return [
        DialectParams(name="inari", f0_base=90.0, f0_range=2.0, energy_depth=0.3, tilt_offset=-0.5, syllable_rate=3.5),
        DialectParams(name="ivalo", f0_base=113.0, f0_range=4.0, energy_depth=0.5, tilt_offset=-0.25, syllable_rate=4.5),
        DialectParams(name="karasjoki", f0_base=143.0, f0_range=6.0, energy_depth=0.7, tilt_offset=0.0, syllable_rate=5.5),
        DialectParams(name="kautokeino", f0_base=180.0, f0_range=8.0, energy_depth=0.85, tilt_offset=0.25, syllable_rate=6.5),
        DialectParams(name="utsjoki", f0_base=227.0, f0_range=10.0, energy_depth=0.95, tilt_offset=0.5, syllable_rate=7.5),
    ]


class SynthConfig(StrictModel):
    dialects: List[DialectParams] = Field(default_factory=default_dialect_table)
    n_speakers: int = 4
    n_recordings: int = 3
    words_per_recording: int = 30
    sample_rate: int = 16000
    noise_level: float = 0.005
    speaker_jitter: float = 0.1
    unit_jitter: float = 0.25


# ============= Experiment Config =============

def _is_lstm_variant(name: str) -> bool:
    """'lstm@d3' names the LSTM trained with target delay 3."""
    base, _, variant = name.partition("@")
    return base == "lstm" and variant.startswith("d") and variant[1:].isdigit() and int(variant[1:]) <= 10


class ExperimentConfig(StrictModel):
    """
    One experiment: corpus, feature settings, the evaluation grid and
    classifier hyperparameters. Defaults reproduce the published settings.
    """
    corpus_root: str = "corpus"
    output_dir: str = "results"
    cache_dir: Optional[str] = None
    tiers: List[Tier] = [Tier.WORD, Tier.SYLLABLE]
    combos: Union[str, List[str]] = "all"
    contexts: List[bool] = [False, True]
    context_width: int = 2
    classifiers: List[str] = ["knn", "svm", "rf", "crf", "lstm"]
    folds: int = 4
    repeats: int = 5
    seed: int = 0
    workers: Optional[int] = None
    executor: str = "local"
    frame: FrameSpec = FrameSpec()
    denoise: DenoiseConfig = DenoiseConfig()
    pitch: PitchConfig = PitchConfig()
    tilt: TiltConfig = TiltConfig()
    oscillator: OscillatorConfig = OscillatorConfig()
    descriptors: DescriptorConfig = DescriptorConfig()
    hyperparameters: ClassifierConfig = ClassifierConfig()
    synth: SynthConfig = SynthConfig()

    @field_validator("classifiers")
    @classmethod
    def _known_classifiers(cls, value: List[str]) -> List[str]:
        known = {"knn", "svm", "rf", "crf", "lstm", "majority"}
        unknown = [v for v in value if v not in known and not _is_lstm_variant(v)]
        if unknown:
            raise ValueError(f"unknown classifiers: {unknown}")
        return value

    @field_validator("combos")
    @classmethod
    def _known_combos(cls, value: Union[str, List[str]]) -> Union[str, List[str]]:
        names = [value] if isinstance(value, str) else value
        for name in names:
            if isinstance(value, str) and name.strip().lower() == "all":
                continue
            parts = [p.strip().upper() for p in name.replace(",", "+").split("+") if p.strip()]
            if not parts or any(p not in ("EN", "F0", "ST", "DUR") for p in parts):
                raise ValueError(f"invalid feature combination {name!r}")
        return value

    @field_validator("executor")
    @classmethod
    def _known_executor(cls, value: str) -> str:
        if value not in ("local", "celery"):
            raise ValueError("executor must be 'local' or 'celery'")
        return value

    @field_validator("folds", "repeats")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("folds and repeats must be >= 1")
        return value

    def extraction_fingerprint(self) -> str:
        """Stable JSON of every setting that changes extracted features."""
        payload = {
            "frame": self.frame.model_dump(),
            "denoise": self.denoise.model_dump(),
            "pitch": self.pitch.model_dump(),
            "tilt": self.tilt.model_dump(),
            "oscillator": self.oscillator.model_dump(),
            "descriptors": self.descriptors.model_dump(),
        }
        return json.dumps(payload, sort_keys=True)
