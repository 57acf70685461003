from prosodid.schemas.corpus import Tier, UnitSegment, RecordingEntry, CorpusManifest, Split, FoldPlan
from prosodid.schemas.signals import AudioRecording, ProsodicTrack, NormalizedTrack
from prosodid.schemas.experiment import (
    FrameSpec,
    DenoiseConfig,
    PitchConfig,
    TiltConfig,
    OscillatorConfig,
    DescriptorConfig,
    KNNConfig,
    SVMConfig,
    ForestConfig,
    CRFConfig,
    LSTMParams,
    ClassifierConfig,
    DialectParams,
    SynthConfig,
    ExperimentConfig,
    default_dialect_table,
)
from prosodid.schemas.report import CellKey, SplitResult, CellSummary, CellFailure, EvalReport

__all__ = [
    # Corpus
    "Tier",
    "UnitSegment",
    "RecordingEntry",
    "CorpusManifest",
    "Split",
    "FoldPlan",
    # Signals
    "AudioRecording",
    "ProsodicTrack",
    "NormalizedTrack",
    # Experiment config
    "FrameSpec",
    "DenoiseConfig",
    "PitchConfig",
    "TiltConfig",
    "OscillatorConfig",
    "DescriptorConfig",
    "KNNConfig",
    "SVMConfig",
    "ForestConfig",
    "CRFConfig",
    "LSTMParams",
    "ClassifierConfig",
    "DialectParams",
    "SynthConfig",
    "ExperimentConfig",
    "default_dialect_table",
    # Reports
    "CellKey",
    "SplitResult",
    "CellSummary",
    "CellFailure",
    "EvalReport",
]
