"""
Exception hierarchy shared by all services.
"""


class ProsodidError(Exception):
    """Base class for every domain failure."""


class AudioFormatError(ProsodidError):
    """Unreadable file, unsupported encoding or empty audio."""


class AnnotationError(ProsodidError):
    """Malformed or inconsistent annotation file."""


class CorpusError(ProsodidError):
    """Corpus directory or speaker metadata is inconsistent."""


class FoldPlanError(ProsodidError):
    """Speaker-disjoint fold plan cannot be built."""


class SignalError(ProsodidError):
    """Signal violates a processing precondition (too short, wrong rate)."""


class SpeakerStatsError(ProsodidError):
    """Per-speaker normalization statistics cannot be computed."""


class DescriptorError(ProsodidError):
    """Unit descriptors cannot be computed for a unit."""


class ModelError(ProsodidError):
    """Classifier misuse: unknown kind, dimension mismatch, bad container."""


class TrainingDivergedError(ModelError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, seed: int = 0, epoch: int = 0):
        super().__init__(f"{message} (seed={seed}, epoch={epoch})")
        self.seed = seed
        self.epoch = epoch


class EvalError(ProsodidError):
    """Evaluation grid cannot run (empty fold, missing features)."""


class CacheError(ProsodidError):
    """Feature cache entry missing or unreadable."""


class ConfigError(ProsodidError):
    """Experiment configuration invalid."""
