"""
Shared classifier plumbing: the labeled dataset, the trained-model
container, feature standardization and the kind registry.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from prosodid.core.errors import ModelError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_KEY = "__meta__"


class ModelKind:
    KNN = "knn"
    SVM = "svm"
    RF = "rf"
    CRF = "crf"
    LSTM = "lstm"
    MAJORITY = "majority"

    SEQUENCE = frozenset({CRF, LSTM})


def parse_kind(name: str) -> Tuple[str, Optional[int]]:
    """'lstm@d3' -> ('lstm', 3); plain kinds carry no delay."""
    base, _, variant = name.partition("@")
    if not variant:
        return base, None
    if base != ModelKind.LSTM or not variant.startswith("d") or not variant[1:].isdigit():
        raise ModelError(f"unknown classifier variant {name!r}")
    return base, int(variant[1:])


# ============= Dataset =============

@dataclass
class LabeledDataset:
    """
    Unit vectors with labels, grouped into per-recording sequences. Row
    order equals the concatenation of the sequences.
    """
    X: np.ndarray
    y: np.ndarray
    lengths: np.ndarray
    n_classes: int
    recording_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X.reshape(len(self.X), -1) if len(self.X) else np.zeros((0, 0))
        self.y = np.asarray(self.y, dtype=np.int64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if len(self.X) != len(self.y):
            raise ModelError(f"{len(self.X)} vectors but {len(self.y)} labels")
        if int(self.lengths.sum()) != len(self.y) or np.any(self.lengths < 0):
            raise ModelError("sequence lengths do not partition the vectors")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ModelError(f"labels outside [0, {self.n_classes})")

    @classmethod
    def from_sequences(
        cls,
        sequences: Sequence[np.ndarray],
        labels: Sequence[np.ndarray],
        n_classes: int,
        recording_ids: Optional[List[str]] = None,
    ) -> "LabeledDataset":
        sequences = [np.asarray(s, dtype=np.float64) for s in sequences]
        dim = sequences[0].shape[1] if sequences else 0
        X = np.vstack(sequences) if sequences else np.zeros((0, dim))
        y = np.concatenate([np.asarray(l, dtype=np.int64) for l in labels]) if labels else np.zeros(0, np.int64)
        return cls(X=X, y=y, lengths=np.array([len(s) for s in sequences], dtype=np.int64),
                   n_classes=n_classes, recording_ids=list(recording_ids or []))

    @property
    def dim(self) -> int:
        return self.X.shape[1] if self.X.ndim == 2 else 0

    def __len__(self) -> int:
        return len(self.y)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.lengths)])

    def sequences(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(vectors, labels) per recording, in unit order."""
        bounds = self.offsets
        return [(self.X[a:b], self.y[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


# ============= Trained Model =============

@dataclass
class TrainedModel:
    """
    Immutable result of training: kind tag, parameter arrays and
    JSON-serializable metadata (seed, iterations, hyperparameters).
    """
    kind: str
    params: Dict[str, np.ndarray]
    dim: int
    n_classes: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def check_dim(self, dataset: LabeledDataset) -> None:
        if len(dataset) and dataset.dim != self.dim:
            raise ModelError(f"{self.kind} model expects dim {self.dim}, got {dataset.dim}")

    def save(self, path: Union[str, Path]) -> None:
        header = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "dim": self.dim,
            "n_classes": self.n_classes,
            "meta": self.meta,
        }
        with open(path, "wb") as f:
            np.savez(f, **self.params, **{META_KEY: np.array(json.dumps(header, sort_keys=True))})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainedModel":
        try:
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data[META_KEY]))
                params = {k: data[k] for k in data.files if k != META_KEY}
        except (OSError, KeyError, ValueError) as exc:
            raise ModelError(f"unreadable model file {path}: {exc}")
        if header.get("format_version") != FORMAT_VERSION:
            raise ModelError(f"unsupported model format {header.get('format_version')!r}")
        return cls(kind=header["kind"], params=params, dim=header["dim"],
                   n_classes=header["n_classes"], meta=header.get("meta", {}))


# ============= Standardization =============

def fit_standardizer(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std; constant dimensions get std 1."""
    mu = X.mean(axis=0) if len(X) else np.zeros(X.shape[1])
    sigma = X.std(axis=0) if len(X) else np.ones(X.shape[1])
    sigma = np.where(sigma > 0, sigma, 1.0)
    return mu, sigma


def standardize(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    if "mu" not in model.params:
        return X
    return (X - model.params["mu"]) / model.params["sigma"]


def vote(counts: np.ndarray) -> np.ndarray:
    """Row-wise argmax with ties to the lowest class index."""
    return np.argmax(counts, axis=1).astype(np.int64)


# ============= Registry =============

Trainer = Callable[..., TrainedModel]
Predictor = Callable[[TrainedModel, LabeledDataset], np.ndarray]

_TRAINERS: Dict[str, Trainer] = {}
_PREDICTORS: Dict[str, Predictor] = {}


def register(kind: str, trainer: Trainer, predictor: Predictor) -> None:
    _TRAINERS[kind] = trainer
    _PREDICTORS[kind] = predictor


def registered_kinds() -> List[str]:
    return sorted(_TRAINERS)


def get_trainer(kind: str) -> Trainer:
    base, _ = parse_kind(kind)
    if base not in _TRAINERS:
        raise ModelError(f"unknown model kind {kind!r}")
    return _TRAINERS[base]


def predict(model: TrainedModel, dataset: LabeledDataset) -> np.ndarray:
    """One label per unit, in dataset row order."""
    if model.kind not in _PREDICTORS:
        raise ModelError(f"unknown model kind {model.kind!r}")
    if len(dataset) == 0:
        return np.zeros(0, dtype=np.int64)
    model.check_dim(dataset)
    return _PREDICTORS[model.kind](model, dataset)
