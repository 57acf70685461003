from typing import Optional

from prosodid.models.base import (
    LabeledDataset,
    ModelKind,
    TrainedModel,
    get_trainer,
    parse_kind,
    predict,
    registered_kinds,
)
from prosodid.models.knn import knn_classify, train_knn
from prosodid.models.svm import rbf_kernel, smo_solve, train_svm
from prosodid.models.forest import train_random_forest
from prosodid.models.crf import CRFParams, crf_forward_backward, train_crf, viterbi_decode
from prosodid.models.lstm import lstm_predict_proba, train_lstm
from prosodid.models.majority import train_majority
from prosodid.schemas.experiment import ClassifierConfig


def train_model(
    kind: str,
    train: LabeledDataset,
    config: Optional[ClassifierConfig] = None,
    seed: int = 0,
) -> TrainedModel:
    """Train any registered kind ('lstm@d3' selects an LSTM delay variant)."""
    _, delay = parse_kind(kind)
    return get_trainer(kind)(train, config or ClassifierConfig(), seed=seed, delay=delay)


__all__ = [
    # Contract
    "LabeledDataset",
    "ModelKind",
    "TrainedModel",
    "parse_kind",
    "predict",
    "registered_kinds",
    "train_model",
    # Classifiers
    "knn_classify",
    "train_knn",
    "rbf_kernel",
    "smo_solve",
    "train_svm",
    "train_random_forest",
    "CRFParams",
    "crf_forward_backward",
    "train_crf",
    "viterbi_decode",
    "lstm_predict_proba",
    "train_lstm",
    "train_majority",
]
