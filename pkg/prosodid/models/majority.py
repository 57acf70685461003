"""
Majority-class diagnostic: always predicts the most frequent training label.
"""
import numpy as np

from prosodid.core.errors import ModelError
from prosodid.models.base import LabeledDataset, ModelKind, TrainedModel, register
from prosodid.schemas.experiment import ClassifierConfig


def train_majority(train: LabeledDataset) -> TrainedModel:
    if len(train) == 0:
        raise ModelError("majority baseline needs a non-empty training set")
    counts = np.bincount(train.y, minlength=train.n_classes)
    return TrainedModel(
        kind=ModelKind.MAJORITY,
        params={"counts": counts},
        dim=train.dim,
        n_classes=train.n_classes,
        meta={"label": int(np.argmax(counts))},
    )


def predict_majority(model: TrainedModel, dataset: LabeledDataset) -> np.ndarray:
    return np.full(len(dataset), model.meta["label"], dtype=np.int64)


def _train(train: LabeledDataset, config: ClassifierConfig, seed: int = 0, delay=None) -> TrainedModel:
    return train_majority(train)


register(ModelKind.MAJORITY, _train, predict_majority)
