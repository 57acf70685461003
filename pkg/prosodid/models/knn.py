"""
k-nearest-neighbour classifier on standardized vectors.
"""
import logging

import numpy as np
from scipy.spatial.distance import cdist

from prosodid.core.errors import ModelError
from prosodid.models.base import (
    LabeledDataset,
    ModelKind,
    TrainedModel,
    fit_standardizer,
    register,
    standardize,
)
from prosodid.schemas.experiment import ClassifierConfig

logger = logging.getLogger(__name__)


def knn_vote(distances: np.ndarray, labels: np.ndarray, k: int, n_classes: int) -> np.ndarray:
    """
    Majority vote among the k nearest training vectors per query row.
    Equal distances keep training order; vote ties go to the smallest mean
    neighbour distance, then to the lowest class index.
    """
    n_train = distances.shape[1]
    if k < 1 or k > n_train:
        raise ModelError(f"k={k} with {n_train} training vectors")
    nearest = np.argsort(distances, axis=1, kind="stable")[:, :k]
    out = np.empty(len(distances), dtype=np.int64)
    for q, idx in enumerate(nearest):
        neighbour_labels = labels[idx]
        counts = np.bincount(neighbour_labels, minlength=n_classes)
        tied = np.flatnonzero(counts == counts.max())
        if len(tied) == 1:
            out[q] = tied[0]
            continue
        d = distances[q, idx]
        mean_dist = np.array([d[neighbour_labels == c].mean() for c in tied])
        out[q] = tied[np.flatnonzero(mean_dist == mean_dist.min())[0]]
    return out


def knn_classify(train: LabeledDataset, query: np.ndarray, k: int = 10) -> int:
    """Label of one query vector against raw (unstandardized) training vectors."""
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if len(train) == 0:
        raise ModelError("kNN needs a non-empty training set")
    if query.shape[1] != train.dim:
        raise ModelError(f"query dim {query.shape[1]} does not match training dim {train.dim}")
    return int(knn_vote(cdist(query, train.X), train.y, k, train.n_classes)[0])


def train_knn(train: LabeledDataset, k: int = 10) -> TrainedModel:
    if len(train) == 0:
        raise ModelError("kNN needs a non-empty training set")
    if k > len(train):
        raise ModelError(f"k={k} exceeds the {len(train)} training vectors")
    mu, sigma = fit_standardizer(train.X)
    return TrainedModel(
        kind=ModelKind.KNN,
        params={"mu": mu, "sigma": sigma, "train_x": (train.X - mu) / sigma, "train_y": train.y.copy()},
        dim=train.dim,
        n_classes=train.n_classes,
        meta={"k": k, "standardized": True},
    )


def predict_knn(model: TrainedModel, dataset: LabeledDataset) -> np.ndarray:
    distances = cdist(standardize(model, dataset.X), model.params["train_x"])
    return knn_vote(distances, model.params["train_y"], model.meta["k"], model.n_classes)


def _train(train: LabeledDataset, config: ClassifierConfig, seed: int = 0, delay=None) -> TrainedModel:
    return train_knn(train, config.knn.k)


register(ModelKind.KNN, _train, predict_knn)
