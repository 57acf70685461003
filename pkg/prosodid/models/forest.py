"""
Random forest of CART trees (Gini impurity, bootstrap samples, sqrt(dim)
candidate features per split). Trees are stored as flat node arrays.
"""
import logging
from typing import Dict, List, Optional

import numpy as np

from prosodid.core.errors import ModelError
from prosodid.models.base import LabeledDataset, ModelKind, TrainedModel, register, vote
from prosodid.schemas.experiment import ClassifierConfig

logger = logging.getLogger(__name__)

LEAF = -1


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray, n_classes: int, min_leaf: int):
    """(feature, threshold, impurity) of the lowest weighted Gini split, or None."""
    n = len(y)
    onehot = np.eye(n_classes)[y]
    total = onehot.sum(axis=0)
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        right = total - left
        gini_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
        impurity = (n_left * gini_left + n_right * gini_right) / n
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        candidates = np.flatnonzero(valid)
        k = candidates[np.argmin(impurity[candidates])]
        if best is None or impurity[k] < best[2]:
            best = (int(f), 0.5 * (xs[k] + xs[k + 1]), float(impurity[k]))
    return best


def build_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    rng: np.random.Generator,
    max_features: int,
    min_leaf: int = 2,
    max_depth: Optional[int] = None,
) -> Dict[str, np.ndarray]:
    """Grow one tree to purity, min_leaf or max_depth. Samples go left when x[f] <= threshold."""
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    label: List[int] = []

    def new_node() -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        label.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes)
        label[node] = int(np.argmax(counts))
        if counts.max() == len(idx) or len(idx) < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
            continue
        features = rng.choice(X.shape[1], size=max_features, replace=False)
        gini = 1.0 - np.sum((counts / len(idx)) ** 2)
        split = _best_split(X[idx], y[idx], features, n_classes, min_leaf)
        if split is None or split[2] >= gini:
            continue
        f, t, _ = split
        go_left = X[idx, f] <= t
        l_node, r_node = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, t, l_node, r_node
        stack.append((r_node, idx[~go_left], depth + 1))
        stack.append((l_node, idx[go_left], depth + 1))

    return {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold, dtype=np.float64),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "label": np.array(label, dtype=np.int64),
    }


def tree_predict(tree: Dict[str, np.ndarray], X: np.ndarray, root: int = 0) -> np.ndarray:
    node = np.full(len(X), root, dtype=np.int64)
    rows = np.arange(len(X))
    active = tree["feature"][node] != LEAF
    while active.any():
        r, nd = rows[active], node[active]
        go_left = X[r, tree["feature"][nd]] <= tree["threshold"][nd]
        node[active] = np.where(go_left, tree["left"][nd], tree["right"][nd])
        active = tree["feature"][node] != LEAF
    return tree["label"][node]


def train_random_forest(
    train: LabeledDataset,
    n_trees: int = 50,
    seed: int = 0,
    min_leaf: int = 2,
    max_depth: Optional[int] = None,
) -> TrainedModel:
    if len(train) == 0:
        raise ModelError("random forest needs a non-empty training set")
    rng = np.random.default_rng(seed)
    n, dim = train.X.shape
    max_features = max(1, int(np.sqrt(dim)))

    trees = []
    for _ in range(n_trees):
        sample = rng.integers(0, n, size=n)
        trees.append(build_tree(train.X[sample], train.y[sample], train.n_classes, rng, max_features, min_leaf, max_depth))

    # concatenate node arrays; child indices shifted by each tree's offset
    sizes = [len(t["feature"]) for t in trees]
    roots = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    params = {key: np.concatenate([t[key] for t in trees]) for key in ("feature", "threshold", "label")}
    for key in ("left", "right"):
        params[key] = np.concatenate([
            np.where(t[key] == LEAF, LEAF, t[key] + off) for t, off in zip(trees, roots)
        ])
    params["roots"] = roots

    logger.debug(f"Random forest: {n_trees} trees, {sum(sizes)} nodes")
    return TrainedModel(
        kind=ModelKind.RF,
        params=params,
        dim=dim,
        n_classes=train.n_classes,
        meta={"n_trees": n_trees, "seed": seed, "min_leaf": min_leaf, "max_depth": max_depth,
              "max_features": max_features},
    )


def predict_forest(model: TrainedModel, dataset: LabeledDataset) -> np.ndarray:
    votes = np.zeros((len(dataset), model.n_classes))
    rows = np.arange(len(dataset))
    for root in model.params["roots"]:
        np.add.at(votes, (rows, tree_predict(model.params, dataset.X, int(root))), 1)
    return vote(votes)


def _train(train: LabeledDataset, config: ClassifierConfig, seed: int = 0, delay=None) -> TrainedModel:
    r = config.rf
    return train_random_forest(train, r.n_trees, seed, r.min_leaf, r.max_depth)


register(ModelKind.RF, _train, predict_forest)
