"""
Unidirectional single-layer LSTM with a per-position softmax, trained by
BPTT and mini-batch SGD with gradient-norm clipping.

Delay d is a target delay: every sequence is extended by d zero inputs and
the label of unit t is predicted at step t + d, so the decision for unit t
sees the inputs of units up to t + d.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, softmax

from prosodid.core.errors import ModelError, TrainingDivergedError
from prosodid.models.base import (
    LabeledDataset,
    ModelKind,
    TrainedModel,
    fit_standardizer,
    register,
    standardize,
)
from prosodid.schemas.experiment import ClassifierConfig, LSTMParams

logger = logging.getLogger(__name__)

Weights = Dict[str, np.ndarray]


def init_weights(dim: int, n_classes: int, params: LSTMParams, rng: np.random.Generator) -> Weights:
    """Uniform(-init_scale, init_scale) matrices; gate order [input, forget, output, candidate]."""
    h = params.hidden
    s = params.init_scale
    b = np.zeros(4 * h)
    b[h:2 * h] = params.forget_bias
    return {
        "W": rng.uniform(-s, s, size=(4 * h, dim + h)),
        "b": b,
        "Wy": rng.uniform(-s, s, size=(n_classes, h)),
        "by": np.zeros(n_classes),
    }


def pad_batch(
    sequences: Sequence[np.ndarray],
    labels: Optional[Sequence[np.ndarray]] = None,
    delay: int = 0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Time-major zero-padded inputs (T, B, D), delayed targets (T, B) and the
    loss mask (T, B) marking the steps that carry a unit's prediction.
    """
    n = len(sequences)
    dim = sequences[0].shape[1]
    steps = max(len(s) for s in sequences) + delay
    X = np.zeros((steps, n, dim))
    targets = np.zeros((steps, n), dtype=np.int64)
    mask = np.zeros((steps, n), dtype=bool)
    for k, s in enumerate(sequences):
        X[:len(s), k] = s
        mask[delay:delay + len(s), k] = True
        if labels is not None:
            targets[delay:delay + len(s), k] = labels[k]
    return X, targets, mask


def lstm_forward(weights: Weights, X: np.ndarray) -> Tuple[np.ndarray, List[tuple]]:
    """Softmax outputs (T, B, C) and the per-step cache for backprop."""
    W, b, Wy, by = weights["W"], weights["b"], weights["Wy"], weights["by"]
    steps, n, _ = X.shape
    hidden = Wy.shape[1]
    h = np.zeros((n, hidden))
    c = np.zeros((n, hidden))
    probs = np.zeros((steps, n, Wy.shape[0]))
    cache = []
    for t in range(steps):
        xh = np.hstack([X[t], h])
        z = xh @ W.T + b
        i = expit(z[:, :hidden])
        f = expit(z[:, hidden:2 * hidden])
        o = expit(z[:, 2 * hidden:3 * hidden])
        g = np.tanh(z[:, 3 * hidden:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        probs[t] = softmax(h @ Wy.T + by, axis=1)
        cache.append((xh, i, f, o, g, c_prev, tc, h))
    return probs, cache


def lstm_loss_and_grads(
    weights: Weights,
    X: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
) -> Tuple[float, Weights]:
    """Cross-entropy averaged over masked steps, and its gradient by BPTT."""
    probs, cache = lstm_forward(weights, X)
    W, Wy = weights["W"], weights["Wy"]
    steps, n, n_classes = probs.shape
    hidden = Wy.shape[1]
    dim = X.shape[2]
    count = max(int(mask.sum()), 1)

    picked = np.take_along_axis(probs, targets[:, :, None], axis=2)[:, :, 0]
    loss = float(-np.sum(np.log(np.maximum(picked, 1e-300))[mask]) / count)

    grads = {k: np.zeros_like(v) for k, v in weights.items()}
    dh_next = np.zeros((n, hidden))
    dc_next = np.zeros((n, hidden))
    onehot = np.eye(n_classes)[targets]
    for t in range(steps - 1, -1, -1):
        xh, i, f, o, g, c_prev, tc, h = cache[t]
        dlogits = (probs[t] - onehot[t]) * (mask[t][:, None] / count)
        grads["Wy"] += dlogits.T @ h
        grads["by"] += dlogits.sum(axis=0)
        dh = dlogits @ Wy + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.hstack([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g * g),
        ])
        grads["W"] += dz.T @ xh
        grads["b"] += dz.sum(axis=0)
        dh_next = (dz @ W)[:, dim:]
    return loss, grads


def clip_gradients(grads: Weights, max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most max_norm."""
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _batches(lengths: np.ndarray, order: np.ndarray, batch_positions: int) -> List[List[int]]:
    """Consecutive sequences of `order` grouped until each group holds batch_positions units."""
    groups, current, size = [], [], 0
    for k in order:
        current.append(int(k))
        size += int(lengths[k])
        if size >= batch_positions:
            groups.append(current)
            current, size = [], 0
    if current:
        groups.append(current)
    return groups


def train_lstm(train: LabeledDataset, params: Optional[LSTMParams] = None, seed: int = 0) -> TrainedModel:
    params = params or LSTMParams()
    sequences = [s for s in train.sequences() if len(s[0])]
    if not sequences:
        raise ModelError("LSTM needs at least one labeled sequence")
    rng = np.random.default_rng(seed)
    mu, sigma = fit_standardizer(train.X)
    inputs = [(x - mu) / sigma for x, _ in sequences]
    labels = [y for _, y in sequences]
    lengths = np.array([len(x) for x in inputs])
    weights = init_weights(train.dim, train.n_classes, params, rng)

    losses = []
    for epoch in range(params.epochs):
        epoch_loss = 0.0
        groups = _batches(lengths, rng.permutation(len(inputs)), params.batch)
        for group in groups:
            X, targets, mask = pad_batch([inputs[k] for k in group], [labels[k] for k in group], params.delay)
            loss, grads = lstm_loss_and_grads(weights, X, targets, mask)
            if not np.isfinite(loss):
                raise TrainingDivergedError("LSTM loss is not finite", seed=seed, epoch=epoch)
            clip_gradients(grads, params.clip)
            for key in weights:
                weights[key] -= params.lr * grads[key]
            epoch_loss += loss
        losses.append(epoch_loss / len(groups))
        if (epoch + 1) % 50 == 0:
            logger.debug(f"LSTM epoch {epoch + 1}/{params.epochs}: loss {losses[-1]:.4f}")

    return TrainedModel(
        kind=ModelKind.LSTM,
        params={"mu": mu, "sigma": sigma, **weights},
        dim=train.dim,
        n_classes=train.n_classes,
        meta={"seed": seed, "epochs": params.epochs, "delay": params.delay,
              "hyperparameters": params.model_dump(), "loss_history": losses, "standardized": True},
    )


def _weights(model: TrainedModel) -> Weights:
    return {k: model.params[k] for k in ("W", "b", "Wy", "by")}


def lstm_predict_proba(model: TrainedModel, sequence: np.ndarray) -> np.ndarray:
    """Class posteriors (L, C) of one recording's units."""
    x = standardize(model, np.asarray(sequence, dtype=np.float64))
    delay = model.meta.get("delay", 0)
    X, _, mask = pad_batch([x], delay=delay)
    probs, _ = lstm_forward(_weights(model), X)
    return probs[mask[:, 0], 0]


def predict_lstm(model: TrainedModel, dataset: LabeledDataset) -> np.ndarray:
    sequences = [standardize(model, x) for x, _ in dataset.sequences() if len(x)]
    if not sequences:
        return np.zeros(0, dtype=np.int64)
    X, _, mask = pad_batch(sequences, delay=model.meta.get("delay", 0))
    probs, _ = lstm_forward(_weights(model), X)
    # mask is time-major; predictions are collected sequence by sequence
    out = [np.argmax(probs[mask[:, k], k], axis=1) for k in range(len(sequences))]
    return np.concatenate(out).astype(np.int64)


def _train(train: LabeledDataset, config: ClassifierConfig, seed: int = 0, delay: Optional[int] = None) -> TrainedModel:
    params = config.lstm if delay is None else config.lstm.model_copy(update={"delay": delay})
    return train_lstm(train, params, seed)


register(ModelKind.LSTM, _train, predict_lstm)
