"""
Linear-chain CRF over real-valued unit vectors: linear emission weights
plus per-label bias and label-pair transition weights. Inference by
log-space forward-backward, decoding by Viterbi, training by L-BFGS on
the L2-regularized negative conditional log-likelihood.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from prosodid.core.errors import ModelError, TrainingDivergedError
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


@dataclass
class CRFParams:
    emission: np.ndarray    # (n_classes, dim)
    transition: np.ndarray  # (n_classes, n_classes), [previous, current]
    bias: np.ndarray        # (n_classes,)

    @classmethod
    def zeros(cls, n_classes: int, dim: int) -> "CRFParams":
        return cls(np.zeros((n_classes, dim)), np.zeros((n_classes, n_classes)), np.zeros(n_classes))

    @property
    def n_classes(self) -> int:
        return len(self.bias)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.emission.ravel(), self.transition.ravel(), self.bias])

    @classmethod
    def unflatten(cls, theta: np.ndarray, n_classes: int, dim: int) -> "CRFParams":
        n_e = n_classes * dim
        n_t = n_classes * n_classes
        return cls(
            emission=theta[:n_e].reshape(n_classes, dim),
            transition=theta[n_e:n_e + n_t].reshape(n_classes, n_classes),
            bias=theta[n_e + n_t:],
        )


@dataclass
class SequenceBatch:
    """Sequences zero-padded to a common length, with a validity mask."""
    X: np.ndarray      # (N, L, dim)
    mask: np.ndarray   # (N, L) bool
    labels: np.ndarray  # (N, L) int, 0 where padded

    @classmethod
    def from_sequences(cls, sequences: Sequence[np.ndarray], labels: Sequence[np.ndarray] = None) -> "SequenceBatch":
        n = len(sequences)
        length = max(len(s) for s in sequences)
        dim = sequences[0].shape[1]
        X = np.zeros((n, length, dim))
        mask = np.zeros((n, length), dtype=bool)
        y = np.zeros((n, length), dtype=np.int64)
        for k, s in enumerate(sequences):
            X[k, :len(s)] = s
            mask[k, :len(s)] = True
            if labels is not None:
                y[k, :len(s)] = labels[k]
        return cls(X=X, mask=mask, labels=y)


def _emissions(params: CRFParams, X: np.ndarray) -> np.ndarray:
    return X @ params.emission.T + params.bias


def forward_backward(params: CRFParams, batch: SequenceBatch) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Batched log-space forward-backward.
    Returns (log_z (N,), marginals (N, L, C), pairwise (N, L-1, C, C), emissions).
    Padded positions have zero marginals.
    """
    E = _emissions(params, batch.X)
    T = params.transition
    n, length, c = E.shape
    mask = batch.mask

    log_alpha = np.empty((n, length, c))
    log_alpha[:, 0] = E[:, 0]
    for t in range(1, length):
        step = E[:, t] + logsumexp(log_alpha[:, t - 1, :, None] + T[None], axis=1)
        log_alpha[:, t] = np.where(mask[:, t, None], step, log_alpha[:, t - 1])

    log_beta = np.zeros((n, length, c))
    for t in range(length - 2, -1, -1):
        step = logsumexp(T[None] + (E[:, t + 1] + log_beta[:, t + 1])[:, None, :], axis=2)
        log_beta[:, t] = np.where(mask[:, t + 1, None], step, 0.0)

    log_z = logsumexp(log_alpha[:, -1], axis=1)
    marginals = np.where(mask[:, :, None], np.exp(log_alpha + log_beta - log_z[:, None, None]), 0.0)

    if length > 1:
        log_pair = (
            log_alpha[:, :-1, :, None]
            + T[None, None]
            + (E[:, 1:] + log_beta[:, 1:])[:, :, None, :]
            - log_z[:, None, None, None]
        )
        pairwise = np.where(mask[:, 1:, None, None], np.exp(log_pair), 0.0)
    else:
        pairwise = np.zeros((n, 0, c, c))
    return log_z, marginals, pairwise, E


def crf_forward_backward(params: CRFParams, sequence: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """(log Z, per-position marginals (L, C), pairwise marginals (L-1, C, C)) of one sequence."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if len(sequence) == 0:
        raise ModelError("CRF inference needs a non-empty sequence")
    log_z, marginals, pairwise, _ = forward_backward(params, SequenceBatch.from_sequences([sequence]))
    return float(log_z[0]), marginals[0], pairwise[0]


def sequence_score(params: CRFParams, sequence: np.ndarray, labels: Sequence[int]) -> float:
    """Unnormalized log score of one labeling."""
    E = _emissions(params, np.asarray(sequence, dtype=np.float64))
    labels = np.asarray(labels)
    score = E[np.arange(len(labels)), labels].sum()
    return float(score + params.transition[labels[:-1], labels[1:]].sum())


def viterbi_decode(params: CRFParams, sequence: np.ndarray) -> np.ndarray:
    """Highest-scoring labeling; every argmax picks the lowest label index on ties."""
    E = _emissions(params, np.asarray(sequence, dtype=np.float64))
    length, c = E.shape
    if length == 0:
        return np.zeros(0, dtype=np.int64)
    delta = E[0].copy()
    back = np.zeros((length, c), dtype=np.int64)
    for t in range(1, length):
        scores = delta[:, None] + params.transition
        back[t] = np.argmax(scores, axis=0)
        delta = E[t] + scores[back[t], np.arange(c)]
    path = np.zeros(length, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(length - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def crf_objective(theta: np.ndarray, batch: SequenceBatch, n_classes: int, l2: float) -> Tuple[float, np.ndarray]:
    """
    Negative conditional log-likelihood plus (l2/2)||theta||^2 and its
    gradient (model expectations minus empirical counts, plus l2*theta).
    """
    dim = batch.X.shape[2]
    params = CRFParams.unflatten(theta, n_classes, dim)
    log_z, marginals, pairwise, E = forward_backward(params, batch)

    mask = batch.mask
    onehot = np.eye(n_classes)[batch.labels] * mask[:, :, None]
    gold = np.sum(E * onehot)
    prev, cur = batch.labels[:, :-1], batch.labels[:, 1:]
    pair_mask = mask[:, 1:]
    gold += np.sum(params.transition[prev, cur] * pair_mask)
    nll = float(np.sum(log_z) - gold)

    diff = marginals - onehot
    g_emission = np.einsum("nlc,nld->cd", diff, batch.X)
    g_bias = diff.sum(axis=(0, 1))
    empirical = np.zeros((n_classes, n_classes))
    np.add.at(empirical, (prev[pair_mask], cur[pair_mask]), 1.0)
    g_transition = pairwise.sum(axis=(0, 1)) - empirical

    grad = np.concatenate([g_emission.ravel(), g_transition.ravel(), g_bias]) + l2 * theta
    return nll + 0.5 * l2 * float(theta @ theta), grad


def train_crf(
    train: LabeledDataset,
    l2: float = 1.0,
    max_iter: int = 100,
    history: int = 10,
    gtol: float = 1e-5,
    seed: int = 0,
) -> TrainedModel:
    """
    L-BFGS (limited-memory, `history` correction pairs) from zero weights.
    Inputs are standardized with training statistics first. Training stops
    after max_iter iterations or once the Euclidean norm of the gradient
    drops below gtol; L-BFGS-B's own tolerances are switched off.
    """
    sequences = [s for s in train.sequences() if len(s[0])]
    if not sequences:
        raise ModelError("CRF needs at least one labeled sequence")
    mu, sigma = fit_standardizer(train.X)
    batch = SequenceBatch.from_sequences([(x - mu) / sigma for x, _ in sequences], [y for _, y in sequences])
    c, dim = train.n_classes, train.dim

    objective_history: List[float] = []
    last = {"x": None, "grad": None}

    def fun(theta):
        value, grad = crf_objective(theta, batch, c, l2)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise TrainingDivergedError("CRF objective is not finite; check feature scaling", seed=seed, epoch=len(objective_history))
        last["x"], last["grad"] = theta.copy(), grad
        return value, grad

    def gradient_at(theta) -> np.ndarray:
        if last["x"] is not None and np.array_equal(last["x"], theta):
            return last["grad"]
        return fun(theta)[1]

    def callback(intermediate_result):
        objective_history.append(float(intermediate_result.fun))
        if np.linalg.norm(gradient_at(intermediate_result.x)) < gtol:
            raise StopIteration

    theta0 = np.zeros(c * dim + c * c + c)
    if np.linalg.norm(gradient_at(theta0)) < gtol:
        theta, iterations, objective = theta0, 0, fun(theta0)[0]
    else:
        result = minimize(
            fun,
            theta0,
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={"maxiter": max_iter, "maxcor": history, "gtol": 0.0, "ftol": 0.0},
        )
        logger.debug(f"CRF training: {result.nit} iterations, objective {result.fun:.4f} ({result.message})")
        theta, iterations, objective = result.x, int(result.nit), float(result.fun)
    grad_norm = float(np.linalg.norm(gradient_at(theta)))

    params = CRFParams.unflatten(theta, c, dim)
    return TrainedModel(
        kind=ModelKind.CRF,
        params={"mu": mu, "sigma": sigma, "emission": params.emission,
                "transition": params.transition, "bias": params.bias},
        dim=dim,
        n_classes=c,
        meta={"l2": l2, "max_iter": max_iter, "iterations": iterations, "objective": objective,
              "objective_history": objective_history, "grad_norm": grad_norm,
              "converged": grad_norm < gtol, "standardized": True},
    )


def model_params(model: TrainedModel) -> CRFParams:
    p = model.params
    return CRFParams(emission=p["emission"], transition=p["transition"], bias=p["bias"])


def predict_crf(model: TrainedModel, dataset: LabeledDataset) -> np.ndarray:
    params = model_params(model)
    out = [viterbi_decode(params, standardize(model, x)) for x, _ in dataset.sequences() if len(x)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _train(train: LabeledDataset, config: ClassifierConfig, seed: int = 0, delay=None) -> TrainedModel:
    r = config.crf
    return train_crf(train, r.l2, r.max_iter, r.history, r.gtol, seed)


register(ModelKind.CRF, _train, predict_crf)
