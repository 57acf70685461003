"""
RBF-kernel support vector machine trained by SMO, one-vs-one for
multiclass problems.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import List, Tuple

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
    vote,
)
from prosodid.schemas.experiment import ClassifierConfig

logger = logging.getLogger(__name__)

TAU = 1e-12


def rbf_kernel(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    """K(x, y) = exp(-||x - y||^2 / (2 sigma^2))."""
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma * sigma))


@dataclass
class BinarySolution:
    alpha: np.ndarray
    rho: float
    iterations: int
    converged: bool


def smo_solve(K: np.ndarray, y: np.ndarray, c: float, tol: float = 1e-3, max_iter: int = 200000) -> BinarySolution:
    """
    Solve min 1/2 a'Qa - e'a subject to 0 <= a <= C and y'a = 0 with
    Q_ij = y_i y_j K_ij, using second-order working-set selection.
    Stops when the maximal KKT violation drops below tol.
    """
    n = len(y)
    y = y.astype(np.float64)
    alpha = np.zeros(n)
    grad = -np.ones(n)
    qd = np.diag(K).copy()
    iterations = 0
    converged = False

    while iterations < max_iter:
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            converged = True
            break
        up_idx = np.flatnonzero(up)
        i = int(up_idx[np.argmax(yg[up_idx])])
        g_max = yg[i]
        g_min = yg[low].min()
        if g_max - g_min < tol:
            converged = True
            break

        low_idx = np.flatnonzero(low & (yg < g_max))
        b = g_max - yg[low_idx]
        a = qd[i] + qd[low_idx] - 2.0 * K[i, low_idx]
        a = np.where(a > 0, a, TAU)
        j = int(low_idx[np.argmin(-(b * b) / a)])

        old_i, old_j = alpha[i], alpha[j]
        q_ij = y[i] * y[j] * K[i, j]
        if y[i] != y[j]:
            quad = qd[i] + qd[j] + 2.0 * q_ij
            delta = (-grad[i] - grad[j]) / max(quad, TAU)
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = c - diff
            elif alpha[j] > c:
                alpha[j] = c
                alpha[i] = c + diff
        else:
            quad = qd[i] + qd[j] - 2.0 * q_ij
            delta = (grad[i] - grad[j]) / max(quad, TAU)
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = total - c
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > c:
                if alpha[j] > c:
                    alpha[j] = c
                    alpha[i] = total - c
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total

        d_i, d_j = alpha[i] - old_i, alpha[j] - old_j
        grad += y * (K[:, i] * (y[i] * d_i) + K[:, j] * (y[j] * d_j))
        iterations += 1

    if not converged:
        logger.warning(f"SMO stopped at max_iter={max_iter} before reaching tol={tol}")
    return BinarySolution(alpha=alpha, rho=_rho(alpha, y, grad, c), iterations=iterations, converged=converged)


def _rho(alpha: np.ndarray, y: np.ndarray, grad: np.ndarray, c: float) -> float:
    """Mean of y*grad over free vectors; midpoint of the feasible range otherwise."""
    yg = y * grad
    at_upper = alpha >= c
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        return float(yg[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2.0)


def train_svm(
    train: LabeledDataset,
    c: float = 100.0,
    sigma: float = 12.0790,
    tol: float = 1e-3,
    max_iter: int = 200000,
) -> TrainedModel:
    """
    One binary SVM per pair of classes present in the training data.
    Binary labels are +1 for the lower class of the pair.
    """
    present = np.unique(train.y)
    if len(present) < 2:
        raise ModelError(f"SVM needs at least 2 classes, training data has {len(present)}")

    mu, sigma_x = fit_standardizer(train.X)
    X = (train.X - mu) / sigma_x
    pairs: List[Tuple[int, int]] = list(itertools.combinations(present.tolist(), 2))
    dual = np.zeros((len(pairs), len(X)))
    rho = np.zeros(len(pairs))
    iterations = []

    for p, (a, b) in enumerate(pairs):
        idx = np.flatnonzero((train.y == a) | (train.y == b))
        yb = np.where(train.y[idx] == a, 1.0, -1.0)
        K = rbf_kernel(X[idx], X[idx], sigma)
        sol = smo_solve(K, yb, c, tol, max_iter)
        dual[p, idx] = sol.alpha * yb
        rho[p] = sol.rho
        iterations.append(sol.iterations)
        logger.debug(f"SVM pair ({a}, {b}): {int(np.sum(sol.alpha > 0))} support vectors, {sol.iterations} iterations")

    support = np.flatnonzero(np.any(dual != 0, axis=0))
    return TrainedModel(
        kind=ModelKind.SVM,
        params={
            "mu": mu,
            "sigma": sigma_x,
            "support_x": X[support],
            "dual_coef": dual[:, support],
            "rho": rho,
            "pairs": np.array(pairs, dtype=np.int64).reshape(-1, 2),
        },
        dim=train.dim,
        n_classes=train.n_classes,
        meta={"c": c, "sigma": sigma, "tol": tol, "iterations": iterations, "standardized": True},
    )


def decision_values(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Pairwise decision values, shape (n, n_pairs); positive favours the lower class."""
    K = rbf_kernel(standardize(model, X), model.params["support_x"], model.meta["sigma"])
    return K @ model.params["dual_coef"].T - model.params["rho"]


def predict_svm(model: TrainedModel, dataset: LabeledDataset) -> np.ndarray:
    values = decision_values(model, dataset.X)
    votes = np.zeros((len(dataset), model.n_classes))
    rows = np.arange(len(dataset))
    for p, (a, b) in enumerate(model.params["pairs"]):
        winner = np.where(values[:, p] >= 0, a, b)
        np.add.at(votes, (rows, winner), 1)
    return vote(votes)


def _train(train: LabeledDataset, config: ClassifierConfig, seed: int = 0, delay=None) -> TrainedModel:
    s = config.svm
    return train_svm(train, s.c, s.sigma, s.tol, s.max_iter)


register(ModelKind.SVM, _train, predict_svm)
