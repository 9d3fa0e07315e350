"""Training objectives and their gradients with respect to softmax outputs.

Every loss takes a ``probs`` batch (rows are softmax outputs) and has a
``*_grad`` companion returning dloss/dprobs of the same shape, which feeds
straight into ``Network.backward``. Probabilities are clamped to ``EPS``
inside logs and denominators; where the clamp is active the derivative is
that of the clamped expression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

EPS = 1e-8
ROW_TOL = 1e-4


def _check_rows(m, what, tol=ROW_TOL):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"{what} must be a 2-d matrix, got shape {m.shape}")
    if m.shape[0] == 0:
        raise ContractError(f"{what} is empty")
    if np.any(m < -tol) or np.any(np.abs(m.sum(axis=1) - 1.0) > tol):
        raise ContractError(f"{what} rows must be probability vectors")
    return m


def _check_pair(labels, probs):
    labels = _check_rows(labels, "labels")
    probs = _check_rows(probs, "probs")
    if labels.shape != probs.shape:
        raise ContractError(f"labels {labels.shape} and probs {probs.shape} differ in shape")
    return labels, probs


def _xlogy(x, y):
    # 0 * log(0 / .) = 0
    out = np.zeros_like(x)
    nz = x > 0
    out[nz] = x[nz] * np.log(y[nz])
    return out


@dataclass(frozen=True)
class Prior:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ContractError("prior must be a non-negative vector summing to 1")
        object.__setattr__(self, "p", p)

    @classmethod
    def uniform(cls, c):
        return cls(np.full(c, 1.0 / c))


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_p: float
    l_e: float
    total: float
    alpha: float
    beta: float


# ------------------------------------------------------ classification


def kl_classification_loss(labels, probs) -> float:
    """Mean KL(y_i || s_i) over the batch."""
    y, s = _check_pair(labels, probs)
    s = np.maximum(s, EPS)
    return float((_xlogy(y, y) - _xlogy(y, s)).sum() / len(y))


def kl_classification_grad(labels, probs):
    y, s = _check_pair(labels, probs)
    return np.where(s > EPS, -y / np.maximum(s, EPS), 0.0) / len(y)


def _check_onehot(labels):
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2 or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
        raise ContractError("labels must be one-hot rows")
    return y


def cross_entropy_loss(onehot_labels, probs) -> float:
    y = _check_onehot(onehot_labels)
    y, s = _check_pair(y, probs)
    return float(-_xlogy(y, np.maximum(s, EPS)).sum() / len(y))


def cross_entropy_grad(onehot_labels, probs):
    y = _check_onehot(onehot_labels)
    return kl_classification_grad(y, probs)


def forward_corrected_loss(onehot_labels, probs, transition) -> float:
    """Cross entropy against T-mixed predictions, -(1/b) sum log(y^T T s).

    The label selects a row of T. For a non-symmetric T holding
    p(noisy=j | true=i) in row i, pass its transpose to score the
    probability of the observed noisy label.
    """
    y, s, t = _check_forward(onehot_labels, probs, transition)
    q = np.einsum("bj,bj->b", y @ t, s)
    return float(-np.log(np.maximum(q, EPS)).sum() / len(y))


def forward_corrected_grad(onehot_labels, probs, transition):
    y, s, t = _check_forward(onehot_labels, probs, transition)
    yt = y @ t
    q = np.einsum("bj,bj->b", yt, s)
    scale = np.where(q > EPS, -1.0 / np.maximum(q, EPS), 0.0)
    return yt * scale[:, None] / len(y)


def _check_forward(onehot_labels, probs, transition):
    y = _check_onehot(onehot_labels)
    y, s = _check_pair(y, probs)
    t = np.asarray(transition, dtype=np.float64)
    c = y.shape[1]
    if t.shape != (c, c) or np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
        raise ContractError(f"transition matrix must be a {c}x{c} row-stochastic matrix")
    return y, s, t


# ------------------------------------------------------ regularizers


def prior_loss(batch_probs, prior: Prior) -> float:
    """KL(p || mean_i s_i), the batch mean standing in for the full-set mean."""
    s = _check_rows(batch_probs, "batch_probs")
    p = _as_prior(prior, s.shape[1])
    mean = np.maximum(s.mean(axis=0), EPS)
    return float((_xlogy(p, p) - _xlogy(p, mean)).sum())


def prior_grad(batch_probs, prior: Prior):
    s = _check_rows(batch_probs, "batch_probs")
    p = _as_prior(prior, s.shape[1])
    mean = s.mean(axis=0)
    row = np.where(mean > EPS, -p / np.maximum(mean, EPS), 0.0)
    return np.broadcast_to(row / len(s), s.shape).copy()


def _as_prior(prior, c):
    p = prior.p if isinstance(prior, Prior) else Prior(prior).p
    if p.shape != (c,):
        raise ContractError(f"prior has {p.shape[0]} classes, probs have {c}")
    return p


def entropy_loss(batch_probs) -> float:
    s = _check_rows(batch_probs, "batch_probs")
    return float(-(s * np.log(np.maximum(s, EPS))).sum() / len(s))


def entropy_grad(batch_probs):
    s = _check_rows(batch_probs, "batch_probs")
    logs = np.log(np.maximum(s, EPS))
    return -np.where(s > EPS, logs + 1.0, logs) / len(s)


# ------------------------------------------------------ combined


def _check_weights(alpha, beta):
    if alpha < 0 or beta < 0:
        raise ConfigError(f"alpha and beta must be non-negative, got {alpha}, {beta}")


def total_loss(labels, batch_probs, prior: Prior, alpha: float, beta: float) -> LossBreakdown:
    _check_weights(alpha, beta)
    l_c = kl_classification_loss(labels, batch_probs)
    l_p = prior_loss(batch_probs, prior)
    l_e = entropy_loss(batch_probs)
    return LossBreakdown(l_c, l_p, l_e, l_c + alpha * l_p + beta * l_e, alpha, beta)


def total_loss_grad(labels, batch_probs, prior: Prior, alpha: float, beta: float):
    _check_weights(alpha, beta)
    g = kl_classification_grad(labels, batch_probs)
    if alpha:
        g = g + alpha * prior_grad(batch_probs, prior)
    if beta:
        g = g + beta * entropy_grad(batch_probs)
    return g
