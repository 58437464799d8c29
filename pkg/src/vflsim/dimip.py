"""Mutual-information defense for the protected passive party's representations.

The active party keeps an auxiliary predictor ``g`` mapping the passive
representation ``H`` to class logits. Each round it

1. fits ``g`` by one ascent step on ``L_A = mean log g(y | H)``,
2. trains its own extractor and head on the task loss ``L_C``,
3. draws labels uniformly from the training pool and forms
   ``L_R = mean -log g(y' | H)``,
4. returns ``d/dH [(1 - lam) L_C + lam L_A + lam L_R]`` to the passive party.

Minimizing ``L_A + L_R`` over ``H`` minimizes the sampled contrastive
log-ratio bound ``mean log g(y|H) - log g(y'|H)`` on ``I(H; y)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InputError


@dataclass
class DimipState:
    aux: nn.Network
    lam: float
    rng: np.random.Generator
    aux_lr: float = 0.01
    aux_steps: int = 1
    use_lr_term: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InputError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.aux_steps < 0:
            raise InputError("aux_steps must be >= 0")


@dataclass
class DimipRoundLosses:
    L_C: float
    L_A: float
    L_R: float
    vclub_s: float


def aux_layers(rep_dim: int, n_classes: int, hidden: int = 64) -> list[nn.LayerSpec]:
    """Three dense layers with relu in between."""
    return nn.mlp_layers([rep_dim, hidden, hidden, n_classes])


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels must lie in [0, {n_classes})")


def vclub_s(log_probs, labels, shuffled_labels) -> float:
    """Sampled contrastive log-ratio estimate from per-row log-probabilities.

    Args:
        log_probs: ``(B, C)`` array of ``log q(c | H_i)``.
        labels: true labels ``y_i``.
        shuffled_labels: one label per row drawn from the label pool.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    y = np.asarray(labels)
    ys = np.asarray(shuffled_labels)
    _check_labels(y, lp.shape[1])
    _check_labels(ys, lp.shape[1])
    rows = np.arange(lp.shape[0])
    return float(np.mean(lp[rows, y] - lp[rows, ys]))


def vclub_full(log_probs, labels) -> float:
    """Empirical (non-sampled) contrastive log-ratio bound over all pairings."""
    lp = np.asarray(log_probs, dtype=np.float64)
    y = np.asarray(labels)
    _check_labels(y, lp.shape[1])
    rows = np.arange(lp.shape[0])
    positive = lp[rows, y].mean()
    negative = lp[:, y].mean()
    return float(positive - negative)


def sample_shuffled(labels_pool, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` labels uniformly, with replacement, from the whole pool."""
    pool = np.asarray(labels_pool)
    if pool.size == 0:
        raise InputError("label pool is empty")
    return pool[rng.integers(0, pool.size, size=size)]


def log_likelihood(aux: nn.Network, reps: np.ndarray, labels: np.ndarray) -> float:
    """``L_A``: mean log-probability the predictor gives the true labels."""
    loss, _ = nn.cross_entropy_logits(nn.predict(aux, reps), labels)
    return -loss


def fit_aux_step(state: DimipState, reps: np.ndarray, labels: np.ndarray,
                 lr: float | None = None) -> float:
    """One ascent step on ``L_A`` w.r.t. the predictor only.

    ``reps`` are constants here; nothing flows back to the extractor. Updates
    ``state.aux`` in place and returns ``L_A`` before the step.
    """
    lr = state.aux_lr if lr is None else lr
    trace = nn.forward(state.aux, reps)
    loss, g = nn.cross_entropy_logits(trace.output, labels)
    state.aux = nn.sgd_step(state.aux, nn.backward(state.aux, trace, g), lr)
    return -loss


def boundary_objective(head: nn.Network, h1: np.ndarray, aux: nn.Network, h2: np.ndarray,
                       labels: np.ndarray, shuffled: np.ndarray, lam: float,
                       use_lr_term: bool = True) -> float:
    """Scalar whose gradient w.r.t. ``h2`` is the defended outgoing message.

    Used as the reference for finite-difference checks.
    """
    lc, _ = nn.cross_entropy_logits(nn.predict(head, np.hstack([h1, h2])), labels)
    logits = nn.predict(aux, h2)
    la = -nn.cross_entropy_logits(logits, labels)[0]
    lr_ = nn.cross_entropy_logits(logits, shuffled)[0] if use_lr_term else 0.0
    return (1.0 - lam) * lc + lam * la + lam * lr_


def representation_gradient(state: DimipState, reps: np.ndarray, labels: np.ndarray,
                            shuffled: np.ndarray) -> tuple[np.ndarray, float, float, float]:
    """Gradient of ``L_A + L_R`` w.r.t. ``reps`` under the current predictor.

    Returns ``(grad, L_A, L_R, vclub_s_estimate)``; ``L_R`` is left out of the
    gradient when ``state.use_lr_term`` is false but still reported.
    """
    trace = nn.forward(state.aux, reps)
    ce_true, g_true = nn.cross_entropy_logits(trace.output, labels)
    ce_shuf, g_shuf = nn.cross_entropy_logits(trace.output, shuffled)
    g_logits = -g_true
    if state.use_lr_term:
        g_logits = g_logits + g_shuf
    grad = nn.backward(state.aux, trace, g_logits).input_grad
    return grad, -ce_true, ce_shuf, ce_shuf - ce_true
