"""Cross-entropy and the two domain-separation regularizers, with gradients."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax

from .errors import ContractError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    orth: float
    ss: float
    total: float
    lambda1: float
    lambda2: float


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a column batch of logits (C x batch).

    Returns:
        ``(loss, dlogits)`` with ``dlogits = (softmax - onehot) / batch``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ContractError("logits must be C x batch")
    n_cls, batch = logits.shape
    if batch == 0 or labels.size == 0:
        raise ContractError("empty batch")
    if labels.shape != (batch,):
        raise ContractError(f"labels shape {labels.shape} != ({batch},)")
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ContractError(f"labels must lie in [0, {n_cls})")
    logp = log_softmax(logits, axis=0)
    cols = np.arange(batch)
    loss = -float(np.mean(logp[labels, cols]))
    grad = np.exp(logp)
    grad[labels, cols] -= 1.0
    return loss, grad / batch


def _check_shapes(bs: Sequence[np.ndarray]) -> None:
    if bs and any(b.shape != bs[0].shape for b in bs):
        raise ContractError("all domain B factors must share one shape")


def orth_loss(bs: Sequence[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    """Sum over domains of ``||B_i^T B_i - I_r||_F^2``; grad ``4 B_i (B_i^T B_i - I)``."""
    _check_shapes(bs)
    total = 0.0
    grads = []
    for b in bs:
        resid = b.T @ b - np.eye(b.shape[1], dtype=b.dtype)
        total += float(np.sum(np.square(resid)))
        grads.append(4.0 * (b @ resid))
    return total, grads


def ss_loss(bs: Sequence[np.ndarray],
            counter: Counter | None = None) -> tuple[float, list[np.ndarray]]:
    """Negative pairwise spread ``-(1/sqrt 2) sum_{i<j} ||B_i B_i^T - B_j B_j^T||_F``.

    The norm is not squared, so it is not differentiable where a pair
    coincides exactly; such pairs get a zero gradient and bump
    ``counter["ss_degenerate"]`` when a counter is supplied.
    """
    _check_shapes(bs)
    grads = [np.zeros_like(b) for b in bs]
    if len(bs) < 2:
        return 0.0, grads
    coef = 1.0 / math.sqrt(2.0)
    grams = [b @ b.T for b in bs]
    total = 0.0
    for i in range(len(bs)):
        for j in range(i + 1, len(bs)):
            diff = grams[i] - grams[j]
            norm = float(np.sqrt(np.sum(np.square(diff))))
            total -= coef * norm
            if norm == 0.0:
                if counter is not None:
                    counter["ss_degenerate"] += 1
                log.debug("ss_loss: domains %d and %d coincide; zero gradient", i, j)
                continue
            # d||M||/dB_i = 2 M B_i / ||M||, M symmetric
            scale = -coef * 2.0 / norm
            grads[i] += scale * (diff @ bs[i])
            grads[j] -= scale * (diff @ bs[j])
    return total, grads


def total_loss(ce: float, orth: float, ss: float, lambda1: float,
               lambda2: float) -> LossBreakdown:
    return LossBreakdown(ce=ce, orth=orth, ss=ss,
                         total=ce + lambda1 * orth + lambda2 * ss,
                         lambda1=lambda1, lambda2=lambda2)
