"""Losses: graph contrastive loss on the source domain, binary
cross-entropy on the target domain, and their weighted sum."""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import DegenerateInputError, ValidationError
from .numerics import Tensor

PROB_EPS = 1e-12


def cosine_sim(u, v) -> float:
    """``u.v / (|u| |v|)`` for two plain vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateInputError("cosine similarity of a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def similarity_matrix(view1, view2) -> Tensor:
    """``S[n, m] = sim(view1[n], view2[m])``."""
    view1, view2 = nm.as_tensor(view1), nm.as_tensor(view2)
    for v in (view1, view2):
        if (np.linalg.norm(v.data, axis=-1) == 0).any():
            raise DegenerateInputError("contrastive batch contains a zero embedding")
    return nm.cosine_similarity_matrix(view1, view2)


def contrastive_loss(view1, view2, tau: float, include_positive: bool = False) -> Tensor:
    """Mean over subjects of ``-log(exp(s_nn/tau) / sum_{m != n} exp(s_nm/tau))``.

    Rows of ``view1``/``view2`` are the two window embeddings of the same
    subjects. The denominator skips the positive pair, so the loss can go
    below zero; ``include_positive`` gives the usual InfoNCE form.
    """
    view1, view2 = nm.as_tensor(view1), nm.as_tensor(view2)
    if view1.shape != view2.shape or view1.ndim != 2:
        raise ValidationError(f"views must be matching [N, D] arrays, got {view1.shape} and {view2.shape}")
    n = view1.shape[0]
    if n < 2:
        raise ValidationError("contrastive loss needs at least two subjects per batch")
    if not tau > 0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    scaled = nm.mul(similarity_matrix(view1, view2), 1.0 / tau)
    positive = nm.tsum(nm.mul(scaled, np.eye(n)), axis=1)
    weights = np.ones((n, n)) if include_positive else 1.0 - np.eye(n)
    return nm.mean(nm.sub(nm.logsumexp(scaled, axis=1, weights=weights), positive))


def cross_entropy(prob: float, label: int) -> float:
    """Binary cross-entropy with the probability clamped to ``[eps, 1-eps]``."""
    p = min(max(float(prob), PROB_EPS), 1.0 - PROB_EPS)
    return float(-(label * np.log(p) + (1 - label) * np.log1p(-p)))


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 labels.

    Works on logits so the log never sees a rounded-off probability.
    """
    logits = nm.as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64).reshape(logits.shape)
    per = nm.add(nm.mul(nm.log_sigmoid(logits), y), nm.mul(nm.log_sigmoid(nm.neg(logits)), 1.0 - y))
    return nm.neg(nm.mean(per))


def meta_loss(source_loss, target_loss, lam: float):
    """``L_S + lam * L_T``."""
    return source_loss + lam * target_loss
