"""Training objectives with analytic gradients.

Each loss comes in two layers: a score-level function returning the loss and
``dL/ds`` for every score it consumed, and a model-level wrapper that gathers
scores from an :class:`~cprec.model.EmbeddingModel` and chains the score
gradients into row gradients. All losses are sums over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batches import PointwiseBatch, TripleBatch, group_by_k
from .data import InteractionDataset
from .errors import EmptyDataset, InvalidParameter
from .model import EmbeddingModel, Gradients, RowGrad, add_gradients

LOSS_KINDS = ("bpr", "bce", "cpr", "relmf", "ubpr")


def log_sigmoid(x):
    """``ln sigmoid(x)`` without overflow for any finite ``x``."""
    out = -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


# ---------------------------------------------------------------------------
# score-level cores

def pointwise_from_scores(scores, targets):
    """Cross-entropy against (possibly reweighted) targets ``c``:
    ``-sum[c ln s(x) + (1 - c) ln s(-x)]``, gradient ``sigmoid(x) - c``."""
    s = np.asarray(scores, dtype=np.float64)
    c = np.asarray(targets, dtype=np.float64)
    loss = -np.sum(c * log_sigmoid(s) + (1.0 - c) * log_sigmoid(-s))
    return float(loss), sigmoid(s) - c


def pairwise_from_scores(pos, neg, weights=1.0):
    diff = np.asarray(pos, dtype=np.float64) - np.asarray(neg, dtype=np.float64)
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), diff.shape)
    loss = -np.sum(w * log_sigmoid(diff))
    coef = w * sigmoid(-diff)
    return float(loss), -coef, coef


def cpr_margin(pos_scores, neg_scores):
    """``(sum(pos) - sum(neg)) / k`` along the last axis; small means hard."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape:
        raise InvalidParameter(f"positive {pos.shape} and negative {neg.shape} scores differ in shape")
    k = pos.shape[-1]
    if k < 2:
        raise InvalidParameter("CPR needs k >= 2")
    out = (pos.sum(axis=-1) - neg.sum(axis=-1)) / k
    return float(out) if out.ndim == 0 else out


def cpr_from_scores(pos, neg):
    """CPR loss over an ``(n, k)`` block; returns loss, dL/dpos, dL/dneg."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    k = pos.shape[-1]
    margin = cpr_margin(pos, neg)
    loss = -np.sum(log_sigmoid(margin))
    coef = np.broadcast_to((sigmoid(-np.asarray(margin)) / k)[..., None], pos.shape).copy()
    return float(loss), -coef, coef


# ---------------------------------------------------------------------------
# model-level losses

def bce_loss(model: EmbeddingModel, batch: PointwiseBatch):
    s = model.score_pairs(batch.users, batch.items)
    loss, ds = pointwise_from_scores(s, batch.labels)
    return loss, model.backward(batch.users, batch.items, ds)


def _pair_grads(model, users, pos, neg, dpos, dneg):
    return model.backward(np.concatenate([users, users]), np.concatenate([pos, neg]),
                          np.concatenate([dpos, dneg]))


def bpr_loss(model: EmbeddingModel, batch: TripleBatch):
    sp = model.score_pairs(batch.users, batch.pos_items)
    sn = model.score_pairs(batch.users, batch.neg_items)
    loss, dpos, dneg = pairwise_from_scores(sp, sn)
    return loss, _pair_grads(model, batch.users, batch.pos_items, batch.neg_items, dpos, dneg)


def cpr_loss(model: EmbeddingModel, samples):
    """CPR loss over samples of one or several ``k`` values."""
    total = 0.0
    grads = Gradients(RowGrad.empty(model.dim), RowGrad.empty(model.dim))
    for block in group_by_k(samples):
        neg_items = block.neg_items
        sp = model.score_pairs(block.users, block.items)
        sn = model.score_pairs(block.users, neg_items)
        loss, dpos, dneg = cpr_from_scores(sp, sn)
        total += loss
        g = model.backward(np.concatenate([block.users.ravel(), block.users.ravel()]),
                           np.concatenate([block.items.ravel(), neg_items.ravel()]),
                           np.concatenate([dpos.ravel(), dneg.ravel()]))
        grads = add_gradients(grads, g, model.dim)
    return total, grads


# ---------------------------------------------------------------------------
# inverse-propensity baselines

@dataclass
class PropensityTable:
    values: np.ndarray
    eta: float
    clip_floor: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < self.clip_floor) or np.any(self.values > 1):
            raise InvalidParameter("propensities must lie in [clip_floor, 1]")

    def __getitem__(self, i):
        return self.values[i]


def build_propensity(ds: InteractionDataset, eta: float = 0.5, clip_floor: float = 0.01) -> PropensityTable:
    """Item exposure estimate ``max(clip_floor, (d_i / max d) ** eta)``."""
    if eta < 0:
        raise InvalidParameter("eta must be non-negative")
    if not 0 < clip_floor <= 1:
        raise InvalidParameter("clip_floor must lie in (0, 1]")
    deg = ds.item_degrees.astype(np.float64)
    if len(ds) == 0:
        raise EmptyDataset("cannot estimate propensities from an empty dataset")
    theta = (deg / deg.max()) ** eta
    return PropensityTable(np.maximum(clip_floor, theta), eta, clip_floor)


def relmf_loss(model: EmbeddingModel, batch: PointwiseBatch, props: PropensityTable):
    """Pointwise cross-entropy with labels reweighted to ``y / theta_i``.

    The reweighted target exceeds 1 for rare items, so unlike BCE this loss is
    not bounded below by zero.
    """
    s = model.score_pairs(batch.users, batch.items)
    loss, ds = pointwise_from_scores(s, batch.labels / props.values[batch.items])
    return loss, model.backward(batch.users, batch.items, ds)


def ubpr_weights(batch: TripleBatch, props: PropensityTable, neg_labels=None) -> np.ndarray:
    """``max(0, (1/theta_i) * (1 - y_uj / theta_j))``; ``y_uj`` defaults to 0."""
    y = np.zeros(len(batch)) if neg_labels is None else np.asarray(neg_labels, dtype=np.float64)
    w = (1.0 / props.values[batch.pos_items]) * (1.0 - y / props.values[batch.neg_items])
    return np.maximum(w, 0.0)


def ubpr_loss(model: EmbeddingModel, batch: TripleBatch, props: PropensityTable, neg_labels=None):
    sp = model.score_pairs(batch.users, batch.pos_items)
    sn = model.score_pairs(batch.users, batch.neg_items)
    loss, dpos, dneg = pairwise_from_scores(sp, sn, ubpr_weights(batch, props, neg_labels))
    return loss, _pair_grads(model, batch.users, batch.pos_items, batch.neg_items, dpos, dneg)
