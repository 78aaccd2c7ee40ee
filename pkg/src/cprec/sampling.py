"""Sample construction for CPR (random and dynamic) and for the baselines."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .batches import CprBatch, CprSample, PointwiseBatch, TripleBatch
from .data import InteractionDataset
from .errors import ExhaustedRetries, InvalidParameter
from .losses import cpr_margin

log = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    batch_size: int = 1024
    beta: float = 1.0
    gamma: float = 2.0
    k_values: tuple = (2, 3)
    k_mix_ratio: tuple = (3.0, 1.0)
    max_retries: int = 100

    def __post_init__(self):
        self.k_values = tuple(int(k) for k in self.k_values)
        self.k_mix_ratio = tuple(float(r) for r in self.k_mix_ratio)
        if self.batch_size < 1:
            raise InvalidParameter("batch_size must be >= 1")
        if self.beta < 1:
            raise InvalidParameter("beta (dynamic sampling rate) must be >= 1")
        if not self.gamma > 1:
            raise InvalidParameter("gamma (choosing rate) must be > 1")
        if not self.k_values or min(self.k_values) < 2:
            raise InvalidParameter("k_values must be a non-empty list of ints >= 2")
        if len(self.k_mix_ratio) != len(self.k_values) or min(self.k_mix_ratio) <= 0:
            raise InvalidParameter("k_mix_ratio needs one positive weight per k value")
        if self.max_retries < 1:
            raise InvalidParameter("max_retries must be >= 1")

    @property
    def pool_size(self) -> int:
        """Valid candidates kept before hardness selection (``b * beta``)."""
        return max(self.batch_size, int(round(self.batch_size * self.beta)))

    @property
    def draw_size(self) -> int:
        """Raw candidates drawn per batch (``b * beta * gamma``)."""
        return max(self.pool_size, int(round(self.batch_size * self.beta * self.gamma)))

    @property
    def mean_k(self) -> float:
        w = np.asarray(self.k_mix_ratio)
        return float(np.dot(self.k_values, w) / w.sum())

    def choose_k(self, rng: np.random.Generator) -> int:
        w = np.asarray(self.k_mix_ratio)
        return int(self.k_values[rng.choice(len(w), p=w / w.sum())])


@dataclass
class SamplerStats:
    batches: int = 0
    shortfalls: int = 0
    candidates_drawn: int = 0
    candidates_valid: int = 0


def draw_candidates(ds: InteractionDataset, k: int, n: int, rng: np.random.Generator):
    """``n`` candidates of ``k`` positive pairs drawn uniformly with replacement."""
    if len(ds) == 0:
        raise InvalidParameter("cannot draw from an empty dataset")
    idx = rng.integers(0, len(ds), size=(n, k))
    return ds.users[idx], ds.items[idx]


def _distinct_rows(a: np.ndarray) -> np.ndarray:
    s = np.sort(a, axis=1)
    return np.all(s[:, 1:] != s[:, :-1], axis=1)


def valid_mask(ds: InteractionDataset, users: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Row-wise :func:`cross_negatives_ok` for ``(n, k)`` candidate arrays."""
    crossed = ds.contains(users, np.roll(items, -1, axis=1))
    return _distinct_rows(users) & _distinct_rows(items) & ~crossed.any(axis=1)


def cross_negatives_ok(ds: InteractionDataset, users, items) -> bool:
    """True iff users and items are pairwise distinct and every cyclic crossing
    ``(users[t], items[t+1 mod k])`` is a negative pair."""
    users = list(users)
    items = list(items)
    if len(users) != len(items):
        raise InvalidParameter("users and items must have equal length")
    if len(set(users)) != len(users) or len(set(items)) != len(items):
        return False
    k = len(users)
    return not any(ds.is_positive(users[t], items[(t + 1) % k]) for t in range(k))


def sample_random_cpr(ds: InteractionDataset, k: int, count: int, rng: np.random.Generator,
                      max_retries: int = 100) -> CprBatch:
    """Rejection-sample ``count`` CPR samples uniformly over the valid ones."""
    if k < 2:
        raise InvalidParameter("k must be >= 2")
    if np.count_nonzero(ds.user_degrees) < k:
        raise ExhaustedRetries(f"fewer than {k} users have positives")
    got_u, got_i = [], []
    accepted = rejected = 0
    limit = max_retries * count
    while accepted < count:
        chunk = max(64, 2 * (count - accepted))
        users, items = draw_candidates(ds, k, chunk, rng)
        ok = valid_mask(ds, users, items)
        # account in draw order so the rejection budget is exact
        pos_ok = np.flatnonzero(ok)
        need = count - accepted
        if len(pos_ok) >= need:
            last = pos_ok[need - 1]
            take = pos_ok[:need]
            rejected += (last + 1) - need
        else:
            take = pos_ok
            rejected += chunk - len(pos_ok)
        if rejected >= limit and len(take) < need:
            raise ExhaustedRetries(f"{rejected} rejections while collecting {count} k={k} samples")
        got_u.append(users[take])
        got_i.append(items[take])
        accepted += len(take)
    return CprBatch(np.concatenate(got_u), np.concatenate(got_i))


def sample_margins(model, users: np.ndarray, items: np.ndarray) -> np.ndarray:
    """CPR margins of ``(n, k)`` candidates.

    Scores are summed in sorted order so that rotations of one cycle (and
    repeated draws of it) get bitwise-equal margins and fall back to the
    draw-order tie rule.
    """
    pos = np.sort(model.score_pairs(users, items), axis=1)
    neg = np.sort(model.score_pairs(users, np.roll(items, -1, axis=1)), axis=1)
    return cpr_margin(pos, neg)


def dynamic_sample_batch(ds: InteractionDataset, model, cfg: SamplerConfig, k: int,
                         rng: np.random.Generator, stats: SamplerStats | None = None) -> CprBatch:
    """One batch of hard CPR samples.

    Draw ``b*beta*gamma`` candidates, keep the first ``b*beta`` valid ones in
    draw order, and return the ``b`` with the smallest margin, ascending
    (ties by draw order). With ``beta == 1`` this is plain random sampling.
    If too few candidates survive, all survivors are returned.
    """
    users, items = draw_candidates(ds, k, cfg.draw_size, rng)
    ok = np.flatnonzero(valid_mask(ds, users, items))[: cfg.pool_size]
    users, items = users[ok], items[ok]
    if stats is not None:
        stats.batches += 1
        stats.candidates_drawn += cfg.draw_size
        stats.candidates_valid += len(ok)
    if len(ok) < cfg.batch_size:
        if stats is not None:
            stats.shortfalls += 1
        log.warning("dynamic sampling shortfall: %d of %d valid k=%d samples", len(ok), cfg.batch_size, k)
    if cfg.pool_size > cfg.batch_size and len(ok):
        margins = sample_margins(model, users, items)
        order = np.argsort(margins, kind="stable")[: cfg.batch_size]
        users, items = users[order], items[order]
    else:
        users, items = users[: cfg.batch_size], items[: cfg.batch_size]
    return CprBatch(users, items)


def _negatives_for(ds: InteractionDataset, users: np.ndarray, rng: np.random.Generator,
                   max_retries: int) -> np.ndarray:
    full = ds.user_degrees[users] >= ds.n_items
    if full.any():
        raise ExhaustedRetries(f"user {int(users[full][0])} has no negative items")
    neg = rng.integers(0, ds.n_items, size=len(users))
    bad = np.flatnonzero(ds.contains(users, neg))
    rounds = 0
    while len(bad):
        rounds += 1
        if rounds > max_retries:
            raise ExhaustedRetries("negative sampling did not converge")
        neg[bad] = rng.integers(0, ds.n_items, size=len(bad))
        bad = bad[ds.contains(users[bad], neg[bad])]
    return neg


def sample_bpr_triples(ds: InteractionDataset, count: int, rng: np.random.Generator,
                       max_retries: int = 1000) -> TripleBatch:
    """Uniform positive pair plus a uniformly drawn non-interacted item."""
    if len(ds) == 0:
        raise InvalidParameter("cannot sample from an empty dataset")
    idx = rng.integers(0, len(ds), size=count)
    users, pos = ds.users[idx], ds.items[idx]
    return TripleBatch(users, pos, _negatives_for(ds, users, rng, max_retries))


def sample_pointwise(ds: InteractionDataset, count: int, rng: np.random.Generator,
                     neg_ratio: int = 1, max_retries: int = 1000) -> PointwiseBatch:
    """``count`` positives plus ``neg_ratio`` uniform negatives per positive (same user)."""
    if len(ds) == 0:
        raise InvalidParameter("cannot sample from an empty dataset")
    idx = rng.integers(0, len(ds), size=count)
    users, pos = ds.users[idx], ds.items[idx]
    neg_users = np.repeat(users, neg_ratio)
    neg = _negatives_for(ds, neg_users, rng, max_retries)
    return PointwiseBatch(np.concatenate([users, neg_users]), np.concatenate([pos, neg]),
                          np.concatenate([np.ones(count), np.zeros(len(neg))]))


__all__ = [
    "CprSample", "CprBatch", "SamplerConfig", "SamplerStats", "draw_candidates", "valid_mask",
    "cross_negatives_ok", "sample_random_cpr", "sample_margins", "dynamic_sample_batch", "sample_bpr_triples",
    "sample_pointwise",
]
