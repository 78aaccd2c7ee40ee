"""Top-K evaluation: Recall, NDCG, ARP, degree-group distribution, rank correlation."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import InteractionDataset, group_items_by_degree, union
from .errors import InvalidParameter

# users scored per block; fixed so results never depend on the worker count
BLOCK_USERS = 256


@dataclass
class MetricsReport:
    K: int
    n_evaluated_users: int
    recall_at_k: float | None
    ndcg_at_k: float | None
    arp_at_k: float | None
    group_distribution: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return self.n_evaluated_users > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        extras = d.pop("extras")
        d.update(extras)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def top_k(model, u: int, K: int, exclusions=()) -> np.ndarray:
    """``K`` best non-excluded items by descending score, ties by ascending index."""
    return _rank_rows(model.score_all_items(u, exclusions)[None, :], K)[0]


def _rank_rows(scores: np.ndarray, K: int) -> list:
    order = np.argsort(-scores, axis=1, kind="stable")[:, :K]
    out = []
    for row, idx in zip(scores, order):
        n_ok = int(np.count_nonzero(np.isfinite(row[idx])))
        out.append(idx[:n_ok])
    return out


def recall_at_k(recommended, test_positives) -> float | None:
    """Hit fraction of the user's test positives; ``None`` when there are none."""
    truth = set(np.asarray(test_positives).tolist())
    if not truth:
        return None
    hits = len(truth.intersection(np.asarray(recommended).tolist()))
    return hits / len(truth)


def ndcg_at_k(recommended, test_positives, K: int | None = None) -> float | None:
    truth = set(np.asarray(test_positives).tolist())
    if not truth:
        return None
    rec = np.asarray(recommended).tolist()
    K = len(rec) if K is None else K
    dcg = sum(1.0 / math.log2(r + 2) for r, item in enumerate(rec[:K]) if item in truth)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(K, len(truth))))
    return dcg / idcg if idcg > 0 else 0.0


def arp_at_k(recommended_per_user, train_item_degrees) -> float | None:
    """Mean over users of the mean training degree of their recommended items."""
    deg = np.asarray(train_item_degrees, dtype=np.float64)
    per_user = [deg[np.asarray(r, dtype=np.int64)].mean() for r in recommended_per_user if len(r)]
    return float(np.mean(per_user)) if per_user else None


def recommendation_distribution(recommended_per_user, groups, n_groups: int | None = None) -> np.ndarray:
    """Fraction of all recommended slots that fall in each item group."""
    groups = np.asarray(groups, dtype=np.int64)
    n_groups = int(groups.max()) + 1 if n_groups is None else n_groups
    recs = [np.asarray(r, dtype=np.int64) for r in recommended_per_user if len(r)]
    if not recs:
        return np.zeros(n_groups)
    counts = np.bincount(groups[np.concatenate(recs)], minlength=n_groups).astype(np.float64)
    return counts / counts.sum()


def degree_share(degrees, groups, n_groups: int) -> np.ndarray:
    """Fraction of total degree held by each group."""
    degrees = np.asarray(degrees, dtype=np.float64)
    tot = np.bincount(np.asarray(groups), weights=degrees, minlength=n_groups)
    s = tot.sum()
    return tot / s if s > 0 else tot


def kendall_tau(ranking_a, ranking_b) -> float:
    """``(concordant - discordant) / C(n, 2)`` between two orderings of one item set."""
    a = np.asarray(ranking_a, dtype=np.int64)
    b = np.asarray(ranking_b, dtype=np.int64)
    if len(a) != len(b) or set(a.tolist()) != set(b.tolist()) or len(set(a.tolist())) != len(a):
        raise InvalidParameter("rankings must be permutations of the same item set")
    n = len(a)
    if n < 2:
        return 1.0
    # position of each item in b, read in a's order
    pos_b = {item: r for r, item in enumerate(b.tolist())}
    x = np.array([pos_b[item] for item in a.tolist()])
    iu, ju = np.triu_indices(n, 1)
    s = np.sign(x[ju] - x[iu])
    return float(s.sum() / (n * (n - 1) / 2))


def _exclusion_lists(exclude, n_users: int) -> list:
    if exclude is None:
        return [np.zeros(0, dtype=np.int64)] * n_users
    if isinstance(exclude, InteractionDataset):
        return exclude.per_user_items
    if isinstance(exclude, (list, tuple)) and exclude and isinstance(exclude[0], InteractionDataset):
        return union(*exclude).per_user_items
    return [np.asarray(e, dtype=np.int64) for e in exclude]


def recommend(model, users, K: int, exclude=None, threads: int = 1) -> list:
    """Top-K lists for ``users``; scoring runs in fixed-size blocks so output is
    identical for any ``threads``."""
    users = np.asarray(users, dtype=np.int64)
    excl = _exclusion_lists(exclude, model.n_users)
    blocks = [users[s:s + BLOCK_USERS] for s in range(0, len(users), BLOCK_USERS)]

    def run(block):
        scores = model.score_users(block)
        for row, u in enumerate(block):
            scores[row, excl[u]] = -np.inf
        return _rank_rows(scores, K)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return [r for part in parts for r in part]


def evaluate(model, test: InteractionDataset, exclude=None, K: int = 20,
             train_degrees=None, n_groups: int = 4, threads: int = 1) -> MetricsReport:
    """Average Recall/NDCG/ARP over users with at least one test positive.

    ``exclude`` (datasets or per-user item lists) removes already-seen items
    from each user's candidates; ``train_degrees`` feeds ARP and the degree
    groups and defaults to the degrees of the excluded data.
    """
    truth = test.per_user_items
    users = np.flatnonzero(test.user_degrees > 0)
    if train_degrees is None:
        if isinstance(exclude, InteractionDataset):
            train_degrees = exclude.item_degrees
        elif isinstance(exclude, (list, tuple)) and exclude and isinstance(exclude[0], InteractionDataset):
            train_degrees = exclude[0].item_degrees
        else:
            train_degrees = np.zeros(test.n_items, dtype=np.int64)
    train_degrees = np.asarray(train_degrees)
    if len(users) == 0:
        return MetricsReport(K, 0, None, None, None, [])
    recs = recommend(model, users, K, exclude, threads)
    recalls = [recall_at_k(r, truth[u]) for r, u in zip(recs, users)]
    ndcgs = [ndcg_at_k(r, truth[u], K) for r, u in zip(recs, users)]
    n_groups = min(n_groups, test.n_items)
    groups = group_items_by_degree(train_degrees, n_groups)
    dist = recommendation_distribution(recs, groups, n_groups)
    return MetricsReport(
        K=K,
        n_evaluated_users=int(len(users)),
        recall_at_k=float(np.mean(recalls)),
        ndcg_at_k=float(np.mean(ndcgs)),
        arp_at_k=arp_at_k(recs, train_degrees),
        group_distribution=[float(x) for x in dist],
    )


def distribution_table(recs, train_degrees, test_degrees, n_groups: int = 4) -> list:
    """Rows ``(group, frac_train_degrees, frac_test, frac_recommended)``."""
    groups = group_items_by_degree(train_degrees, n_groups)
    tr = degree_share(train_degrees, groups, n_groups)
    te = degree_share(test_degrees, groups, n_groups)
    rc = recommendation_distribution(recs, groups, n_groups)
    return [(g, float(tr[g]), float(te[g]), float(rc[g])) for g in range(n_groups)]


def truth_agreement(model, world, K: int = 20, users=None, world_users=None, world_items=None) -> dict:
    """Mean top-K overlap and Kendall tau between model and true-relevance rankings.

    No items are excluded. ``world_users`` / ``world_items`` give the world
    index of every model row / column when the two index spaces differ (e.g.
    a model trained on a split that dropped never-seen ids); rankings then
    cover only the items the model knows.
    """
    wu = np.arange(world.n_users) if world_users is None else np.asarray(world_users, dtype=np.int64)
    wi = np.arange(world.n_items) if world_items is None else np.asarray(world_items, dtype=np.int64)
    if len(wu) != model.n_users or len(wi) != model.n_items:
        raise InvalidParameter("world index maps must cover every model user and item")
    users = np.arange(model.n_users) if users is None else np.asarray(users)
    overlaps, taus = [], []
    for start in range(0, len(users), BLOCK_USERS):
        block = users[start:start + BLOCK_USERS]
        scores = model.score_users(block)
        for row, u in zip(scores, block):
            pred = np.argsort(-row, kind="stable")
            true = np.argsort(-world.relevance[wu[u], wi], kind="stable")
            overlaps.append(len(set(pred[:K].tolist()) & set(true[:K].tolist())) / K)
            taus.append(_tau_fast(pred, true))
    return {"truth_overlap_at_k": float(np.mean(overlaps)), "kendall_tau": float(np.mean(taus))}


def _tau_fast(a: np.ndarray, b: np.ndarray) -> float:
    n = len(a)
    pos_b = np.empty(n, dtype=np.int64)
    pos_b[b] = np.arange(n)
    x = pos_b[a]
    iu, ju = np.triu_indices(n, 1)
    return float(np.sign(x[ju] - x[iu]).sum() / (n * (n - 1) / 2))
