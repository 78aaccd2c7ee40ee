"""Implicit-feedback interaction datasets, I/O and the held-out split protocols."""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadFileFormat,
    EmptyDataset,
    GroupCountTooLarge,
    IndexOutOfRange,
    InvalidParameter,
    MalformedLine,
)

SEPARATORS = {"tab": "\t", "comma": ",", "auto": None}


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Deduplicated positive user-item pairs over a dense index space.

    ``user_ids[u]`` / ``item_ids[i]`` give the external id of dense index ``u``
    / ``i``. Datasets produced by splitting share their parent's index space,
    so an item may have degree zero.
    """

    user_ids: tuple
    item_ids: tuple
    users: np.ndarray
    items: np.ndarray
    _keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise ValueError("users and items must be 1-D arrays of equal length")
        if len(users) and (users.min() < 0 or users.max() >= self.n_users):
            raise IndexOutOfRange("user index out of range")
        if len(items) and (items.min() < 0 or items.max() >= self.n_items):
            raise IndexOutOfRange("item index out of range")
        keys = users * self.n_items + items
        uniq, first = np.unique(keys, return_index=True)
        if len(uniq) != len(keys):
            # keep first occurrences, in input order
            order = np.sort(first)
            users, items, keys = users[order], items[order], keys[order]
        users.setflags(write=False)
        items.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        sorted_keys = np.sort(keys)
        sorted_keys.setflags(write=False)
        object.__setattr__(self, "_keys", sorted_keys)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.users)

    @cached_property
    def user_index(self) -> dict:
        return {uid: k for k, uid in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict:
        return {iid: k for k, iid in enumerate(self.item_ids)}

    @cached_property
    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    @cached_property
    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    @cached_property
    def per_user_items(self) -> list:
        order = np.argsort(self.users, kind="stable")
        bounds = np.cumsum(self.user_degrees)[:-1]
        return np.split(self.items[order], bounds)

    @cached_property
    def _keyset(self) -> frozenset:
        return frozenset(self._keys.tolist())

    @property
    def positives(self) -> set:
        return set(zip(self.users.tolist(), self.items.tolist()))

    def is_positive(self, u: int, i: int) -> bool:
        if not (0 <= u < self.n_users and 0 <= i < self.n_items):
            raise IndexOutOfRange(f"pair ({u}, {i}) outside {self.n_users}x{self.n_items}")
        return u * self.n_items + i in self._keyset

    def contains(self, users, items) -> np.ndarray:
        """Vectorised membership test for arrays of pairs."""
        keys = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)
        if len(self._keys) == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys

    def subset(self, mask_or_index) -> "InteractionDataset":
        """Dataset over the same index space holding a subset of the pairs."""
        return InteractionDataset(self.user_ids, self.item_ids,
                                  self.users[mask_or_index], self.items[mask_or_index])

    def with_pairs(self, users, items) -> "InteractionDataset":
        return InteractionDataset(self.user_ids, self.item_ids, users, items)


def is_positive(ds: InteractionDataset, u: int, i: int) -> bool:
    return ds.is_positive(u, i)


def union(*datasets: InteractionDataset) -> InteractionDataset:
    base = datasets[0]
    for ds in datasets[1:]:
        if ds.user_ids != base.user_ids or ds.item_ids != base.item_ids:
            raise ValueError("datasets live in different index spaces")
    return base.with_pairs(np.concatenate([d.users for d in datasets]),
                           np.concatenate([d.items for d in datasets]))


# ---------------------------------------------------------------------------
# text I/O

def _split_line(line: str, sep):
    if sep is None:
        sep = "\t" if "\t" in line else ","
    return [f.strip() for f in line.split(sep)]


def load_interactions(source, format: str = "auto", user_index: dict | None = None,
                      item_index: dict | None = None) -> InteractionDataset:
    """Read ``user<SEP>item[<SEP>ignored...]`` lines.

    ``source`` is a path or an open text stream. ``format`` is ``"tab"``,
    ``"comma"`` or ``"auto"`` (per line: tab if present, else comma). When
    index maps are given, ids are resolved against them (unknown ids are a
    :class:`MalformedLine`), otherwise indices are assigned in first-appearance
    order.
    """
    if format not in SEPARATORS:
        raise InvalidParameter(f"unknown separator format {format!r}")
    sep = SEPARATORS[format]
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return load_interactions(fh, format, user_index, item_index)

    fixed = user_index is not None and item_index is not None
    if fixed:
        uidx, iidx = user_index, item_index
    else:
        uidx, iidx = {}, {}
    users, items = [], []
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = _split_line(line, sep)
        if len(fields) < 2 or not fields[0] or not fields[1]:
            raise MalformedLine(lineno, line)
        u, i = fields[0], fields[1]
        if fixed:
            if u not in uidx or i not in iidx:
                raise MalformedLine(lineno, line, "id missing from index map")
        else:
            uidx.setdefault(u, len(uidx))
            iidx.setdefault(i, len(iidx))
        users.append(uidx[u])
        items.append(iidx[i])
    if not users and not fixed:
        raise EmptyDataset("no interactions found")
    user_ids = tuple(sorted(uidx, key=uidx.get))
    item_ids = tuple(sorted(iidx, key=iidx.get))
    return InteractionDataset(user_ids, item_ids, np.array(users, dtype=np.int64),
                              np.array(items, dtype=np.int64))


def write_interactions(ds: InteractionDataset, dest) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            return write_interactions(ds, fh)
    for u, i in zip(ds.users.tolist(), ds.items.tolist()):
        dest.write(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\n")


def write_index_map(ids: Sequence, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, ext in enumerate(ids):
            fh.write(f"{ext}\t{k}\n")


def read_index_map(path) -> dict:
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise MalformedLine(lineno, line, "index map rows are <external-id> TAB <index>")
            mapping[parts[0]] = int(parts[1])
    if sorted(mapping.values()) != list(range(len(mapping))):
        raise BadFileFormat(f"{path}: indices are not contiguous 0..n-1")
    return mapping


def dataset_from_pairs(pairs: Iterable, n_users: int | None = None,
                       n_items: int | None = None) -> InteractionDataset:
    """Build a dataset directly from integer ``(u, i)`` pairs (ids are the indices)."""
    pairs = list(pairs)
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    n_users = int(arr[:, 0].max()) + 1 if n_users is None else n_users
    n_items = int(arr[:, 1].max()) + 1 if n_items is None else n_items
    return InteractionDataset(tuple(str(u) for u in range(n_users)),
                              tuple(str(i) for i in range(n_items)), arr[:, 0], arr[:, 1])


def from_text(text: str, format: str = "auto") -> InteractionDataset:
    return load_interactions(io.StringIO(text), format)


# ---------------------------------------------------------------------------
# splitting

@dataclass
class SplitConfig:
    ratios: tuple = (0.7, 0.1, 0.2)
    cap_a: float = 1 / 60
    resample_exponent_theta: float | None = None
    resample_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3 or min(self.ratios) <= 0:
            raise InvalidParameter(f"ratios must be three positive fractions, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-12:
            raise InvalidParameter(f"ratios must sum to 1, got {sum(self.ratios)!r}")
        if not self.cap_a > 0:
            raise InvalidParameter("cap_a must be positive")
        if not 0 < self.resample_fraction <= 1:
            raise InvalidParameter("resample_fraction must lie in (0, 1]")


def holdout_weights(ds: InteractionDataset, cap_a: float) -> np.ndarray:
    """Per-pair held-out sampling weight ``min(1/d_i, a)`` with full-data degrees."""
    if not cap_a > 0:
        raise InvalidParameter("cap_a must be positive")
    deg = ds.item_degrees[ds.items].astype(np.float64)
    return np.minimum(1.0 / deg, cap_a)


def _weighted_without_replacement(rng, weights, n):
    p = weights / weights.sum()
    return rng.choice(len(weights), size=n, replace=False, p=p)


def unbiased_split(ds: InteractionDataset, cfg: SplitConfig, rng: np.random.Generator | None = None):
    """Popularity-capped held-out split into (train, valid, test).

    Held-out pairs are drawn without replacement with weight
    ``min(1/d_i, cap_a)`` so that rare and popular items are represented
    roughly equally; the held-out draw is then cut uniformly into valid and
    test at the configured ratio.
    """
    if len(ds) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    _, r_valid, r_test = cfg.ratios
    n = len(ds)
    n_held = int(round((r_valid + r_test) * n))
    held = _weighted_without_replacement(rng, holdout_weights(ds, cfg.cap_a), n_held)
    held = held[rng.permutation(n_held)]
    n_valid = int(round(n_held * r_valid / (r_valid + r_test)))
    mask = np.zeros(n, dtype=np.int8)
    mask[held[:n_valid]] = 1
    mask[held[n_valid:]] = 2
    return ds.subset(mask == 0), ds.subset(mask == 1), ds.subset(mask == 2)


def degree_biased_resample(train: InteractionDataset, theta: float, fraction: float = 0.7,
                           seed: int | np.random.Generator = 0) -> InteractionDataset:
    """Keep ``round(fraction * n)`` pairs drawn with weight ``d_i ** theta``.

    Positive ``theta`` amplifies popularity bias, negative ``theta`` damps it.
    """
    if len(train) == 0:
        raise EmptyDataset("cannot resample an empty dataset")
    if not 0 < fraction <= 1:
        raise InvalidParameter("fraction must lie in (0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    deg = train.item_degrees[train.items].astype(np.float64)
    keep = _weighted_without_replacement(rng, deg ** theta, int(round(fraction * len(train))))
    return train.subset(np.sort(keep))


def core_filter(ds: InteractionDataset, min_count: int = 3) -> InteractionDataset:
    """Iteratively drop users and items with fewer than ``min_count`` positives.

    Dropped ids leave the index space; the survivors are re-indexed in their
    original order.
    """
    users, items = ds.users, ds.items
    while True:
        ud = np.bincount(users, minlength=ds.n_users)
        idg = np.bincount(items, minlength=ds.n_items)
        keep = (ud[users] >= min_count) & (idg[items] >= min_count)
        if keep.all():
            break
        users, items = users[keep], items[keep]
    if len(users) == 0:
        raise EmptyDataset(f"nothing survives {min_count}-core filtering")
    u_keep = np.unique(users)
    i_keep = np.unique(items)
    u_new = np.full(ds.n_users, -1, dtype=np.int64)
    u_new[u_keep] = np.arange(len(u_keep))
    i_new = np.full(ds.n_items, -1, dtype=np.int64)
    i_new[i_keep] = np.arange(len(i_keep))
    return InteractionDataset(tuple(ds.user_ids[u] for u in u_keep),
                              tuple(ds.item_ids[i] for i in i_keep), u_new[users], i_new[items])


def group_items_by_degree(ds_or_degrees, n_groups: int) -> np.ndarray:
    """Assign items to ``n_groups`` groups of roughly equal total degree.

    Items are sorted by ascending degree (ties by index) and a cut is placed
    after the item whose running degree sum first reaches ``g * total / n``.
    Returns the group id of every item.
    """
    degrees = np.asarray(getattr(ds_or_degrees, "item_degrees", ds_or_degrees), dtype=np.int64)
    if n_groups < 1:
        raise InvalidParameter("n_groups must be >= 1")
    if n_groups > len(degrees):
        raise GroupCountTooLarge(f"{n_groups} groups requested for {len(degrees)} items")
    order = np.argsort(degrees, kind="stable")
    csum = np.cumsum(degrees[order])
    total = int(csum[-1]) if len(csum) else 0
    if total == 0:
        return np.zeros(len(degrees), dtype=np.int64)
    # integer comparison csum * n >= g * total avoids float cut drift
    scaled = csum * n_groups
    cuts = np.searchsorted(scaled, np.arange(1, n_groups) * total, side="left")
    groups_sorted = np.searchsorted(cuts, np.arange(len(degrees)), side="left")
    groups = np.empty(len(degrees), dtype=np.int64)
    groups[order] = groups_sorted
    return groups
