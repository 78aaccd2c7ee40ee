"""Training sample containers shared by the samplers and the losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter


@dataclass
class PointwiseBatch:
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if not (self.users.shape == self.items.shape == self.labels.shape):
            raise InvalidParameter("pointwise batch arrays must align")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise InvalidParameter("labels must be binary")

    def __len__(self):
        return len(self.users)


@dataclass
class TripleBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.pos_items = np.asarray(self.pos_items, dtype=np.int64)
        self.neg_items = np.asarray(self.neg_items, dtype=np.int64)
        if not (self.users.shape == self.pos_items.shape == self.neg_items.shape):
            raise InvalidParameter("triple batch arrays must align")

    def __len__(self):
        return len(self.users)


@dataclass(frozen=True)
class CprSample:
    """``k`` positive pairs ``(users[t], items[t])`` whose cyclic crossings
    ``(users[t], items[t+1 mod k])`` are all negative."""

    users: tuple
    items: tuple

    def __post_init__(self):
        if len(self.users) != len(self.items) or len(self.users) < 2:
            raise InvalidParameter("a CPR sample needs k >= 2 aligned users and items")

    @property
    def k(self) -> int:
        return len(self.users)


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    if a.ndim != 2:
        if a.size:
            raise InvalidParameter("CPR batch arrays must be (n, k)")
        a = a.reshape(0, 0)
    return a


@dataclass
class CprBatch:
    """Same-``k`` CPR samples stored as two ``(n, k)`` index arrays."""

    users: np.ndarray
    items: np.ndarray

    def __post_init__(self):
        self.users = _as_2d(self.users)
        self.items = _as_2d(self.items)
        if self.users.shape != self.items.shape:
            raise InvalidParameter("CPR batch arrays must align")

    @property
    def k(self) -> int:
        return self.users.shape[1]

    @property
    def neg_items(self) -> np.ndarray:
        """Item crossed with each user: ``items[:, (t + 1) % k]``."""
        return np.roll(self.items, -1, axis=1)

    def __len__(self):
        return self.users.shape[0]

    def __getitem__(self, j) -> CprSample:
        return CprSample(tuple(self.users[j].tolist()), tuple(self.items[j].tolist()))

    def __iter__(self):
        return (self[j] for j in range(len(self)))

    @classmethod
    def from_samples(cls, samples) -> "CprBatch":
        samples = list(samples)
        return cls(np.array([s.users for s in samples], dtype=np.int64),
                   np.array([s.items for s in samples], dtype=np.int64))


def group_by_k(samples) -> list:
    """Split a mixed-``k`` collection into same-``k`` :class:`CprBatch` objects."""
    if isinstance(samples, CprBatch):
        return [samples] if len(samples) else []
    by_k: dict = {}
    for s in samples:
        if isinstance(s, CprBatch):
            if len(s):
                by_k.setdefault(s.k, []).append(s)
        else:
            by_k.setdefault(s.k, []).append(CprBatch.from_samples([s]))
    out = []
    for k in sorted(by_k):
        parts = by_k[k]
        out.append(CprBatch(np.concatenate([p.users for p in parts]),
                            np.concatenate([p.items for p in parts])))
    return out
