"""Matrix-factorisation scorer, row-sparse Adam and L2 regularisation."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadFileFormat, IndexOutOfRange, InvalidParameter

CKPT_MAGIC = b"CPRM"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIII")


@dataclass
class RowGrad:
    """Gradient restricted to a set of unique rows of a 2-D parameter."""

    rows: np.ndarray
    values: np.ndarray

    @classmethod
    def accumulate(cls, rows, contributions, dim: int) -> "RowGrad":
        rows = np.asarray(rows, dtype=np.int64)
        uniq, inv = np.unique(rows, return_inverse=True)
        values = np.zeros((len(uniq), dim), dtype=np.float64)
        np.add.at(values, inv, contributions)
        return cls(uniq, values)

    @classmethod
    def empty(cls, dim: int) -> "RowGrad":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, dim)))

    def to_dense(self, n_rows: int) -> np.ndarray:
        out = np.zeros((n_rows, self.values.shape[1]))
        out[self.rows] = self.values
        return out


@dataclass
class Gradients:
    user: RowGrad
    item: RowGrad

    def as_list(self) -> list:
        return [self.user, self.item]


@dataclass
class EmbeddingModel:
    """Inner-product scorer ``s(u, i) = <user_factors[u], item_factors[i]>``."""

    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self):
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise InvalidParameter("factor matrices must be 2-D")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise InvalidParameter("user and item factors disagree on dimension")

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def params(self) -> list:
        return [self.user_factors, self.item_factors]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.user_factors.copy(), self.item_factors.copy())

    def _check(self, users, items):
        users = np.asarray(users)
        items = np.asarray(items)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise IndexOutOfRange("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise IndexOutOfRange("item index out of range")

    def score(self, u: int, i: int) -> float:
        self._check(u, i)
        return float(np.dot(self.user_factors[u].astype(np.float64),
                            self.item_factors[i].astype(np.float64)))

    def score_pairs(self, users, items) -> np.ndarray:
        """Scores of aligned index arrays of any (matching) shape, in float64."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check(users, items)
        uf = self.user_factors[users].astype(np.float64)
        vf = self.item_factors[items].astype(np.float64)
        return np.einsum("...d,...d->...", uf, vf)

    def score_users(self, users) -> np.ndarray:
        """Full score rows for a block of users, float64, BLAS-free for reproducibility."""
        uf = self.user_factors[np.asarray(users, dtype=np.int64)].astype(np.float64)
        return np.einsum("ud,id->ui", uf, self.item_factors.astype(np.float64))

    def score_all_items(self, u: int, exclusions=()) -> np.ndarray:
        """Scores for every item; excluded items are set to ``-inf`` (not rankable)."""
        self._check(u, [])
        row = self.score_users([u])[0]
        excl = np.asarray(exclusions if isinstance(exclusions, np.ndarray) else list(exclusions), dtype=np.int64)
        row[excl] = -np.inf
        return row

    def backward(self, users, items, dscores) -> Gradients:
        """Chain per-pair score gradients ``dL/ds`` into row gradients."""
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        d = np.asarray(dscores, dtype=np.float64).ravel()[:, None]
        uf = self.user_factors[users].astype(np.float64)
        vf = self.item_factors[items].astype(np.float64)
        return Gradients(RowGrad.accumulate(users, d * vf, self.dim),
                         RowGrad.accumulate(items, d * uf, self.dim))


def init_model(n_users: int, n_items: int, d: int = 128, init_scale: float = 0.01,
               seed: int | np.random.Generator = 0, dtype=np.float32) -> EmbeddingModel:
    if n_users < 1 or n_items < 1 or d < 1:
        raise InvalidParameter("model dimensions must be >= 1")
    if not init_scale > 0:
        raise InvalidParameter("init_scale must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    uf = rng.normal(0.0, init_scale, size=(n_users, d)).astype(dtype)
    vf = rng.normal(0.0, init_scale, size=(n_items, d)).astype(dtype)
    return EmbeddingModel(uf, vf)


def score(model: EmbeddingModel, u: int, i: int) -> float:
    return model.score(u, i)


def score_all_items(model: EmbeddingModel, u: int, exclusions=()) -> np.ndarray:
    return model.score_all_items(u, exclusions)


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params], **hyper)


def _as_rows(arr: np.ndarray) -> np.ndarray:
    return arr.reshape(arr.shape[0] if arr.ndim else 1, -1)


def adam_step(params: Sequence[np.ndarray], grads: Sequence, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied in place.

    ``grads`` holds a :class:`RowGrad` or a dense array per parameter. Only
    rows with a nonzero gradient are touched: their moments decay and their
    values move, every other row (moments included) is left bit-for-bit alone.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidParameter("params, grads and state disagree in length")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise InvalidParameter(f"moment shape {m.shape} does not match parameter {p.shape}")
        p2, m2, v2 = _as_rows(p), _as_rows(m), _as_rows(v)
        if isinstance(g, RowGrad):
            rows, gv = g.rows, np.asarray(g.values, dtype=np.float64)
            if gv.shape != (len(rows), p2.shape[1]):
                raise InvalidParameter(f"row gradient shape {gv.shape} does not fit parameter {p.shape}")
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise InvalidParameter(f"gradient shape {g.shape} does not match parameter {p.shape}")
            g2 = _as_rows(g)
            rows = np.arange(len(g2))
            gv = g2
        live = np.any(gv != 0, axis=1)
        rows, gv = rows[live], gv[live]
        if len(rows) == 0:
            continue
        m_new = state.beta1 * m2[rows] + (1 - state.beta1) * gv
        v_new = state.beta2 * v2[rows] + (1 - state.beta2) * gv * gv
        m2[rows] = m_new
        v2[rows] = v_new
        step = state.lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + state.epsilon)
        p2[rows] = (p2[rows].astype(np.float64) - step).astype(p.dtype)
    return state


def l2_penalty_and_grads(model: EmbeddingModel, user_rows, item_rows, lam: float):
    """``lam * sum ||row||^2`` over the distinct touched rows, and its gradient."""
    if lam < 0:
        raise InvalidParameter("lambda must be non-negative")
    ur = np.unique(np.asarray(user_rows, dtype=np.int64))
    ir = np.unique(np.asarray(item_rows, dtype=np.int64))
    uf = model.user_factors[ur].astype(np.float64)
    vf = model.item_factors[ir].astype(np.float64)
    penalty = lam * (float(np.sum(uf * uf)) + float(np.sum(vf * vf)))
    return penalty, Gradients(RowGrad(ur, 2 * lam * uf), RowGrad(ir, 2 * lam * vf))


def add_gradients(a: Gradients, b: Gradients, dim: int) -> Gradients:
    def merge(x: RowGrad, y: RowGrad) -> RowGrad:
        return RowGrad.accumulate(np.concatenate([x.rows, y.rows]),
                                  np.concatenate([x.values, y.values]), dim)
    return Gradients(merge(a.user, b.user), merge(a.item, b.item))


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Write factors as little-endian float32 (float64 models are rounded)."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, model.n_users, model.n_items, model.dim))
        fh.write(np.ascontiguousarray(model.user_factors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.item_factors, dtype="<f4").tobytes())


def load_checkpoint(path) -> EmbeddingModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CKPT_HEADER.size:
        raise BadFileFormat(f"{os.fspath(path)}: truncated checkpoint")
    magic, version, nu, ni, d = _CKPT_HEADER.unpack_from(blob)
    if magic != CKPT_MAGIC:
        raise BadFileFormat(f"{os.fspath(path)}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise BadFileFormat(f"{os.fspath(path)}: unsupported checkpoint version {version}")
    expected = _CKPT_HEADER.size + 4 * d * (nu + ni)
    if len(blob) != expected:
        raise BadFileFormat(f"{os.fspath(path)}: expected {expected} bytes, got {len(blob)}")
    uf = np.frombuffer(blob, "<f4", nu * d, _CKPT_HEADER.size).reshape(nu, d).astype(np.float32)
    vf = np.frombuffer(blob, "<f4", ni * d, _CKPT_HEADER.size + 4 * nu * d).reshape(ni, d).astype(np.float32)
    return EmbeddingModel(uf, vf)
