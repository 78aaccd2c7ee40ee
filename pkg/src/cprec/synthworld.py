"""Synthetic ground-truth worlds with a factorised exposure mechanism.

An interaction happens when the user both likes and sees an item::

    P(Y=1) = P(R=1) * min(1, p_u * p_i * P(R=1) ** alpha)

Relevance comes from a logistic low-rank model; item propensities follow a
Zipf-shaped profile so that a few items get most of the exposure.
"""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from .data import InteractionDataset
from .errors import AllEmpty, BadFileFormat, IndexOutOfRange, InvalidParameter

log = logging.getLogger(__name__)

WORLD_MAGIC = b"CPRW"
WORLD_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    relevance: np.ndarray
    user_propensity: np.ndarray
    item_propensity: np.ndarray
    alpha: float
    latent_rank: int
    seed: int

    def __post_init__(self):
        rel = np.array(self.relevance, dtype=np.float64)
        pu = np.array(self.user_propensity, dtype=np.float64)
        pi = np.array(self.item_propensity, dtype=np.float64)
        if rel.ndim != 2 or pu.shape != (rel.shape[0],) or pi.shape != (rel.shape[1],):
            raise InvalidParameter("relevance must be n_users x n_items with matching propensity vectors")
        if not (np.all(rel > 0) and np.all(rel < 1)):
            raise InvalidParameter("relevance entries must lie strictly inside (0, 1)")
        for name, p in (("user", pu), ("item", pi)):
            if not (np.all(p > 0) and np.all(p <= 1)):
                raise InvalidParameter(f"{name} propensities must lie in (0, 1]")
        if not self.alpha >= 0:
            raise InvalidParameter("alpha must be non-negative")
        for name, arr in (("relevance", rel), ("user_propensity", pu), ("item_propensity", pi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def n_users(self) -> int:
        return self.relevance.shape[0]

    @property
    def n_items(self) -> int:
        return self.relevance.shape[1]

    @property
    def true_scores(self) -> np.ndarray:
        """Log relevance, the score an unbiased model should rank by."""
        return np.log(self.relevance)


def zipf_profile(n: int, exponent: float, top: float = 0.5) -> np.ndarray:
    """``top * rank ** -exponent`` for ranks 1..n."""
    return top * np.arange(1, n + 1, dtype=np.float64) ** (-float(exponent))


def generate_world(n_users: int, n_items: int, latent_rank: int = 16, propensity_skew: float = 1.0,
                   alpha: float = 0.5, seed: int = 0, max_item_propensity: float = 0.5,
                   user_propensity_range: tuple = (0.2, 0.8)) -> SyntheticWorld:
    """Random world with logistic low-rank relevance and Zipf item propensities.

    The most exposed item gets ``max_item_propensity``; user propensities are
    uniform on ``user_propensity_range``. Item popularity ranks are a random
    permutation, independent of the relevance factors.
    """
    if n_users < 1 or n_items < 1 or latent_rank < 1:
        raise InvalidParameter("n_users, n_items and latent_rank must all be >= 1")
    lo, hi = user_propensity_range
    if not (0 < lo <= hi <= 1 and 0 < max_item_propensity <= 1):
        raise InvalidParameter("propensity scales must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    # variance 1/sqrt(r) per factor gives unit-variance logits
    std = latent_rank ** -0.25
    z = rng.normal(0.0, std, size=(n_users, latent_rank))
    w = rng.normal(0.0, std, size=(n_items, latent_rank))
    logits = z @ w.T
    relevance = 1.0 / (1.0 + np.exp(-logits))
    relevance = np.clip(relevance, 1e-12, 1 - 1e-12)
    item_prop = np.empty(n_items)
    item_prop[rng.permutation(n_items)] = zipf_profile(n_items, propensity_skew, max_item_propensity)
    user_prop = rng.uniform(lo, hi, size=n_users)
    return SyntheticWorld(relevance, user_prop, item_prop, alpha, latent_rank, seed)


def _check(world, u, i):
    if not (0 <= u < world.n_users and 0 <= i < world.n_items):
        raise IndexOutOfRange(f"pair ({u}, {i}) outside {world.n_users}x{world.n_items}")


def exposure_probability(world: SyntheticWorld, u: int, i: int) -> float:
    _check(world, u, i)
    raw = world.user_propensity[u] * world.item_propensity[i] * world.relevance[u, i] ** world.alpha
    return float(min(1.0, raw))


def exposure_matrix(world: SyntheticWorld):
    """All exposure probabilities plus the number of cells hit by the cap at 1."""
    raw = world.user_propensity[:, None] * world.item_propensity[None, :] * world.relevance ** world.alpha
    capped = raw > 1.0
    return np.minimum(raw, 1.0), int(capped.sum())


def interaction_probability(world: SyntheticWorld) -> np.ndarray:
    expo, n_capped = exposure_matrix(world)
    if n_capped:
        log.warning("exposure capped at 1 in %d cells; factorisation is broken there", n_capped)
    return world.relevance * expo


def sample_interactions(world: SyntheticWorld, seed: int = 0) -> InteractionDataset:
    """Draw every cell independently with probability relevance * exposure."""
    rng = np.random.default_rng(seed)
    prob = interaction_probability(world)
    hits = rng.random(prob.shape) < prob
    users, items = np.nonzero(hits)
    if len(users) == 0:
        raise AllEmpty("no interactions drawn; world parameters are degenerate")
    return InteractionDataset(tuple(f"u{u}" for u in range(world.n_users)),
                              tuple(f"i{i}" for i in range(world.n_items)), users, items)


def true_ranking(world: SyntheticWorld, u: int) -> np.ndarray:
    """Items by descending relevance for user ``u``; ties by ascending index."""
    if not 0 <= u < world.n_users:
        raise IndexOutOfRange(f"user {u} out of range")
    return np.argsort(-world.relevance[u], kind="stable")


def save_world(world: SyntheticWorld, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WORLD_MAGIC, WORLD_VERSION, world.n_users, world.n_items, world.latent_rank))
        fh.write(world.relevance.astype("<f8").tobytes(order="C"))
        fh.write(world.user_propensity.astype("<f8").tobytes())
        fh.write(world.item_propensity.astype("<f8").tobytes())
        fh.write(struct.pack("<dq", world.alpha, world.seed))


def load_world(path) -> SyntheticWorld:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise BadFileFormat(f"{os.fspath(path)}: truncated world file")
    magic, version, nu, ni, rank = _HEADER.unpack_from(blob)
    if magic != WORLD_MAGIC:
        raise BadFileFormat(f"{os.fspath(path)}: bad magic {magic!r}")
    if version != WORLD_VERSION:
        raise BadFileFormat(f"{os.fspath(path)}: unsupported world version {version}")
    expected = _HEADER.size + 8 * (nu * ni + nu + ni) + 16
    if len(blob) != expected:
        raise BadFileFormat(f"{os.fspath(path)}: expected {expected} bytes, got {len(blob)}")
    off = _HEADER.size
    rel = np.frombuffer(blob, "<f8", nu * ni, off).reshape(nu, ni)
    off += 8 * nu * ni
    pu = np.frombuffer(blob, "<f8", nu, off)
    off += 8 * nu
    pi = np.frombuffer(blob, "<f8", ni, off)
    off += 8 * ni
    alpha, seed = struct.unpack_from("<dq", blob, off)
    return SyntheticWorld(rel, pu, pi, alpha, rank, seed)
