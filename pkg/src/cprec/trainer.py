"""Epoch loop, batching, early stopping and seed fan-out."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionDataset
from .errors import InvalidParameter, NonFiniteLoss
from .evaluation import evaluate
from .losses import (
    LOSS_KINDS,
    bce_loss,
    bpr_loss,
    build_propensity,
    cpr_loss,
    relmf_loss,
    ubpr_loss,
)
from .model import AdamState, EmbeddingModel, adam_step, add_gradients, init_model, l2_penalty_and_grads
from .rng import substream
from .sampling import (
    SamplerConfig,
    SamplerStats,
    dynamic_sample_batch,
    sample_bpr_triples,
    sample_pointwise,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    loss: str = "cpr"
    dim: int = 128
    lr: float = 1e-3
    l2: float = 1e-5
    batch_size: int = 1024
    beta: float = 1.0
    gamma: float = 2.0
    k_values: tuple = (2, 3)
    k_mix_ratio: tuple = (3.0, 1.0)
    neg_ratio: int = 1
    eta: float = 0.5
    clip_floor: float = 0.01
    init_scale: float = 0.01
    epochs_max: int = 200
    patience: int = 10
    eval_K: int = 20
    eval_every: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise InvalidParameter(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        for name in ("dim", "batch_size", "epochs_max", "patience", "eval_K", "eval_every", "neg_ratio"):
            if getattr(self, name) < 1:
                raise InvalidParameter(f"{name} must be >= 1")
        if self.lr < 0 or self.l2 < 0:
            raise InvalidParameter("lr and l2 must be non-negative")

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.batch_size, self.beta, self.gamma, self.k_values, self.k_mix_ratio)

    @property
    def positives_per_sample(self) -> float:
        return self.sampler_config().mean_k if self.loss == "cpr" else 1.0


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    valid_recall: float | None
    valid_ndcg: float | None
    elapsed_s: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int | None = None
    best_recall: float | None = None
    steps: int = 0
    sampler: SamplerStats = field(default_factory=SamplerStats)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "valid_recall", "valid_ndcg", "elapsed_s"])
            for r in self.records:
                w.writerow([r.epoch, _g6(r.loss), _g6(r.valid_recall), _g6(r.valid_ndcg), _g6(r.elapsed_s)])


def _g6(x) -> str:
    return "" if x is None else f"{x:.6g}"


class BatchSource:
    """Produces ``(loss, grads)`` for one training batch of the configured kind."""

    def __init__(self, train: InteractionDataset, cfg: TrainConfig, rng: np.random.Generator):
        self.train = train
        self.cfg = cfg
        self.rng = rng
        self.sampler_cfg = cfg.sampler_config()
        self.stats = SamplerStats()
        self.props = None
        if cfg.loss in ("relmf", "ubpr"):
            self.props = build_propensity(train, cfg.eta, cfg.clip_floor)

    def __call__(self, model: EmbeddingModel):
        cfg, rng = self.cfg, self.rng
        if cfg.loss == "cpr":
            k = self.sampler_cfg.choose_k(rng)
            batch = dynamic_sample_batch(self.train, model, self.sampler_cfg, k, rng, self.stats)
            loss, grads = cpr_loss(model, batch)
            touched_u, touched_i = batch.users.ravel(), batch.items.ravel()
        elif cfg.loss in ("bpr", "ubpr"):
            batch = sample_bpr_triples(self.train, cfg.batch_size, rng)
            if cfg.loss == "bpr":
                loss, grads = bpr_loss(model, batch)
            else:
                loss, grads = ubpr_loss(model, batch, self.props)
            touched_u, touched_i = batch.users, np.concatenate([batch.pos_items, batch.neg_items])
        else:
            batch = sample_pointwise(self.train, cfg.batch_size, rng, cfg.neg_ratio)
            if cfg.loss == "bce":
                loss, grads = bce_loss(model, batch)
            else:
                loss, grads = relmf_loss(model, batch, self.props)
            touched_u, touched_i = batch.users, batch.items
        return loss, grads, touched_u, touched_i


def run_epoch(model: EmbeddingModel, state: AdamState, source, l2: float, n_batches: int) -> float:
    """Sample, differentiate, regularise and step ``n_batches`` times; mean batch loss."""
    if n_batches == 0:
        log.warning("run_epoch called with zero batches")
        return 0.0
    losses = []
    for _ in range(n_batches):
        loss, grads, tu, ti = source(model)
        penalty, l2_grads = l2_penalty_and_grads(model, tu, ti, l2)
        total = loss + penalty
        if not math.isfinite(total):
            raise NonFiniteLoss(f"non-finite batch loss {total!r} at optimizer step {state.t + 1}")
        grads = add_gradients(grads, l2_grads, model.dim)
        adam_step(model.params, grads.as_list(), state)
        losses.append(total)
    return float(np.mean(losses))


def batches_per_epoch(n_positives: int, cfg: TrainConfig) -> int:
    return int(math.ceil(n_positives / (cfg.positives_per_sample * cfg.batch_size)))


def train(train_ds: InteractionDataset, valid_ds: InteractionDataset, cfg: TrainConfig,
          model: EmbeddingModel | None = None):
    """Fit a model with early stopping on validation Recall@K.

    Returns the snapshot from the best validation evaluation together with
    the per-epoch history.
    """
    if model is None:
        model = init_model(train_ds.n_users, train_ds.n_items, cfg.dim, cfg.init_scale,
                           substream(cfg.seed, "init"))
    state = AdamState.for_params(model.params, lr=cfg.lr)
    source = BatchSource(train_ds, cfg, substream(cfg.seed, "sampler"))
    n_batches = batches_per_epoch(len(train_ds), cfg)
    history = TrainHistory(sampler=source.stats)
    best = model.copy()
    stale = 0
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs_max + 1):
        mean_loss = run_epoch(model, state, source, cfg.l2, n_batches)
        history.steps += n_batches
        recall = ndcg = None
        if epoch % cfg.eval_every == 0:
            rep = evaluate(model, valid_ds, train_ds, cfg.eval_K, threads=cfg.threads)
            recall, ndcg = rep.recall_at_k, rep.ndcg_at_k
            if recall is not None and (history.best_recall is None or recall > history.best_recall):
                history.best_recall, history.best_epoch = recall, epoch
                best = model.copy()
                stale = 0
            elif recall is not None:
                stale += 1
        history.records.append(EpochRecord(epoch, mean_loss, recall, ndcg, time.perf_counter() - t0))
        log.info("epoch %d loss %.6g valid recall %s", epoch, mean_loss, recall)
        if stale >= cfg.patience:
            break
    if history.best_epoch is None:
        best = model.copy()
    return best, history
