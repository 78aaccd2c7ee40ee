"""Cross pairwise ranking for debiased implicit-feedback recommendation."""
from .batches import CprBatch, CprSample, PointwiseBatch, TripleBatch
from .data import (
    InteractionDataset,
    SplitConfig,
    degree_biased_resample,
    group_items_by_degree,
    load_interactions,
    unbiased_split,
)
from .evaluation import MetricsReport, evaluate, kendall_tau
from .losses import bce_loss, bpr_loss, build_propensity, cpr_loss, cpr_margin, relmf_loss, ubpr_loss
from .model import AdamState, EmbeddingModel, adam_step, init_model, load_checkpoint, save_checkpoint
from .sampling import SamplerConfig, dynamic_sample_batch, sample_random_cpr
from .synthworld import SyntheticWorld, generate_world, sample_interactions, true_ranking
from .trainer import TrainConfig, TrainHistory, train

__version__ = "0.1.0"

__all__ = [
    "CprBatch", "CprSample", "PointwiseBatch", "TripleBatch",
    "InteractionDataset", "SplitConfig", "degree_biased_resample", "group_items_by_degree",
    "load_interactions", "unbiased_split",
    "MetricsReport", "evaluate", "kendall_tau",
    "bce_loss", "bpr_loss", "build_propensity", "cpr_loss", "cpr_margin", "relmf_loss", "ubpr_loss",
    "AdamState", "EmbeddingModel", "adam_step", "init_model", "load_checkpoint", "save_checkpoint",
    "SamplerConfig", "dynamic_sample_batch", "sample_random_cpr",
    "SyntheticWorld", "generate_world", "sample_interactions", "true_ranking",
    "TrainConfig", "TrainHistory", "train",
]
