"""Time-aware state-space-duality sequential recommender on a numpy autodiff core."""

from .data import EventLog, Format, SequenceDataset, batchify, build_sequences, ingest, k_core_filter
from .metrics import RankingReport, metrics, rank_of_target
from .model import ModelConfig, TimeAwareSSDRec
from .ssd import KernelConfig, chunked_ssd_forward, naive_ssd_forward, ssd_apply, tissd_apply
from .trainer import TrainConfig, evaluate, train, verify_gradients

__version__ = "0.1.0"

__all__ = [
    "EventLog", "Format", "SequenceDataset", "batchify", "build_sequences", "ingest", "k_core_filter",
    "RankingReport", "metrics", "rank_of_target", "ModelConfig", "TimeAwareSSDRec", "KernelConfig",
    "chunked_ssd_forward", "naive_ssd_forward", "ssd_apply", "tissd_apply", "TrainConfig", "evaluate",
    "train", "verify_gradients",
]
