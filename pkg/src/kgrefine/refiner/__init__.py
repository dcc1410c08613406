"""Trainable utterance refiner: multi-task seq2seq with constrained decoding."""

from .batching import TrainingBatch, build_training_batch, collate
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    batch_refine,
    load_checkpoint,
    refine,
    refine_with_info,
    save_checkpoint,
)
from .config import ConfigError, DecodeConfig, RefinerConfig
from .decoding import apply_no_repeat_ngram, beam_search, decode, sample_decode
from .losses import IGNORE_LABEL, combined_loss, gen_loss, ner_loss, sequence_log_prob
from .model import RefinerModel, build_model, parameter_count
from .training import EpochStats, TrainingDiverged, TrainResult, train
from .vocab import Vocabulary

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "DecodeConfig",
    "EpochStats",
    "IGNORE_LABEL",
    "RefinerConfig",
    "RefinerModel",
    "TrainResult",
    "TrainingBatch",
    "TrainingDiverged",
    "Vocabulary",
    "apply_no_repeat_ngram",
    "batch_refine",
    "beam_search",
    "build_model",
    "build_training_batch",
    "collate",
    "combined_loss",
    "decode",
    "gen_loss",
    "load_checkpoint",
    "ner_loss",
    "parameter_count",
    "refine",
    "refine_with_info",
    "sample_decode",
    "save_checkpoint",
    "sequence_log_prob",
    "train",
]
