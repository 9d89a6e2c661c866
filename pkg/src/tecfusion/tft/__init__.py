"""Temporal Fusion Transformer built on :mod:`tecfusion.autodiff`."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .layers import ParameterSet, ParamRegistry, causal_decoder_mask
from .model import (
    EVAL_MODE,
    TRAIN_MODE,
    Batch,
    InterpretabilityRecord,
    TemporalFusionTransformer,
    as_batch,
    quantile_loss,
)

__all__ = [
    "Batch",
    "Checkpoint",
    "EVAL_MODE",
    "InterpretabilityRecord",
    "ParamRegistry",
    "ParameterSet",
    "TRAIN_MODE",
    "TemporalFusionTransformer",
    "as_batch",
    "causal_decoder_mask",
    "load_checkpoint",
    "quantile_loss",
    "save_checkpoint",
]
