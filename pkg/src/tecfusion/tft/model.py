"""Temporal Fusion Transformer forward pass and quantile loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..config import ModelConfig
from ..errors import InvalidArgumentError, MissingSeedError, ShapeError
from .layers import (
    ContinuousEmbedding,
    Context,
    GateAddNorm,
    GatedResidualNetwork,
    InterpretableMultiHeadAttention,
    Linear,
    LSTMStack,
    ParameterSet,
    ParamRegistry,
    VariableSelectionNetwork,
    causal_decoder_mask,
)

TRAIN_MODE, EVAL_MODE = "train", "eval"


@dataclass
class Batch:
    static: np.ndarray  # [B, S]
    encoder: np.ndarray  # [B, L, F]
    decoder: np.ndarray  # [B, H, K]
    targets: Optional[np.ndarray] = None  # [B, H, 2]

    def __len__(self):
        return self.static.shape[0]


def as_batch(data) -> Batch:
    """Accept a Batch, a SampleSet-like object with stacked arrays, or a sequence of Samples."""
    if isinstance(data, Batch):
        return data
    if hasattr(data, "encoder") and hasattr(data, "static"):
        return Batch(data.static, data.encoder, data.decoder, getattr(data, "targets", None))
    samples = list(data)
    if not samples:
        raise InvalidArgumentError("empty batch")
    return Batch(
        np.stack([s.static_features for s in samples]),
        np.stack([s.encoder_inputs for s in samples]),
        np.stack([s.decoder_known for s in samples]),
        np.stack([s.targets for s in samples]),
    )


@dataclass
class InterpretabilityRecord:
    attention: np.ndarray  # [B, heads, H, L+H]
    static_weights: np.ndarray  # [B, S]
    encoder_weights: np.ndarray  # [B, L, F]
    decoder_weights: np.ndarray  # [B, H, K]


class TemporalFusionTransformer:
    """Model structure; parameters live in a separate :class:`ParameterSet`."""

    def __init__(self, config: ModelConfig, n_static: int, n_encoder: int, n_decoder: int):
        if config.encoder_steps < 1 or config.decoder_steps < 1:
            raise InvalidArgumentError("encoder_steps and decoder_steps must be set")
        self.config = config
        self.n_static, self.n_encoder, self.n_decoder = n_static, n_encoder, n_decoder
        hid = config.hidden_size
        reg = self.registry = ParamRegistry()

        self.static_embedding = ContinuousEmbedding(reg, "static.embedding", n_static, hid)
        self.encoder_embedding = ContinuousEmbedding(reg, "encoder.embedding", n_encoder, hid)
        self.decoder_embedding = ContinuousEmbedding(reg, "decoder.embedding", n_decoder, hid)

        self.static_vsn = VariableSelectionNetwork(reg, "static.vsn", n_static, hid)
        self.encoder_vsn = VariableSelectionNetwork(reg, "encoder.vsn", n_encoder, hid, n_context=hid)
        self.decoder_vsn = VariableSelectionNetwork(reg, "decoder.vsn", n_decoder, hid, n_context=hid)

        self.static_contexts = {
            role: GatedResidualNetwork(reg, f"static.context_{role}", hid, hid, hid)
            for role in ("selection", "cell", "hidden", "enrichment")
        }

        self.encoder_lstm = LSTMStack(reg, "lstm.encoder", hid, hid, config.lstm_layers)
        self.decoder_lstm = LSTMStack(reg, "lstm.decoder", hid, hid, config.lstm_layers)
        self.post_lstm = GateAddNorm(reg, "lstm.gate", hid, hid)

        self.enrichment = GatedResidualNetwork(reg, "enrichment", hid, hid, hid, n_context=hid)
        self.attention = InterpretableMultiHeadAttention(reg, "attention", hid, config.attention_heads)
        self.post_attention = GateAddNorm(reg, "attention.gate", hid, hid)
        self.positionwise = GatedResidualNetwork(reg, "positionwise", hid, hid, hid)
        self.pre_output = GateAddNorm(reg, "output.gate", hid, hid, use_dropout=False)
        n_out = config.output_targets * len(config.quantiles)
        self.output = Linear(reg, "output.head", hid, n_out)
        self.mask = causal_decoder_mask(config.encoder_steps, config.decoder_steps)

    def init_params(self, seed: int, dtype=np.float64) -> ParameterSet:
        return self.registry.initialize(seed, dtype)

    @property
    def parameter_count(self) -> int:
        return self.registry.count()

    def parameter_shapes(self):
        return {name: spec.shape for name, spec in self.registry.specs.items()}

    def _check(self, batch: Batch):
        c = self.config
        B = batch.static.shape[0]
        expected = {
            "static": (B, self.n_static),
            "encoder": (B, c.encoder_steps, self.n_encoder),
            "decoder": (B, c.decoder_steps, self.n_decoder),
        }
        for name, shape in expected.items():
            got = getattr(batch, name).shape
            if got != shape:
                raise ShapeError(f"batch {name} has shape {got}, expected {shape}")

    def forward(
        self,
        params: ParameterSet,
        batch,
        mode: str = EVAL_MODE,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, InterpretabilityRecord]:
        """Return normalized-space predictions [B, H, targets, quantiles] and the interpretability record."""
        if mode not in (TRAIN_MODE, EVAL_MODE):
            raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == TRAIN_MODE
        if train and self.config.dropout_rate > 0 and rng is None:
            raise MissingSeedError("train mode needs a seeded random generator for dropout masks")
        batch = as_batch(batch)
        self._check(batch)
        ctx = Context(train=train, rng=rng, dropout_rate=self.config.dropout_rate)
        p = params
        dtype = params.dtype
        c = self.config
        B, L, H = batch.static.shape[0], c.encoder_steps, c.decoder_steps

        static_in = Tensor(np.asarray(batch.static, dtype=dtype))
        encoder_in = Tensor(np.asarray(batch.encoder, dtype=dtype))
        decoder_in = Tensor(np.asarray(batch.decoder, dtype=dtype))

        static_emb, static_w = self.static_vsn(p, self.static_embedding(p, static_in), ctx)
        contexts = {role: grn(p, static_emb, ctx) for role, grn in self.static_contexts.items()}

        hid = c.hidden_size
        selection_ctx = ad.reshape(contexts["selection"], (B, 1, hid))
        past, encoder_w = self.encoder_vsn(p, self.encoder_embedding(p, encoder_in), ctx, selection_ctx)
        future, decoder_w = self.decoder_vsn(p, self.decoder_embedding(p, decoder_in), ctx, selection_ctx)

        initial = [(contexts["hidden"], contexts["cell"])] * c.lstm_layers
        past_out, states = self.encoder_lstm(p, past, initial)
        future_out, _ = self.decoder_lstm(p, future, states)
        temporal = self.post_lstm(
            p, ad.concat([past_out, future_out], axis=1), ad.concat([past, future], axis=1), ctx
        )

        enrichment_ctx = ad.reshape(contexts["enrichment"], (B, 1, hid))
        enriched = self.enrichment(p, temporal, ctx, enrichment_ctx)
        queries = enriched[:, L:]
        attended, attention = self.attention(p, queries, enriched, self.mask)
        x = self.post_attention(p, attended, queries, ctx)
        x = self.positionwise(p, x, ctx)
        x = self.pre_output(p, x, temporal[:, L:], ctx)
        out = ad.reshape(self.output(p, x), (B, H, c.output_targets, len(c.quantiles)))

        record = InterpretabilityRecord(
            attention=attention.value,
            static_weights=static_w.value,
            encoder_weights=encoder_w.value,
            decoder_weights=decoder_w.value,
        )
        return out, record

    def predict(self, params: ParameterSet, batch, batch_size: int = 256):
        """Eval-mode predictions as a numpy array, computed in chunks."""
        batch = as_batch(batch)
        outs = []
        for start in range(0, len(batch), batch_size):
            part = Batch(*(a[start : start + batch_size] for a in (batch.static, batch.encoder, batch.decoder)))
            outs.append(self.forward(params, part)[0].value)
        return np.concatenate(outs, axis=0)


def quantile_loss(predictions, targets, quantiles: Sequence[float]) -> Tensor:
    """Mean pinball loss ``q max(y - p, 0) + (1 - q) max(p - y, 0)`` over every axis.

    ``predictions`` is [..., Q] and ``targets`` the matching [...] array.
    """
    q = np.asarray(quantiles, dtype=np.float64)
    if q.ndim != 1 or np.any((q <= 0) | (q >= 1)):
        raise InvalidArgumentError(f"quantiles must lie in (0, 1), got {list(quantiles)}")
    predictions = ad.as_tensor(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape + (q.size,):
        raise ShapeError(f"predictions {predictions.shape} do not match targets {targets.shape} x {q.size} quantiles")
    dtype = predictions.value.dtype
    diff = Tensor(targets[..., None].astype(dtype)) - predictions  # y - p
    # pinball(d) = max(q d, (q - 1) d); the branch is chosen by the sign of d
    weight = np.where(diff.value >= 0, q, q - 1.0).astype(dtype)
    return ad.mean(diff * weight)
