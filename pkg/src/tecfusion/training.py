"""Training loop: Adam with global-norm clipping, early stopping, best-weight restore."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .config import ExperimentConfig, TrainingConfig
from .dataset import TRAIN, VAL, PreparedBundle, SampleSet, build_samples, fit_statistics, prepare_bundle
from .errors import TrainingDivergedError
from .tft import Checkpoint, ParameterSet, TemporalFusionTransformer, quantile_loss
from .tft.model import EVAL_MODE, TRAIN_MODE, Batch

log = logging.getLogger(__name__)


class Adam:
    def __init__(self, params: ParameterSet, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.t = 0

    def step(self, params: ParameterSet, grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * math.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for name, tensor in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            tensor.value -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(tensor.value.dtype, copy=False)


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``; returns the original norm."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class EarlyStopping:
    """Stop once ``patience`` epochs in a row have failed to improve on the best validation loss.

    Epochs are numbered from 1. With patience 3 and the best loss at epoch 1
    training stops after epoch 5.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch: Optional[int] = None

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch; True means this epoch is the new best."""
        if loss < self.best_loss:
            self.best_loss, self.best_epoch = loss, epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return self.best_epoch is not None and epoch - self.best_epoch > self.patience


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[dict]
    initial_val_loss: float
    best_epoch: int
    seconds: float
    train_samples: SampleSet = field(repr=False, default=None)
    val_samples: SampleSet = field(repr=False, default=None)


def batches(n: int, size: int, rng: Optional[np.random.Generator] = None, limit: Optional[int] = None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    chunks = [order[i : i + size] for i in range(0, n, size)]
    return chunks[:limit] if limit else chunks


def _batch(samples: SampleSet, idx, dtype) -> Batch:
    return Batch(
        samples.static[idx].astype(dtype),
        samples.encoder[idx].astype(dtype),
        samples.decoder[idx].astype(dtype),
        samples.targets[idx].astype(dtype),
    )


def evaluate_loss(model: TemporalFusionTransformer, params: ParameterSet, samples: SampleSet, batch_size=256) -> float:
    """Eval-mode quantile loss averaged over all samples."""
    total, count = 0.0, 0
    for idx in batches(len(samples), batch_size):
        batch = _batch(samples, idx, params.dtype)
        pred, _ = model.forward(params, batch, EVAL_MODE)
        loss = quantile_loss(pred, batch.targets, model.config.quantiles)
        total += float(loss.value) * len(idx)
        count += len(idx)
    return total / count


def train_samples(
    model: TemporalFusionTransformer,
    params: ParameterSet,
    train_set: SampleSet,
    val_set: SampleSet,
    training: TrainingConfig,
    progress: Optional[Callable[[dict], None]] = None,
):
    """Optimise ``params`` in place and restore the best-validation weights.

    Returns (history, initial validation loss, best epoch).
    """
    seeds = np.random.SeedSequence(training.seed).spawn(2)
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in seeds)
    optimizer = Adam(params, lr=training.learning_rate)
    stopper = EarlyStopping(training.patience)
    initial = evaluate_loss(model, params, val_set)
    best = {k: t.value.copy() for k, t in params.items()}
    history = []
    for epoch in range(1, training.max_epochs + 1):
        started = time.perf_counter()
        losses = []
        for b, idx in enumerate(
            batches(len(train_set), training.batch_size, shuffle_rng, training.max_batches_per_epoch)
        ):
            batch = _batch(train_set, idx, params.dtype)
            pred, _ = model.forward(params, batch, TRAIN_MODE, dropout_rng)
            loss = quantile_loss(pred, batch.targets, model.config.quantiles)
            if not np.isfinite(loss.value):
                raise TrainingDivergedError(epoch, b)
            params.zero_grad()
            ad.backward(loss)
            grads = {k: t.grad if t.grad is not None else np.zeros_like(t.value) for k, t in params.items()}
            norm = clip_by_global_norm(grads, training.clip_norm)
            if not math.isfinite(norm):
                raise TrainingDivergedError(epoch, b)
            optimizer.step(params, grads)
            losses.append(float(loss.value))
        params.zero_grad()
        val_loss = evaluate_loss(model, params, val_set)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch, None)
        improved = stopper.update(epoch, val_loss)
        if improved:
            best = {k: t.value.copy() for k, t in params.items()}
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val_loss,
            "seconds": time.perf_counter() - started,
        }
        history.append(record)
        log.info("epoch %d train %.5f val %.5f", epoch, record["train_loss"], val_loss)
        if progress:
            progress(record)
        if stopper.should_stop(epoch):
            break
    for k, t in params.items():
        t.value = best[k]
    return history, initial, stopper.best_epoch


def train(
    config: ExperimentConfig,
    bundle,
    progress: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Fit normalizers on training months, train with the quantile loss, and return a checkpoint."""
    started = time.perf_counter()
    prepared = bundle if isinstance(bundle, PreparedBundle) else prepare_bundle(bundle, config)
    stats = fit_statistics(prepared, config)
    train_set = build_samples(prepared, config, TRAIN, stats)
    val_set = build_samples(prepared, config, VAL, stats)
    model = TemporalFusionTransformer(
        config.model, train_set.static.shape[-1], train_set.encoder.shape[-1], train_set.decoder.shape[-1]
    )
    dtype = np.dtype(config.training.dtype)
    params = model.init_params(config.seed, dtype)
    history, initial, best_epoch = train_samples(model, params, train_set, val_set, config.training, progress)
    checkpoint = Checkpoint(
        config=config,
        params=params.copy(np.float64),
        stats=stats,
        seed=config.seed,
        static_names=train_set.static_names,
        encoder_names=train_set.encoder_names,
        decoder_names=train_set.decoder_names,
        history=history,
        best_epoch=best_epoch,
    )
    return TrainResult(
        checkpoint, history, initial, best_epoch, time.perf_counter() - started, train_set, val_set
    )
