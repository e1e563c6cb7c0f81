"""Mini-batch training: binary cross-entropy, ADAM with bias correction,
and early stopping on validation mean AUC.

The trainer is deterministic: one generator seeded from the config drives
parameter initialization, epoch shuffling, and dropout, so identical
(spec, data, config) runs produce identical parameters and history.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._alloc import tune_allocator
from .architectures import ModelParams, NetworkSpec, build, forward
from .data import TaggedDataset
from .evaluation import mean_auc_over_tags
from .tensor import Tape, ShapeError, Tensor, backward, clip, log, tmean
from .frontend import load_array

PRED_CLAMP = 1e-7


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class TrainingConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 20
    patience_epochs: int = 1
    seed: int = 0
    # optional: stop as soon as validation mean AUC reaches this value
    target_valid_auc: Optional[float] = None
    cache_bytes: int = 2 << 30

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs it)")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("ADAM betas must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 0 or self.patience_epochs < 1:
            raise ValueError("max_epochs >= 0 and patience_epochs >= 1 required")


@dataclass
class TrainState:
    """Parameters plus ADAM moment accumulators and progress counters."""

    model: ModelParams
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    best_auc: float = -np.inf
    epochs_since_improve: int = 0

    def __post_init__(self):
        for name, t in self.model.named_trainables():
            self.m.setdefault(name, np.zeros_like(t.data))
            self.v.setdefault(name, np.zeros_like(t.data))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_auc: float
    seconds: float


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy over batch and tags.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target, float)
    if pred.shape != target_data.shape:
        raise ShapeError(f"bce_loss shapes differ: {pred.shape} vs {target_data.shape}")
    p = clip(pred, PRED_CLAMP, 1.0 - PRED_CLAMP)
    ll = Tensor(target_data) * log(p) + Tensor(1.0 - target_data) * log(1.0 - p)
    return -tmean(ll)


def adam_step(state: TrainState, grads: dict, cfg: TrainingConfig) -> TrainState:
    """One ADAM update with bias correction; mutates parameters in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, param in state.model.named_trainables():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != param.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {param.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        param.data -= cfg.learning_rate * update
    return state


class SpectrogramCache:
    """Bounded in-memory cache of spectrogram files keyed by path."""

    def __init__(self, limit_bytes: int):
        self.limit = limit_bytes
        self.used = 0
        self.store: dict = {}

    def get(self, path) -> np.ndarray:
        key = str(path)
        hit = self.store.get(key)
        if hit is not None:
            return hit
        arr = load_array(path)
        if self.used + arr.nbytes <= self.limit:
            self.store[key] = arr
            self.used += arr.nbytes
        return arr


def load_batch(ds: TaggedDataset, idx, cache: Optional[SpectrogramCache] = None):
    """Stack spectrograms into (B, 1, F, T) with float labels (B, tags)."""
    mats = [cache.get(ds.paths[i]) if cache else load_array(ds.paths[i]) for i in idx]
    x = np.stack(mats)[:, None, :, :]
    y = ds.labels[np.asarray(idx)].astype(np.float64)
    return x, y


def predict_scores(
    spec: NetworkSpec,
    model: ModelParams,
    ds: TaggedDataset,
    batch_size: int = 16,
    cache: Optional[SpectrogramCache] = None,
) -> np.ndarray:
    """Inference-mode tag scores for a whole dataset."""
    out = np.empty((len(ds), len(ds.tag_names)))
    for s in range(0, len(ds), batch_size):
        idx = range(s, min(len(ds), s + batch_size))
        x, _ = load_batch(ds, idx, cache)
        out[s : s + len(x)] = forward(spec, model, Tensor(x), train=False).data
    return out


def fit(
    spec: NetworkSpec,
    train_ds: TaggedDataset,
    valid_ds: TaggedDataset,
    cfg: TrainingConfig,
    model: Optional[ModelParams] = None,
):
    """Train with shuffled mini-batches and AUC early stopping.

    After each epoch the validation mean AUC is computed in inference
    mode; when it fails to improve for ``patience_epochs`` consecutive
    epochs (or ``max_epochs`` is reached) training stops and the snapshot
    with the best validation AUC is returned along with the history.
    """
    tune_allocator()
    if len(train_ds) == 0 or len(valid_ds) == 0:
        raise ValueError("fit requires non-empty train and valid datasets")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = build(spec, rng)
    state = TrainState(model)
    cache = SpectrogramCache(cfg.cache_bytes)
    history: list[EpochStats] = []
    best_snapshot = model.copy()
    params = dict(model.named_trainables())
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_ds))
        loss_sum, seen = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            if idx.size < 2:
                continue  # batch norm cannot normalize a single example
            x, y = load_batch(train_ds, idx, cache)
            with Tape() as tape:
                pred = forward(spec, model, Tensor(x), train=True, rng=rng)
                loss = bce_loss(pred, y)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch + 1}, step {state.step + 1}"
                )
            backward(loss, tape)
            grads = {name: t.grad for name, t in params.items()}
            adam_step(state, grads, cfg)
            for t_param in params.values():
                t_param.grad = None
            loss_sum += value * idx.size
            seen += idx.size
        scores = predict_scores(spec, model, valid_ds, cfg.batch_size, cache)
        valid_auc = mean_auc_over_tags(scores, valid_ds.labels)
        history.append(
            EpochStats(epoch + 1, loss_sum / max(1, seen), valid_auc, time.perf_counter() - t0)
        )
        if valid_auc > state.best_auc:
            state.best_auc = valid_auc
            state.epochs_since_improve = 0
            best_snapshot = model.copy()
        else:
            state.epochs_since_improve += 1
            if state.epochs_since_improve >= cfg.patience_epochs:
                break
        if cfg.target_valid_auc is not None and valid_auc >= cfg.target_valid_auc:
            break
    return best_snapshot, history


def history_to_csv(history, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "valid_auc", "seconds"])
        for h in history:
            w.writerow([h.epoch, f"{h.train_loss:.6f}", f"{h.valid_auc:.6f}", f"{h.seconds:.3f}"])
