"""Training loops with early stopping, and per-row prediction."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from ..nn import AdamW, bce_with_logits, check_finite, clip_grad_norm, pos_weight_for, sigmoid
from ..prep import Sequence, batches, pad_batch
from .sequence import SequenceNet
from .tabular import ModelInputError


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    clip_norm: float = 2.0
    seed: int = 0
    pos_weight_cap: float = 100.0
    use_pos_weight: bool = True
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be positive, max_epochs non-negative")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TrainResult:
    model: object
    curve: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = -1
    pos_weights: tuple = ()
    inner_products: list = field(default_factory=list)  # per step, PCGrad projected inner products


def task_labels(seqs: list[Sequence], task_index) -> list[Sequence]:
    """Restrict each sequence's label matrix to the given target columns."""
    idx = list(task_index)
    return [Sequence(s.admission_id, s.rows, s.X, s.labels[:, idx], s.grid) for s in seqs]


def sequence_pos_weights(seqs: list[Sequence], K: int, cfg: TrainConfig) -> np.ndarray:
    if not cfg.use_pos_weight:
        return np.ones(K)
    labels = np.concatenate([s.labels for s in seqs])
    return np.array([pos_weight_for(labels[:, k], cap=cfg.pos_weight_cap) for k in range(K)])


def evaluate_loss(model: SequenceNet, seqs, pos_weights, batch_size=64) -> float:
    """Sum of task BCE losses per valid step, eval mode, no uncertainty weighting."""
    model.eval()
    total, n = 0.0, 0
    for b in batches(seqs, batch_size):
        logits = model.forward(b.X, b.mask, b.grid)
        for k in range(len(model.tasks)):
            loss, _ = bce_with_logits(logits[..., k], b.labels[..., k], b.mask, pos_weights[k])
            total += loss * b.mask.sum()
        n += b.mask.sum()
    model.train()
    return total / max(n, 1.0)


def fit_sequence(model: SequenceNet, train: list[Sequence], val: list[Sequence] | None,
                 cfg: TrainConfig = TrainConfig(), record_inner: bool = False,
                 max_steps: int | None = None) -> TrainResult:
    """AdamW with clipping; early stopping on validation loss, best parameters restored."""
    for name, part in (("train", train), ("val", val or [])):
        for s in part:
            if not np.isfinite(s.X).all() or (s.grid is not None and not np.isfinite(s.grid).all()):
                raise ModelInputError(f"non-finite inputs in {name} admission {s.admission_id}")
    K = len(model.tasks)
    pw = sequence_pos_weights(train, K, cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.parameters(), cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    result = TrainResult(model, pos_weights=tuple(pw))
    best, best_state, wait = np.inf, copy.deepcopy(model), 0
    steps = 0
    model.train()
    with threadpool_limits(1):
        for epoch in range(cfg.max_epochs):
            losses = []
            for b in batches(train, cfg.batch_size, rng):
                model.zero_grad()
                logits = model.forward(b.X, b.mask, b.grid, rng)
                total, _, dl = model.loss(logits, b.labels, b.mask, pw)
                if not np.isfinite(total):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                model.backward(dl)
                check_finite(model.named_parameters())
                clip_grad_norm(model.parameters(), cfg.clip_norm)
                opt.step()
                losses.append(total)
                if record_inner:
                    result.inner_products.append(list(model.last_inner))
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
            val_loss = evaluate_loss(model, val, pw) if val else float(np.mean(losses))
            result.curve.append((epoch, float(np.mean(losses)), float(val_loss)))
            if max_steps is not None and steps >= max_steps:
                break
            if val_loss < best - 1e-12:
                best, best_state, wait = val_loss, copy.deepcopy(model), 0
                result.best_epoch = epoch
            else:
                wait += 1
                if wait >= cfg.patience:
                    break
    if max_steps is None and result.best_epoch >= 0:
        result.model = best_state
    result.model.eval()
    return result


def predict_sequences(model: SequenceNet, seqs: list[Sequence], n_rows: int | None = None,
                      batch_size: int = 64):
    """Per-row probabilities (rows indexed by the patient-day table), NaN where absent."""
    model.eval()
    n_rows = n_rows if n_rows is not None else (max(int(s.rows.max()) for s in seqs) + 1 if seqs else 0)
    out = np.full((n_rows, len(model.tasks)), np.nan)
    with threadpool_limits(1):
        for b in batches(seqs, batch_size):
            p = sigmoid(model.forward(b.X, b.mask, b.grid))
            valid = b.rows >= 0
            out[b.rows[valid]] = p[valid]
    return out


def embed_rows(model: SequenceNet, seqs: list[Sequence], n_rows: int, batch_size: int = 64) -> np.ndarray:
    """Frozen encoder embeddings per patient-day row (for tabular export)."""
    out = np.zeros((n_rows, model.encoder.out_dim))
    for k in range(0, len(seqs), batch_size):
        b = pad_batch(seqs[k:k + batch_size])
        emb, _ = model.embed(b.grid, b.mask)
        valid = b.rows >= 0
        out[b.rows[valid]] = emb[valid]
    return out
