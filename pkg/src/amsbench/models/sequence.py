"""GRU sequence model with optional fused grid encoder and multi-task heads.

Modes:
  stl          one task, one head
  hard         shared trunk, one linear head per task, summed losses
  uncertainty  as hard, losses weighted by exp(-s_t) + s_t with learned s
  mmoe         experts with per-task softmax gates on the trunk output;
               shared gradients combined with PCGrad
"""

from __future__ import annotations

import numpy as np

from ..nn import (
    GRU, LayerNorm, Linear, Module, Parameter, ReLU, bce_with_logits, softmax, uncertainty_loss,
)
from .encoder import EncoderSpec, EventGridEncoder

MODES = ("stl", "hard", "uncertainty", "mmoe")


def pcgrad_combine(grads, rng: np.random.Generator | None = None, order=None):
    """Project conflicting task gradients and sum them.

    For each task i, walk the other tasks in a random order and remove the
    component of g_i along g_j whenever g_i . g_j < 0. Returns the combined
    gradient and the inner products g_i' . g_j recorded after each projection.
    """
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    K = len(grads)
    out = []
    inner = []
    for i in range(K):
        gi = grads[i].copy()
        others = [j for j in (order if order is not None else
                              (rng.permutation(K) if rng is not None else range(K))) if j != i]
        for j in others:
            gj = grads[j]
            nn = float(gj @ gj)
            if nn == 0.0:
                continue
            d = float(gi @ gj)
            if d < 0.0:
                gi = gi - (d / nn) * gj
                inner.append(float(gi @ gj))
        out.append(gi)
    return np.sum(out, axis=0) if out else np.zeros(0), inner


class MMoE(Module):
    """task rep_t = sum_e softmax(gate_t(h))_e * relu(expert_e(h))"""

    def __init__(self, n_in: int, n_tasks: int, n_experts: int = 4, expert_dim: int = 64, rng=None):
        rng = rng or np.random.default_rng(0)
        self.experts = [Linear(n_in, expert_dim, rng) for _ in range(n_experts)]
        self.expert_acts = [ReLU() for _ in range(n_experts)]
        self.gates = [Linear(n_in, n_experts, rng) for _ in range(n_tasks)]
        self.n_experts, self.expert_dim = n_experts, expert_dim
        self._E = None
        self._P = None

    def forward(self, h):
        E = np.stack([a.forward(e.forward(h)) for e, a in zip(self.experts, self.expert_acts)], axis=-2)
        P = [softmax(g.forward(h)) for g in self.gates]
        self._E, self._P = E, P
        return [np.einsum("...e,...ed->...d", p, E) for p in P]

    def backward_task(self, t: int, drep):
        E, p = self._E, self._P[t]
        dp = np.einsum("...d,...ed->...e", drep, E)
        dlogit = p * (dp - (p * dp).sum(axis=-1, keepdims=True))
        dh = self.gates[t].backward(dlogit)
        for e in range(self.n_experts):
            dE = p[..., e:e + 1] * drep
            dh = dh + self.experts[e].backward(self.expert_acts[e].backward(dE))
        return dh


class SequenceNet(Module):
    def __init__(self, n_features: int, tasks, mode: str = "stl", hidden: int = 128, layers: int = 2,
                 dropout: float = 0.2, grid_channels: int | None = None,
                 encoder: EncoderSpec | None = None, n_experts: int = 4, expert_dim: int = 64,
                 seed: int = 0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        tasks = tuple(tasks)
        if mode == "stl" and len(tasks) != 1:
            raise ValueError("stl mode takes exactly one task")
        if not tasks:
            raise ValueError("at least one task is required")
        rng = np.random.default_rng(seed)
        self.tasks, self.mode, self.n_features = tasks, mode, n_features
        self.fused = grid_channels is not None
        width = n_features
        if self.fused:
            self.encoder = EventGridEncoder(grid_channels, encoder or EncoderSpec(), rng)
            width += self.encoder.out_dim
            self.norm = LayerNorm(width)
        self.trunk = GRU(width, hidden, layers, dropout, rng)
        rep = hidden
        if mode == "mmoe":
            self.mmoe = MMoE(hidden, len(tasks), n_experts, expert_dim, rng)
            rep = expert_dim
        self.heads = [Linear(rep, 1, rng) for _ in tasks]
        if mode == "uncertainty":
            self.log_var = Parameter(np.zeros(len(tasks)))
        self._cache = None
        self.pcgrad_rng = np.random.default_rng(seed + 7919)
        self.last_inner: list = []

    # --- parameter groups ------------------------------------------------
    def shared_parameters(self):
        groups = [self.trunk]
        if self.fused:
            groups += [self.encoder, self.norm]
        params = [p for g in groups for p in g.parameters()]
        if self.mode == "mmoe":
            params += [p for e in self.mmoe.experts for p in e.parameters()]
        return params

    # --- forward -----------------------------------------------------------
    def embed(self, grid, mask):
        """Encoder output for valid steps; padded steps get zeros. grid: (N, T, B, C)."""
        N, T = mask.shape
        valid = mask.reshape(-1) > 0
        flat = grid.reshape((N * T,) + grid.shape[2:])
        emb = np.zeros((N * T, self.encoder.out_dim))
        if valid.any():
            emb[valid] = self.encoder.forward(flat[valid])
        return emb.reshape(N, T, -1), valid

    def forward(self, X, mask, grid=None, rng=None):
        X = np.asarray(X, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        valid = None
        if self.fused:
            if grid is None:
                raise ValueError("fused model requires hourly grids")
            emb, valid = self.embed(grid, mask)
            inp = self.norm.forward(np.concatenate([X, emb], axis=-1))
        else:
            inp = X
        h = self.trunk.forward(inp, mask, rng)
        reps = self.mmoe.forward(h) if self.mode == "mmoe" else [h] * len(self.tasks)
        logits = np.stack([head.forward(r)[..., 0] for head, r in zip(self.heads, reps)], axis=-1)
        self._cache = (mask, valid, X.shape)
        return logits

    # --- loss --------------------------------------------------------------
    def loss(self, logits, labels, mask, pos_weights):
        """Returns (total, per-task losses, dtotal/dlogits)."""
        K = len(self.tasks)
        per, dl = np.zeros(K), np.zeros_like(logits)
        for k in range(K):
            per[k], dl[..., k] = bce_with_logits(logits[..., k], labels[..., k], mask, pos_weights[k])
        if self.mode == "uncertainty":
            total, w, ds = uncertainty_loss(per, self.log_var.value)
            dl *= w
            self.log_var.grad += ds
        else:
            total = float(per.sum())
        return total, per, dl

    # --- backward ----------------------------------------------------------
    def _trunk_backward(self, dh):
        din = self.trunk.backward(dh)
        if self.fused:
            mask, valid, xshape = self._cache
            dcat = self.norm.backward(din)
            demb = dcat[..., xshape[-1]:].reshape(-1, self.encoder.out_dim)
            if valid.any():
                self.encoder.backward(demb[valid])

    def backward(self, dlogits):
        if self.mode != "mmoe":
            dh = 0.0
            for k, head in enumerate(self.heads):
                dh = dh + head.backward(dlogits[..., k:k + 1])
            self._trunk_backward(dh)
            return
        shared = self.shared_parameters()
        task_grads = []
        for k, head in enumerate(self.heads):
            for p in shared:
                p.zero_grad()
            drep = head.backward(dlogits[..., k:k + 1])
            self._trunk_backward(self.mmoe.backward_task(k, drep))
            task_grads.append(np.concatenate([p.grad.ravel() for p in shared]))
        combined, self.last_inner = pcgrad_combine(task_grads, self.pcgrad_rng)
        offset = 0
        for p in shared:
            p.grad[...] = combined[offset:offset + p.grad.size].reshape(p.grad.shape)
            offset += p.grad.size
