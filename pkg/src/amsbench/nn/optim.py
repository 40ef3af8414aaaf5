"""AdamW with decoupled weight decay and global gradient-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Parameter


class NonFiniteGradient(FloatingPointError):
    pass


def global_norm(params) -> float:
    return float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params)))


def check_finite(named_params) -> None:
    for name, p in named_params:
        if not np.isfinite(p.grad).all():
            bad = int((~np.isfinite(p.grad)).sum())
            raise NonFiniteGradient(f"non-finite gradient in {name}: {bad} of {p.grad.size} entries")


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most ``max_norm``; returns the prior norm."""
    if max_norm <= 0:
        raise ValueError("clip norm must be positive")
    total = global_norm(params)
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


@dataclass
class AdamW:
    params: list
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2

    def step(self):
        b1, b2 = self.betas
        for p in self.params:
            p.step += 1
            p.value *= 1.0 - self.lr * self.weight_decay
            p.m = b1 * p.m + (1.0 - b1) * p.grad
            p.v = b2 * p.v + (1.0 - b2) * p.grad * p.grad
            mhat = p.m / (1.0 - b1 ** p.step)
            vhat = p.v / (1.0 - b2 ** p.step)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            if not np.isfinite(p.value).all():
                raise NonFiniteGradient("parameter became non-finite after AdamW step")

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def adamw_step(named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2,
               clip: float | None = 2.0) -> float:
    """Check, clip and apply one AdamW update; returns the pre-clip gradient norm."""
    named_params = list(named_params)
    check_finite(named_params)
    params = [p for _, p in named_params]
    norm = clip_grad_norm(params, clip) if clip is not None else global_norm(params)
    AdamW(params, lr, betas, eps, weight_decay).step()
    return norm


__all__ = ["AdamW", "Parameter", "NonFiniteGradient", "adamw_step", "check_finite", "clip_grad_norm",
           "global_norm"]
