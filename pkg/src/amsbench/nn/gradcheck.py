"""Central finite differences for verifying analytic gradients."""

from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(analytic, numeric) -> float:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_module(loss_and_backward, named_arrays, eps: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients against finite differences.

    ``loss_and_backward()`` runs forward+backward and returns (loss, grads)
    where grads maps each name in ``named_arrays`` to its analytic gradient.
    """
    _, grads = loss_and_backward()
    grads = {k: np.array(v) for k, v in grads.items()}
    out = {}
    for name, arr in named_arrays.items():
        num = numerical_grad(lambda: loss_and_backward()[0], arr, eps)
        out[name] = relative_error(grads[name], num)
    return out
