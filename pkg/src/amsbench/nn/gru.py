"""Unidirectional GRU with masked steps and backprop through time.

Gate layout follows the usual reset/update/candidate form with fused weights
``Wx`` (D, 3H) and ``Wh`` (H, 3H), gate order (r, z, n):

    r = sigmoid(x Wx_r + bx_r + h Wh_r + bh_r)
    z = sigmoid(x Wx_z + bx_z + h Wh_z + bh_z)
    n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
    h' = (1 - z) * n + z * h

A masked step (mask 0) carries the previous state forward unchanged.
"""

from __future__ import annotations

import numpy as np

from .layers import Dropout, Module, Parameter, ShapeError, sigmoid, uniform


class GRULayer(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.hidden = n_in, hidden
        H = hidden
        self.Wx = Parameter(uniform(rng, H, (n_in, 3 * H)))
        self.Wh = Parameter(uniform(rng, H, (H, 3 * H)))
        self.bx = Parameter(uniform(rng, H, (3 * H,)))
        self.bh = Parameter(uniform(rng, H, (3 * H,)))
        self._cache = None

    def forward(self, x, mask=None, h0=None):
        """x: (N, T, D); mask: (N, T). Returns hidden states (N, T, H)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise ShapeError(f"gru: input shape {x.shape} does not match weight shape {self.Wx.shape}")
        N, T, _ = x.shape
        H = self.hidden
        mask = np.ones((N, T)) if mask is None else np.asarray(mask, dtype=np.float64)
        gx = x @ self.Wx.value + self.bx.value
        Wh, bh = self.Wh.value, self.bh.value
        h = np.zeros((N, H)) if h0 is None else h0
        hs = np.empty((N, T, H))
        r_all, z_all, n_all, hn_all, hp_all = (np.empty((N, T, H)) for _ in range(5))
        for t in range(T):
            gh = h @ Wh + bh
            r = sigmoid(gx[:, t, :H] + gh[:, :H])
            z = sigmoid(gx[:, t, H:2 * H] + gh[:, H:2 * H])
            hn = gh[:, 2 * H:]
            n = np.tanh(gx[:, t, 2 * H:] + r * hn)
            h_new = (1.0 - z) * n + z * h
            m = mask[:, t:t + 1]
            hp_all[:, t] = h
            h = m * h_new + (1.0 - m) * h
            hs[:, t] = h
            r_all[:, t], z_all[:, t], n_all[:, t], hn_all[:, t] = r, z, n, hn
        self._cache = (x, mask, r_all, z_all, n_all, hn_all, hp_all)
        return hs

    def backward(self, dhs):
        """dhs: gradient w.r.t. every output state. Returns dx (N, T, D)."""
        x, mask, r_all, z_all, n_all, hn_all, hp_all = self._cache
        N, T, D = x.shape
        H = self.hidden
        Wh = self.Wh.value
        dgx = np.empty((N, T, 3 * H))
        dgh_all = np.empty((N, T, 3 * H))
        carry = np.zeros((N, H))
        for t in range(T - 1, -1, -1):
            dh = dhs[:, t] + carry
            m = mask[:, t:t + 1]
            dnew = m * dh
            r, z, n, hn, hp = r_all[:, t], z_all[:, t], n_all[:, t], hn_all[:, t], hp_all[:, t]
            dn = dnew * (1.0 - z)
            dz = dnew * (hp - n)
            dn_pre = dn * (1.0 - n * n)
            dr_pre = dn_pre * hn * r * (1.0 - r)
            dz_pre = dz * z * (1.0 - z)
            dgx[:, t, :H] = dr_pre
            dgx[:, t, H:2 * H] = dz_pre
            dgx[:, t, 2 * H:] = dn_pre
            dgh = dgh_all[:, t]
            dgh[:, :H] = dr_pre
            dgh[:, H:2 * H] = dz_pre
            dgh[:, 2 * H:] = dn_pre * r
            carry = dnew * z + dgh @ Wh.T + (1.0 - m) * dh
        self.Wx.grad += x.reshape(-1, D).T @ dgx.reshape(-1, 3 * H)
        self.bx.grad += dgx.reshape(-1, 3 * H).sum(axis=0)
        self.Wh.grad += hp_all.reshape(-1, H).T @ dgh_all.reshape(-1, 3 * H)
        self.bh.grad += dgh_all.reshape(-1, 3 * H).sum(axis=0)
        return dgx @ self.Wx.value.T


class GRU(Module):
    """Stack of GRU layers with inverted dropout between layers."""

    def __init__(self, n_in: int, hidden: int = 128, layers: int = 2, dropout: float = 0.2,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.layers = [GRULayer(n_in if i == 0 else hidden, hidden, rng) for i in range(layers)]
        self.drops = [Dropout(dropout) for _ in range(layers - 1)]
        self.hidden = hidden

    def forward(self, x, mask=None, rng: np.random.Generator | None = None):
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, mask)
            if i < len(self.drops):
                h = self.drops[i].forward(h, rng)
        return h

    def backward(self, dh):
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.drops):
                dh = self.drops[i].backward(dh)
            dh = self.layers[i].backward(dh)
        return dh
