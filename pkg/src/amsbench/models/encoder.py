"""Per-day event-grid encoder: bin projection, two convolutions, mean pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import Conv1d, Linear, Module, ReLU, ShapeError


@dataclass(frozen=True)
class EncoderSpec:
    proj_width: int = 32
    channels: tuple = (32, 64)
    kernel: int = 3

    @property
    def out_dim(self) -> int:
        return self.channels[-1]


class EventGridEncoder(Module):
    """(M, B, C) grids (values and indicators stacked on C) -> (M, out_dim)."""

    def __init__(self, in_channels: int, spec: EncoderSpec = EncoderSpec(), rng=None):
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        self.in_channels = in_channels
        self.proj = Linear(in_channels, spec.proj_width, rng)
        self.act0 = ReLU()
        widths = (spec.proj_width,) + tuple(spec.channels)
        self.convs = [Conv1d(widths[i], widths[i + 1], spec.kernel, rng) for i in range(len(spec.channels))]
        self.acts = [ReLU() for _ in spec.channels]
        self._bins = None

    @property
    def out_dim(self):
        return self.spec.out_dim

    def forward(self, grid):
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[-1] != self.in_channels:
            raise ShapeError(f"encoder expects (M, B, {self.in_channels}) grids, got {grid.shape}")
        h = self.act0.forward(self.proj.forward(grid))
        for conv, act in zip(self.convs, self.acts):
            h = act.forward(conv.forward(h))
        self._bins = h.shape[1]
        return h.mean(axis=1)

    def backward(self, demb):
        dh = np.repeat(demb[:, None, :] / self._bins, self._bins, axis=1)
        for conv, act in zip(reversed(self.convs), reversed(self.acts)):
            dh = conv.backward(act.backward(dh))
        return self.proj.backward(self.act0.backward(dh))

    def zero_weights(self):
        for p in self.parameters():
            p.value[...] = 0.0
