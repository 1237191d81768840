from __future__ import annotations

from typing import Sequence

import numpy as np

from . import layers as L
from .layers import LayerSpec
from .ops import ShapeError


def infer_shapes(specs: Sequence[LayerSpec], input_shape) -> list:
    """Per-layer output shapes; raises ShapeError naming the failing layer."""
    shapes = []
    cur = input_shape
    for i, spec in enumerate(specs):
        try:
            cur = L.out_shape(spec, cur)
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
        shapes.append(cur)
    return shapes


def _batch_shape(x):
    if isinstance(x, tuple):
        return tuple(a.shape[1:] for a in x)
    return x.shape[1:]


class Network:
    """A feed-forward chain of layers with explicit parameters.

    ``params[i]`` holds the trainable arrays of layer ``i`` and ``state[i]`` its
    non-trainable buffers (batchnorm running statistics).
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape):
        self.specs = list(specs)
        if isinstance(input_shape[0], (tuple, list)):
            self.input_shape = tuple(tuple(s) for s in input_shape)
        else:
            self.input_shape = tuple(input_shape)
        self.shapes = infer_shapes(self.specs, self.input_shape)
        self.params: list[dict] = [{} for _ in self.specs]
        self.state: list[dict] = [{} for _ in self.specs]

    @property
    def output_shape(self):
        return self.shapes[-1]

    def in_shape(self, i: int):
        return self.input_shape if i == 0 else self.shapes[i - 1]

    def init(self, seed: int = 0, dtype=np.float32) -> "Network":
        rng = np.random.default_rng(seed)
        for i, spec in enumerate(self.specs):
            self.params[i], self.state[i] = L.init_params(spec, self.in_shape(i), rng, dtype)
        return self

    def astype(self, dtype) -> "Network":
        net = Network(self.specs, self.input_shape)
        net.params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        net.state = [{k: v.astype(dtype) for k, v in s.items()} for s in self.state]
        return net

    def copy(self) -> "Network":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        for p in self.params:
            for v in p.values():
                return v.dtype
        return np.dtype(np.float64)

    def truncated(self, n_layers: int) -> "Network":
        """First ``n_layers`` layers, sharing parameter arrays with self."""
        net = Network(self.specs[:n_layers], self.input_shape)
        net.params = self.params[:n_layers]
        net.state = self.state[:n_layers]
        return net

    # -- parameter views -----------------------------------------------------

    def named_arrays(self):
        """(layer, name, array) in declaration order: trainables then state."""
        for i in range(len(self.specs)):
            for name in sorted(self.params[i]):
                yield i, name, self.params[i][name]
            for name in sorted(self.state[i]):
                yield i, name, self.state[i][name]

    def trainable(self) -> list[np.ndarray]:
        return [self.params[i][n] for i in range(len(self.specs)) for n in sorted(self.params[i])]

    def n_params(self, layer: int | None = None) -> int:
        idx = range(len(self.specs)) if layer is None else [layer]
        return sum(v.size for i in idx for v in self.params[i].values())

    # -- forward / backward --------------------------------------------------

    def forward(self, x, training: bool = False, update_stats: bool | None = None, stop: int | None = None):
        """Run layers ``[0, stop)``.  Returns (output, caches)."""
        if update_stats is None:
            update_stats = training
        got = _batch_shape(x)
        if got != self.input_shape:
            raise ShapeError(f"layer 0 ({self.specs[0].kind}): expected input {self.input_shape}, got {got}")
        caches = []
        stop = len(self.specs) if stop is None else stop
        for i in range(stop):
            x, cache = L.forward(self.specs[i], self.params[i], self.state[i], x, training, update_stats)
            caches.append(cache)
        return x, caches

    def predict(self, x, batch_size: int = 64):
        if isinstance(x, tuple):
            n = x[0].shape[0]
            chunks = [self.forward(tuple(a[s : s + batch_size] for a in x))[0] for s in range(0, n, batch_size)]
        else:
            n = x.shape[0]
            chunks = [self.forward(x[s : s + batch_size])[0] for s in range(0, n, batch_size)]
        return np.concatenate(chunks, axis=0)

    def backward(self, caches, dy, need_input_grad: bool = True):
        """Returns (grads, dx): grads mirrors ``params`` for the layers covered by caches."""
        grads: list[dict] = [{} for _ in self.specs]
        n = len(caches)
        for i in range(n - 1, -1, -1):
            need = need_input_grad or i > 0
            dy, grads[i] = L.backward(self.specs[i], self.params[i], caches[i], dy, need)
        return grads, dy

    def flat_grads(self, grads) -> list[np.ndarray]:
        return [grads[i][n] for i in range(len(self.specs)) for n in sorted(self.params[i])]

    def __repr__(self):
        lines = [f"Network(input={self.input_shape})"]
        for i, (s, shp) in enumerate(zip(self.specs, self.shapes)):
            lines.append(f"  {i:2d} {s.kind:<11} -> {shp}  params={self.n_params(i) if self.params[i] else 0}")
        return "\n".join(lines)
