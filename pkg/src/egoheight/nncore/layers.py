"""Layer specifications and their forward/backward rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import ops
from .ops import ShapeError

KINDS = (
    "conv3d",
    "pool3d_max",
    "conv2d",
    "pool2d_max",
    "dense",
    "relu",
    "elu",
    "batchnorm",
    "linear_out",
    "concat",
    "reshape",
    "softmax",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    opts: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        _validate(self)

    def __getitem__(self, key):
        return self.opts[key]

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.opts}

    @classmethod
    def from_json(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _validate(spec: LayerSpec) -> None:
    o = spec.opts
    pos = lambda v: all(int(i) > 0 for i in (v if isinstance(v, tuple) else (v,)))  # noqa: E731
    if spec.kind in ("conv3d", "conv2d"):
        n = 3 if spec.kind == "conv3d" else 2
        if len(o["kernel"]) != n or len(o["stride"]) != n:
            raise ValueError(f"{spec.kind} needs {n}-d kernel and stride")
        if not (pos(o["filters"]) and pos(o["kernel"]) and pos(o["stride"])):
            raise ValueError(f"{spec.kind}: non-positive hyperparameter in {o}")
    elif spec.kind in ("pool3d_max", "pool2d_max"):
        n = 3 if spec.kind == "pool3d_max" else 2
        if len(o["window"]) != n or not pos(o["window"]):
            raise ValueError(f"{spec.kind}: bad window {o.get('window')}")
    elif spec.kind == "dense":
        if not pos(o["units"]):
            raise ValueError("dense: units must be positive")
    elif spec.kind == "elu":
        if o.get("alpha", 1.0) <= 0:
            raise ValueError("elu: alpha must be positive")
    elif spec.kind == "batchnorm":
        if not 0.0 < o.get("momentum", 0.1) <= 1.0 or o.get("eps", 1e-5) <= 0:
            raise ValueError("batchnorm: momentum in (0,1], eps > 0")
    elif spec.kind == "reshape":
        if not pos(o["shape"]):
            raise ValueError("reshape: target dims must be positive")


# -- spec constructors -------------------------------------------------------


def conv3d(filters, kernel, stride, init="he"):
    return LayerSpec("conv3d", {"filters": filters, "kernel": tuple(kernel), "stride": tuple(stride), "init": init})


def conv2d(filters, kernel, stride=(1, 1), init="he"):
    return LayerSpec("conv2d", {"filters": filters, "kernel": tuple(kernel), "stride": tuple(stride), "init": init})


def pool3d_max(window):
    return LayerSpec("pool3d_max", {"window": tuple(window)})


def pool2d_max(window):
    return LayerSpec("pool2d_max", {"window": tuple(window)})


def dense(units, init="he"):
    return LayerSpec("dense", {"units": units, "init": init})


def relu():
    return LayerSpec("relu")


def elu(alpha=1.0):
    return LayerSpec("elu", {"alpha": alpha})


def batchnorm(momentum=0.1, eps=1e-5):
    return LayerSpec("batchnorm", {"momentum": momentum, "eps": eps})


def linear_out():
    return LayerSpec("linear_out")


def concat():
    return LayerSpec("concat")


def reshape(shape):
    return LayerSpec("reshape", {"shape": tuple(shape)})


def softmax():
    return LayerSpec("softmax")


# -- shape inference ---------------------------------------------------------


def out_shape(spec: LayerSpec, in_shape):
    """Per-sample output shape (batch axis excluded)."""
    k = spec.kind
    if k == "concat":
        if not all(len(s) == 1 for s in in_shape):
            raise ShapeError(f"concat expects flat inputs, got {in_shape}")
        return (sum(s[0] for s in in_shape),)
    if isinstance(in_shape[0], tuple):
        raise ShapeError(f"{k} cannot take multiple inputs")
    if k == "conv3d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv3d expects H x W x D input, got {in_shape}")
        dims = tuple(ops.conv_out_dim(n, kk, s) for n, kk, s in zip(in_shape, spec["kernel"], spec["stride"]))
        return dims + (spec["filters"],)
    if k == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects H x W x C input, got {in_shape}")
        dims = tuple(ops.conv_out_dim(n, kk, s) for n, kk, s in zip(in_shape[:2], spec["kernel"], spec["stride"]))
        return dims + (spec["filters"],)
    if k in ("pool3d_max", "pool2d_max"):
        win = spec["window"]
        if len(in_shape) != len(win) + 1:
            raise ShapeError(f"{k} window {win} does not fit input {in_shape}")
        for n, w in zip(in_shape, win):
            if w > n:
                raise ShapeError(f"{k} window {win} exceeds input {in_shape}")
        return tuple(n // w for n, w in zip(in_shape, win)) + (in_shape[-1],)
    if k == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {in_shape}")
        return (spec["units"],)
    if k == "reshape":
        if int(np.prod(spec["shape"])) != int(np.prod(in_shape)):
            raise ShapeError(f"cannot reshape {in_shape} to {spec['shape']}")
        return tuple(spec["shape"])
    return tuple(in_shape)


# -- parameter initialization -----------------------------------------------


def init_params(spec: LayerSpec, in_shape, rng: np.random.Generator, dtype):
    """Returns (trainable, state) dicts."""
    k = spec.kind
    if k in ("conv3d", "conv2d", "dense"):
        if k == "conv3d":
            wshape = (spec["filters"],) + spec["kernel"]
            fan_in = int(np.prod(spec["kernel"]))
            fan_out = spec["filters"] * fan_in
        elif k == "conv2d":
            wshape = (spec["filters"],) + spec["kernel"] + (in_shape[-1],)
            fan_in = int(np.prod(wshape[1:]))
            fan_out = spec["filters"] * int(np.prod(spec["kernel"]))
        else:
            wshape = (spec["units"], in_shape[0])
            fan_in, fan_out = in_shape[0], spec["units"]
        if spec.opts.get("init", "he") == "glorot":
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        else:
            limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=wshape).astype(dtype)
        return {"w": w, "b": np.zeros(wshape[0], dtype=dtype)}, {}
    if k == "batchnorm":
        c = in_shape[-1]
        return (
            {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)},
            {"running_mean": np.zeros(c, dtype=dtype), "running_var": np.ones(c, dtype=dtype)},
        )
    return {}, {}


# -- forward / backward ------------------------------------------------------


def forward(spec: LayerSpec, params: dict, state: dict, x, training: bool, update_stats: bool):
    """Returns (y, cache).  Batchnorm running statistics in ``state`` are
    updated in place when ``training and update_stats``."""
    k = spec.kind
    if k == "conv3d":
        return ops.conv3d_forward(x, params["w"], params["b"], spec["stride"])
    if k == "conv2d":
        return ops.conv2d_forward(x, params["w"], params["b"], spec["stride"])
    if k in ("pool3d_max", "pool2d_max"):
        return ops.maxpool_forward(x, spec["window"])
    if k == "dense":
        return x @ params["w"].T + params["b"], x
    if k == "relu":
        mask = x > 0
        return x * mask, mask
    if k == "elu":
        a = spec.opts.get("alpha", 1.0)
        neg = a * np.expm1(np.minimum(x, 0))
        y = np.where(x > 0, x, neg)
        return y, (x > 0, neg)
    if k == "batchnorm":
        return _bn_forward(spec, params, state, x, training, update_stats)
    if k == "linear_out":
        return x, None
    if k == "concat":
        widths = [a.shape[-1] for a in x]
        return np.concatenate(x, axis=-1), widths
    if k == "reshape":
        return x.reshape((x.shape[0],) + tuple(spec["shape"])), x.shape
    if k == "softmax":
        y = softmax_fn(x)
        return y, y
    raise AssertionError(k)


def backward(spec: LayerSpec, params: dict, cache, dy, need_dx: bool = True):
    """Returns (dx, grads) where grads mirrors the trainable params dict."""
    k = spec.kind
    if k == "conv3d":
        dx, dw, db = ops.conv3d_backward(cache, dy, need_dx)
        return dx, {"w": dw, "b": db}
    if k == "conv2d":
        dx, dw, db = ops.conv2d_backward(cache, dy, need_dx)
        return dx, {"w": dw, "b": db}
    if k in ("pool3d_max", "pool2d_max"):
        return ops.maxpool_backward(cache, dy), {}
    if k == "dense":
        x = cache
        dw = dy.T @ x
        db = dy.sum(axis=0)
        return (dy @ params["w"] if need_dx else None), {"w": dw, "b": db}
    if k == "relu":
        return dy * cache, {}
    if k == "elu":
        pos, neg = cache
        a = spec.opts.get("alpha", 1.0)
        return dy * np.where(pos, 1.0, neg + a).astype(dy.dtype, copy=False), {}
    if k == "batchnorm":
        return _bn_backward(params, cache, dy)
    if k == "linear_out":
        return dy, {}
    if k == "concat":
        splits = np.cumsum(cache)[:-1]
        return tuple(np.split(dy, splits, axis=-1)), {}
    if k == "reshape":
        return dy.reshape(cache), {}
    if k == "softmax":
        y = cache
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True)), {}
    raise AssertionError(k)


def kink_signature(spec: LayerSpec, cache):
    """Discrete activation pattern of a layer; gradients are only comparable
    by finite differences when this pattern is unchanged."""
    if spec.kind == "relu":
        return cache
    if spec.kind in ("pool3d_max", "pool2d_max"):
        return cache[3]
    if spec.kind == "elu":
        return cache[0]
    return None


def softmax_fn(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _bn_forward(spec, params, state, x, training, update_stats):
    eps = spec.opts.get("eps", 1e-5)
    axes = tuple(range(x.ndim - 1))
    if training:
        if x.shape[0] < 2:
            raise ValueError("batchnorm in train mode needs a batch of at least 2")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_stats:
            m = spec.opts.get("momentum", 0.1)
            state["running_mean"][...] = (1 - m) * state["running_mean"] + m * mu
            state["running_var"][...] = (1 - m) * state["running_var"] + m * var
    else:
        mu, var = state["running_mean"], state["running_var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    y = params["gamma"] * xhat + params["beta"]
    return y, (xhat, inv, training)


def _bn_backward(params, cache, dy):
    xhat, inv, training = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    g = params["gamma"] * inv
    if not training:
        return dy * g, {"gamma": dgamma, "beta": dbeta}
    n = int(np.prod([dy.shape[a] for a in axes]))
    dx = g * (dy - dbeta / n - xhat * dgamma / n)
    return dx, {"gamma": dgamma, "beta": dbeta}
