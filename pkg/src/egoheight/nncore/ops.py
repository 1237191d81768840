"""Array kernels for the network layers.

Everything is batch-first and channel-last.  ``conv3d`` takes a single-channel
volume ``(B, H, W, D)`` and produces ``(B, H', W', D', K)``; ``conv2d`` takes
``(B, H, W, C)`` and produces ``(B, H', W', K)``.  All convolutions are "valid"
(no padding).
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def conv_out_dim(n: int, k: int, s: int) -> int:
    if k > n:
        raise ShapeError(f"kernel extent {k} exceeds input extent {n}")
    return (n - k) // s + 1


# ---------------------------------------------------------------------------
# conv3d via polyphase FFT
#
# A stride-s valid correlation is split into s0*s1*s2 stride-1 correlations,
# one per input phase x[r0::s0, r1::s1, r2::s2] against the matching kernel
# phase w[r0::s0, ...].  Each phase pair is correlated in the frequency domain
# and the phases are summed there, which turns the whole layer into one
# (batch x phase) @ (phase x kernel) contraction per frequency bin.
# ---------------------------------------------------------------------------


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class _Plan3d:
    def __init__(self, in_shape, kshape, stride):
        H, W, D = in_shape
        kh, kw, kd = kshape
        self.stride = tuple(stride)
        self.out = tuple(conv_out_dim(n, k, s) for n, k, s in zip(in_shape, kshape, stride))
        self.in_phase = tuple(_ceil_div(n, s) for n, s in zip(in_shape, stride))
        self.k_phase = tuple(_ceil_div(k, s) for k, s in zip(kshape, stride))
        # correlation must not wrap: n + m < N for n < out, m < k_phase
        self.fft = tuple(max(a, o + k - 1) for a, o, k in zip(self.in_phase, self.out, self.k_phase))
        self.offsets = list(itertools.product(*(range(s) for s in stride)))
        self.in_shape = (H, W, D)
        self.kshape = (kh, kw, kd)


def _to_phases(a: np.ndarray, stride, size) -> np.ndarray:
    """(..., H, W, D) -> (..., P, *size) zero-padded phase stack."""
    lead = a.shape[:-3]
    out = np.zeros(lead + (int(np.prod(stride)),) + tuple(size), dtype=a.dtype)
    for p, (r0, r1, r2) in enumerate(itertools.product(*(range(s) for s in stride))):
        ph = a[..., r0::stride[0], r1::stride[1], r2::stride[2]]
        out[..., p, : ph.shape[-3], : ph.shape[-2], : ph.shape[-1]] = ph
    return out


def _from_phases(ph: np.ndarray, stride, full) -> np.ndarray:
    """Inverse of ``_to_phases``: (..., P, h, w, d) -> (..., *full)."""
    lead = ph.shape[:-4]
    out = np.empty(lead + tuple(full), dtype=ph.dtype)
    for p, (r0, r1, r2) in enumerate(itertools.product(*(range(s) for s in stride))):
        dst = out[..., r0::stride[0], r1::stride[1], r2::stride[2]]
        dst[...] = ph[..., p, : dst.shape[-3], : dst.shape[-2], : dst.shape[-1]]
    return out


def _complex_dtype(dtype) -> np.dtype:
    return np.complex64 if np.dtype(dtype) == np.float32 else np.complex128


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride):
    """Valid strided 3D correlation.

    x: (B, H, W, D), w: (K, kh, kw, kd), b: (K,).  Returns ``(y, cache)`` with
    y of shape (B, H', W', D', K).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv3d expects (B,H,W,D) input and (K,kh,kw,kd) kernels, got {x.shape} and {w.shape}")
    plan = _Plan3d(x.shape[1:], w.shape[1:], stride)
    B, K = x.shape[0], w.shape[0]
    axes = (-3, -2, -1)
    xf = sfft.rfftn(_to_phases(x, plan.stride, plan.fft), axes=axes)
    wf = sfft.rfftn(_to_phases(w, plan.stride, plan.fft), axes=axes)
    fshape = xf.shape[-3:]
    P = xf.shape[1]
    xf2 = xf.reshape(B, P, -1)
    wf2 = wf.reshape(K, P, -1)
    yf = np.einsum("bpf,kpf->bkf", xf2, wf2.conj(), optimize=True).reshape((B, K) + fshape)
    y = sfft.irfftn(yf, s=plan.fft, axes=axes)
    Ho, Wo, Do = plan.out
    y = y[..., :Ho, :Wo, :Do].astype(x.dtype, copy=False)
    y = np.ascontiguousarray(np.moveaxis(y, 1, -1)) + b
    return y, (plan, xf2, wf2, fshape)


def conv3d_backward(cache, dy: np.ndarray, need_dx: bool = True):
    """Returns (dx or None, dw, db)."""
    plan, xf2, wf2, fshape = cache
    axes = (-3, -2, -1)
    B, K = dy.shape[0], dy.shape[-1]
    db = dy.sum(axis=(0, 1, 2, 3))
    dyk = np.moveaxis(dy, -1, 1)  # (B, K, Ho, Wo, Do)
    pad = np.zeros((B, K) + plan.fft, dtype=dy.dtype)
    Ho, Wo, Do = plan.out
    pad[..., :Ho, :Wo, :Do] = dyk
    dyf = sfft.rfftn(pad, axes=axes).reshape(B, K, -1)

    # dW_{k,p} = sum_b corr(x_{b,p}, dy_{b,k})
    dwf = np.einsum("bpf,bkf->kpf", xf2, dyf.conj(), optimize=True)
    dwp = sfft.irfftn(dwf.reshape(dwf.shape[:2] + fshape), s=plan.fft, axes=axes)
    kp = plan.k_phase
    dwp = dwp[..., : kp[0], : kp[1], : kp[2]]
    dw = _from_phases(dwp, plan.stride, plan.kshape).astype(dy.dtype, copy=False)

    dx = None
    if need_dx:
        # dx_{b,p} = sum_k conv(dy_{b,k}, w_{k,p})
        dxf = np.einsum("bkf,kpf->bpf", dyf, wf2, optimize=True)
        dxp = sfft.irfftn(dxf.reshape(dxf.shape[:2] + fshape), s=plan.fft, axes=axes)
        ip = plan.in_phase
        dxp = dxp[..., : ip[0], : ip[1], : ip[2]]
        dx = _from_phases(dxp, plan.stride, plan.in_shape).astype(dy.dtype, copy=False)
    return dx, dw, db


# ---------------------------------------------------------------------------
# conv2d via im2col (the 2D layer is tiny: 4x4x60 -> 2x2x100)
# ---------------------------------------------------------------------------


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride=(1, 1)):
    """x: (B, H, W, C), w: (K, kh, kw, C) -> (B, H', W', K)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[-1] != w.shape[-1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernels {w.shape}")
    kh, kw = w.shape[1:3]
    sh, sw = stride
    Ho = conv_out_dim(x.shape[1], kh, sh)
    Wo = conv_out_dim(x.shape[2], kw, sw)
    cols = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :Ho, :Wo]
    # cols: (B, Ho, Wo, C, kh, kw)
    y = np.tensordot(cols, w.transpose(3, 1, 2, 0), axes=([3, 4, 5], [0, 1, 2])) + b
    return y, (x.shape, cols, w, stride)


def conv2d_backward(cache, dy: np.ndarray, need_dx: bool = True):
    xshape, cols, w, (sh, sw) = cache
    kh, kw = w.shape[1:3]
    Ho, Wo = dy.shape[1:3]
    db = dy.sum(axis=(0, 1, 2))
    dw = np.tensordot(dy, cols, axes=([0, 1, 2], [0, 1, 2]))  # (K, C, kh, kw)
    dw = dw.transpose(0, 2, 3, 1)
    dx = None
    if need_dx:
        dx = np.zeros(xshape, dtype=dy.dtype)
        for a in range(kh):
            for c in range(kw):
                dx[:, a : a + sh * Ho : sh, c : c + sw * Wo : sw, :] += dy @ w[:, a, c, :]
    return dx, dw, db


# ---------------------------------------------------------------------------
# max pooling over disjoint windows, any number of spatial axes
# ---------------------------------------------------------------------------


def maxpool_forward(x: np.ndarray, window):
    """x: (B, *spatial, C) with len(spatial) == len(window); stride == window."""
    nsp = len(window)
    spatial = x.shape[1:-1]
    if len(spatial) != nsp:
        raise ShapeError(f"pool over {nsp} axes got input {x.shape}")
    for n, k in zip(spatial, window):
        if k > n:
            raise ShapeError(f"pool window {tuple(window)} exceeds input {x.shape}")
    outs = tuple(n // k for n, k in zip(spatial, window))
    crop = x[(slice(None),) + tuple(slice(0, o * k) for o, k in zip(outs, window))]
    B, C = x.shape[0], x.shape[-1]
    split = [B]
    for o, k in zip(outs, window):
        split += [o, k]
    split.append(C)
    v = crop.reshape(split)
    # (B, o0, k0, o1, k1, ..., C) -> (B, o0, o1, ..., C, k0, k1, ...)
    perm = [0] + [1 + 2 * i for i in range(nsp)] + [1 + 2 * nsp] + [2 + 2 * i for i in range(nsp)]
    v = v.transpose(perm).reshape((B,) + outs + (C, -1))
    idx = v.argmax(axis=-1)
    y = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return y, (x.shape, tuple(window), outs, idx)


def maxpool_backward(cache, dy: np.ndarray) -> np.ndarray:
    xshape, window, outs, idx = cache
    nsp = len(window)
    B, C = xshape[0], xshape[-1]
    flat = np.zeros(dy.shape + (int(np.prod(window)),), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
    v = flat.reshape((B,) + outs + (C,) + tuple(window))
    inv = [0]
    for i in range(nsp):
        inv += [1 + i, 2 + nsp + i]
    inv.append(1 + nsp)
    v = v.transpose(inv).reshape((B,) + tuple(o * k for o, k in zip(outs, window)) + (C,))
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[(slice(None),) + tuple(slice(0, o * k) for o, k in zip(outs, window))] = v
    return dx
