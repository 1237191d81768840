"""Frames to network-ready clips.

A clip is a 4 s window at 15 fps.  The gray tensor stacks 60 downsampled
32x32 frames along depth.  The flow tensor stacks the 60 flow fields between
61 consecutive frames, interleaved per interval as ``u0, v0, u1, v1, ...``
(depth 120), each mapped from ``[-F, F]`` to ``[0, 1]``.

Clip cache file (``.egc``), little-endian::

    b"EGC1", u32 clip_count, u8 flags (bit0 flow, bit1 gray), u8 mount index,
    u16 video_id byte length, video_id (UTF-8), f64 label scale min, f64 max
    then per clip: u32 start_frame, f32 label_norm, f32 height_cm,
    flow f32[32*32*120] (if flagged), gray f32[32*32*60] (if flagged),
    arrays in row-major (row, column, depth) order.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import MOUNTS, VideoMeta

GRID = 32
CLIP_FPS = 15.0
FLOW_CLAMP = 4.0  # px at the 32x32 scale
LK_WINDOW = 5
LK_MIN_EIG = 1e-4
LK_ITERS = 4
PAPER_RANGE_CM = (85.0, 188.0)


@dataclass(frozen=True)
class LabelScale:
    min_cm: float
    max_cm: float

    def __post_init__(self):
        if not self.max_cm > self.min_cm:
            raise ValueError(f"LabelScale needs max_cm > min_cm, got {self.min_cm}, {self.max_cm}")

    @classmethod
    def fit(cls, heights) -> "LabelScale":
        h = np.asarray(list(heights), dtype=float)
        return cls(float(h.min()), float(h.max()))

    @classmethod
    def paper_range(cls) -> "LabelScale":
        return cls(*PAPER_RANGE_CM)

    def normalize(self, height_cm, clamp: bool = True):
        v = (np.asarray(height_cm, dtype=float) - self.min_cm) / (self.max_cm - self.min_cm)
        return np.clip(v, 0.0, 1.0) if clamp else v

    def denormalize(self, value):
        return self.min_cm + np.asarray(value, dtype=float) * (self.max_cm - self.min_cm)


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray


@dataclass
class ClipSample:
    flow_tensor: np.ndarray | None  # (32, 32, 120) float32 in [0, 1]
    gray_tensor: np.ndarray | None  # (32, 32, 60) float32 in [0, 1]
    label_norm: float
    source_video_id: str
    start_frame: int
    height_cm: float = float("nan")
    mount: str | None = None

    def __post_init__(self):
        if self.flow_tensor is None and self.gray_tensor is None:
            raise ValueError("ClipSample needs a flow or a gray tensor")
        if self.flow_tensor is not None and self.flow_tensor.shape != (GRID, GRID, 120):
            raise ValueError(f"flow tensor shape {self.flow_tensor.shape}")
        if self.gray_tensor is not None and self.gray_tensor.shape != (GRID, GRID, 60):
            raise ValueError(f"gray tensor shape {self.gray_tensor.shape}")


def normalize_fps(frames, src_fps: float, dst_fps: float = CLIP_FPS):
    """Nearest-index decimation to ``dst_fps``; output has floor(n*dst/src) frames."""
    if not dst_fps > 0:
        raise ValueError("dst_fps must be positive")
    if src_fps < dst_fps:
        raise ValueError(f"cannot raise frame rate from {src_fps} to {dst_fps}")
    n = len(frames)
    if src_fps == dst_fps:
        return frames
    n_out = int(np.floor(n * dst_fps / src_fps + 1e-9))
    idx = np.minimum(np.floor(np.arange(n_out) * (src_fps / dst_fps) + 0.5).astype(int), n - 1)
    if isinstance(frames, np.ndarray):
        return frames[idx]
    return [frames[i] for i in idx]


def _cell_edges(n: int, cells: int) -> np.ndarray:
    return (np.arange(cells) * n) // cells


def downsample_gray(image: np.ndarray, size: int = GRID) -> np.ndarray:
    """Area-average to ``size x size`` and scale 8-bit intensities to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"image {w}x{h} is smaller than {size}x{size}")
    re, ce = _cell_edges(h, size), _cell_edges(w, size)
    sums = np.add.reduceat(np.add.reduceat(img, re, axis=0), ce, axis=1)
    counts = np.outer(np.diff(np.append(re, h)), np.diff(np.append(ce, w)))
    return sums / counts / 255.0


def estimate_flow(prev: np.ndarray, nxt: np.ndarray, clamp: float = FLOW_CLAMP,
                  min_eig: float = LK_MIN_EIG, iters: int = LK_ITERS) -> FlowField:
    """Per-pixel Lucas-Kanade with a 5x5 window and warp refinement.

    ``u`` is displacement along columns, ``v`` along rows, so that
    ``nxt[y + v, x + u] ~ prev[y, x]``.  Pixels whose structure tensor has a
    smaller eigenvalue below ``min_eig`` get zero flow.
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape or prev.ndim != 2:
        raise ValueError(f"flow needs two equal 2-D grids, got {prev.shape} and {nxt.shape}")
    gy, gx = np.gradient(prev)

    def wsum(a):
        return ndimage.uniform_filter(a, size=LK_WINDOW, mode="constant") * LK_WINDOW**2

    sxx, syy, sxy = wsum(gx * gx), wsum(gy * gy), wsum(gx * gy)
    tr = sxx + syy
    det = sxx * syy - sxy * sxy
    lam_min = 0.5 * tr - np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
    valid = lam_min >= min_eig
    safe_det = np.where(valid, det, 1.0)

    u = np.zeros_like(prev)
    v = np.zeros_like(prev)
    rows, cols = np.mgrid[0 : prev.shape[0], 0 : prev.shape[1]].astype(np.float64)
    for _ in range(iters):
        warped = ndimage.map_coordinates(nxt, [rows + v, cols + u], order=1, mode="nearest")
        it = warped - prev
        bx, by = wsum(gx * it), wsum(gy * it)
        du = np.where(valid, -(syy * bx - sxy * by) / safe_det, 0.0)
        dv = np.where(valid, -(sxx * by - sxy * bx) / safe_det, 0.0)
        u = np.clip(u + du, -clamp, clamp)
        v = np.clip(v + dv, -clamp, clamp)
        if not (du.any() or dv.any()):
            break
    return FlowField(u, v)


def flow_to_unit(x, clamp: float = FLOW_CLAMP):
    return (np.asarray(x) + clamp) / (2 * clamp)


def video_grays(frames) -> np.ndarray:
    return np.stack([downsample_gray(f) for f in frames]).astype(np.float64)


def clip_starts(n_frames: int, window: int = 60, stride: int = 30) -> list[int]:
    return list(range(0, max(0, n_frames - (window + 1)) + 1, stride)) if n_frames >= window + 1 else []


def assemble_clips(
    frames,
    meta: VideoMeta,
    scale: LabelScale,
    window_s: float = 4.0,
    stride_s: float = 2.0,
    with_flow: bool = True,
    with_gray: bool = True,
) -> list[ClipSample]:
    """Slice a 15 fps frame sequence into overlapping clips.

    Needs 61 frames per clip (60 flow intervals).  Returns an empty list with
    a warning when the video is too short.
    """
    window = int(round(window_s * CLIP_FPS))
    stride = int(round(stride_s * CLIP_FPS))
    n = len(frames)
    starts = clip_starts(n, window, stride)
    if not starts:
        warnings.warn(f"{meta.video_id}: {n} frames is fewer than the {window + 1} needed for one clip")
        return []
    grays = video_grays(frames[: starts[-1] + window + 1])
    flows = None
    if with_flow:
        flows = np.empty((len(grays) - 1, GRID, GRID, 2))
        for t in range(len(grays) - 1):
            ff = estimate_flow(grays[t], grays[t + 1])
            flows[t, ..., 0] = ff.u
            flows[t, ..., 1] = ff.v
    label = float(scale.normalize(meta.height_cm))
    clips = []
    for s in starts:
        flow_t = gray_t = None
        if with_flow:
            block = flows[s : s + window]  # (60, 32, 32, 2)
            flow_t = flow_to_unit(block.transpose(1, 2, 0, 3).reshape(GRID, GRID, 2 * window)).astype(np.float32)
        if with_gray:
            gray_t = grays[s : s + window].transpose(1, 2, 0).astype(np.float32)
        clips.append(ClipSample(flow_t, gray_t, label, meta.video_id, s, float(meta.height_cm), meta.mount))
    return clips


def preprocess_video(frames, meta: VideoMeta, scale: LabelScale | None = None, **kw) -> list[ClipSample]:
    """fps normalization followed by clip assembly."""
    scale = scale or LabelScale.paper_range()
    frames15 = normalize_fps(frames, meta.fps, CLIP_FPS)
    return assemble_clips(frames15, meta, scale, **kw)


# -- clip cache --------------------------------------------------------------

_EGC_MAGIC = b"EGC1"


def write_clip_cache(path, clips: list[ClipSample], video_id: str, scale: LabelScale) -> Path:
    path = Path(path)
    has_flow = bool(clips) and clips[0].flow_tensor is not None
    has_gray = bool(clips) and clips[0].gray_tensor is not None
    mount = clips[0].mount if clips else None
    vid = video_id.encode("utf-8")
    parts = [
        _EGC_MAGIC,
        struct.pack("<IBBH", len(clips), int(has_flow) | (int(has_gray) << 1),
                    MOUNTS.index(mount) if mount in MOUNTS else 255, len(vid)),
        vid,
        struct.pack("<dd", scale.min_cm, scale.max_cm),
    ]
    for c in clips:
        parts.append(struct.pack("<Iff", c.start_frame, c.label_norm, c.height_cm))
        if has_flow:
            parts.append(np.ascontiguousarray(c.flow_tensor, dtype="<f4").tobytes())
        if has_gray:
            parts.append(np.ascontiguousarray(c.gray_tensor, dtype="<f4").tobytes())
    path.write_bytes(b"".join(parts))
    return path


def read_clip_cache(path) -> tuple[list[ClipSample], LabelScale]:
    data = Path(path).read_bytes()
    if data[:4] != _EGC_MAGIC:
        raise ValueError(f"{path}: not a clip cache")
    count, flags, mount_idx, vlen = struct.unpack_from("<IBBH", data, 4)
    off = 12
    vid = data[off : off + vlen].decode("utf-8")
    off += vlen
    lo, hi = struct.unpack_from("<dd", data, off)
    off += 16
    mount = MOUNTS[mount_idx] if mount_idx < len(MOUNTS) else None
    nflow, ngray = GRID * GRID * 120, GRID * GRID * 60
    clips = []
    for _ in range(count):
        start, label, height = struct.unpack_from("<Iff", data, off)
        off += 12
        flow = gray = None
        if flags & 1:
            flow = np.frombuffer(data, "<f4", nflow, off).reshape(GRID, GRID, 120).astype(np.float32)
            off += 4 * nflow
        if flags & 2:
            gray = np.frombuffer(data, "<f4", ngray, off).reshape(GRID, GRID, 60).astype(np.float32)
            off += 4 * ngray
        clips.append(ClipSample(flow, gray, float(label), vid, int(start), float(height), mount))
    if off != len(data):
        raise ValueError(f"{path}: corrupt clip cache")
    return clips, LabelScale(lo, hi)
