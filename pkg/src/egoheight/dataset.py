"""Recording schema, on-disk formats, and the synthetic corridor renderer.

Manifest file
    UTF-8 text, one video per line, tab-separated:
    ``video_id person_id mount background height_cm fps frame_count frame_width frame_height``.
    Lines starting with ``#`` are comments.  Frame archives live next to the
    manifest as ``<video_id>.egf``.

Frame archive (``.egf``)
    16-byte header: magic ``EGF1``, u32 frame_count, u16 width, u16 height,
    4 reserved zero bytes (little-endian), followed by ``frame_count`` raw
    row-major uint8 frames.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

MOUNTS = ("waist", "chest", "head")
BACKGROUNDS = ("static", "dynamic")
ARCHIVE_SUFFIX = ".egf"
MANIFEST_FIELDS = (
    "video_id",
    "person_id",
    "mount",
    "background",
    "height_cm",
    "fps",
    "frame_count",
    "frame_width",
    "frame_height",
)

_EGF_MAGIC = b"EGF1"
_EGF_HEADER = struct.Struct("<4sIHH4s")


class ManifestError(ValueError):
    pass


class ArchiveError(ValueError):
    pass


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    person_id: str
    mount: str
    background: str
    height_cm: float
    fps: float
    frame_count: int
    frame_width: int
    frame_height: int

    def __post_init__(self):
        if not self.video_id or any(c in self.video_id for c in "\t\n/\\"):
            raise ValueError(f"invalid video_id {self.video_id!r}")
        if self.mount not in MOUNTS:
            raise ValueError(f"mount must be one of {MOUNTS}, got {self.mount!r}")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}, got {self.background!r}")
        if not 50.0 <= self.height_cm <= 250.0:
            raise ValueError(f"height_cm {self.height_cm} outside [50, 250]")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")
        if self.frame_width < 1 or self.frame_height < 1:
            raise ValueError("frame dimensions must be positive")

    def to_row(self) -> str:
        return "\t".join(str(getattr(self, f)) for f in MANIFEST_FIELDS)

    @classmethod
    def from_row(cls, line: str) -> "VideoMeta":
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != len(MANIFEST_FIELDS):
            raise ValueError(f"expected {len(MANIFEST_FIELDS)} tab-separated fields, got {len(parts)}")
        vid, pid, mount, bg, h, fps, n, w, hh = parts
        return cls(vid, pid, mount, bg, float(h), float(fps), int(n), int(w), int(hh))


@dataclass
class Manifest:
    entries: list[VideoMeta]
    root_path: str

    def archive_path(self, meta_or_id) -> Path:
        vid = meta_or_id if isinstance(meta_or_id, str) else meta_or_id.video_id
        return Path(self.root_path) / f"{vid}{ARCHIVE_SUFFIX}"

    def persons(self) -> list[str]:
        return sorted({e.person_id for e in self.entries})

    def by_id(self) -> dict[str, VideoMeta]:
        return {e.video_id: e for e in self.entries}

    def filter(self, **kw) -> "Manifest":
        keep = [e for e in self.entries if all(getattr(e, k) == v for k, v in kw.items())]
        return Manifest(keep, self.root_path)


def write_manifest(path, entries) -> Path:
    path = Path(path)
    lines = ["# " + "\t".join(MANIFEST_FIELDS)]
    lines += [e.to_row() for e in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_manifest(path, check_archives: bool = True) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    entries: list[VideoMeta] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            meta = VideoMeta.from_row(line)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: malformed record: {exc}") from None
        if meta.video_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate video_id {meta.video_id!r}")
        seen.add(meta.video_id)
        entries.append(meta)
    manifest = Manifest(entries, str(path.parent))
    if check_archives:
        for meta in entries:
            arc = manifest.archive_path(meta)
            if not arc.is_file():
                raise ManifestError(f"{meta.video_id}: missing frame archive {arc}")
            n, w, h = read_archive_header(arc)
            if (n, w, h) != (meta.frame_count, meta.frame_width, meta.frame_height):
                raise ManifestError(
                    f"{meta.video_id}: archive holds {n} frames of {w}x{h}, manifest says "
                    f"{meta.frame_count} of {meta.frame_width}x{meta.frame_height}"
                )
    return manifest


# -- frame archives ----------------------------------------------------------


def write_frames(frames, meta: VideoMeta | None, root_path) -> Path:
    """Store uint8 grayscale frames as ``<root>/<video_id>.egf``."""
    frames = [np.asarray(f) for f in frames]
    if not frames:
        raise ArchiveError("no frames to write")
    h, w = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != (h, w):
            raise ArchiveError(f"frame {i} is {f.shape}, expected {(h, w)}")
        if f.dtype != np.uint8:
            raise ArchiveError(f"frame {i} has dtype {f.dtype}, expected uint8")
    if w > 0xFFFF or h > 0xFFFF:
        raise ArchiveError("frame dimensions exceed u16")
    root = Path(root_path)
    name = meta.video_id if meta is not None else "frames"
    path = root / f"{name}{ARCHIVE_SUFFIX}"
    with open(path, "wb") as fh:
        fh.write(_EGF_HEADER.pack(_EGF_MAGIC, len(frames), w, h, b"\0" * 4))
        for f in frames:
            fh.write(np.ascontiguousarray(f).tobytes())
    return path


def read_archive_header(path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        head = fh.read(_EGF_HEADER.size)
    if len(head) != _EGF_HEADER.size:
        raise ArchiveError(f"{path}: truncated header")
    magic, n, w, h, _ = _EGF_HEADER.unpack(head)
    if magic != _EGF_MAGIC:
        raise ArchiveError(f"{path}: bad magic {magic!r}")
    return n, w, h


def read_frames(path) -> np.ndarray:
    """Frames as a (n, height, width) uint8 array."""
    data = Path(path).read_bytes()
    if len(data) < _EGF_HEADER.size:
        raise ArchiveError(f"{path}: truncated header")
    magic, n, w, h, _ = _EGF_HEADER.unpack_from(data)
    if magic != _EGF_MAGIC:
        raise ArchiveError(f"{path}: bad magic {magic!r}")
    expected = _EGF_HEADER.size + n * w * h
    if len(data) != expected:
        raise ArchiveError(f"{path}: corrupt archive, {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype=np.uint8, offset=_EGF_HEADER.size).reshape(n, h, w).copy()


# -- synthetic corridor ------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """One synthetic walk down a textured corridor.

    World frame: x lateral (corridor spans +-width/2), y up (floor at 0), z
    along the corridor.  The camera looks down +z with an ideal pinhole.
    """

    camera_height_cm: float = 150.0
    corridor_width_m: float = 2.0
    corridor_height_m: float = 2.6
    corridor_length_m: float = 60.0
    walk_speed_mps: float = 1.2
    bob_amplitude_cm: float = 2.5
    sway_amplitude_cm: float = 2.0
    bob_frequency_hz: float = 1.8
    texture_seed: int = 0
    n_pedestrians: int = 0
    duration_s: float = 4.0
    fps: float = 15.0
    render_width: int = 64
    render_height: int = 64
    hfov_deg: float = 70.0
    start_z_m: float = 1.0
    supersample: int = 2

    def __post_init__(self):
        for name in ("corridor_width_m", "corridor_height_m", "corridor_length_m", "bob_frequency_hz",
                     "duration_s", "fps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.walk_speed_mps < 0:
            raise ValueError("walk_speed_mps must be non-negative")
        if self.bob_amplitude_cm < 0 or self.sway_amplitude_cm < 0:
            raise ValueError("bob/sway amplitudes must be non-negative")
        if self.n_pedestrians < 0:
            raise ValueError("n_pedestrians must be non-negative")
        if self.render_width < 1 or self.render_height < 1 or self.supersample < 1:
            raise ValueError("render size and supersample must be positive")
        if not 0 < self.hfov_deg < 180:
            raise ValueError("hfov_deg must be in (0, 180)")
        if not self.camera_height_cm < 100.0 * self.corridor_height_m:
            raise ValueError("camera_height_cm must be below the ceiling")
        if not self.bob_amplitude_cm < self.camera_height_cm:
            raise ValueError("bob_amplitude_cm must be smaller than camera_height_cm")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.fps))

    @property
    def focal_px(self) -> float:
        return 0.5 * self.render_width / math.tan(math.radians(self.hfov_deg) / 2)


@dataclass(frozen=True)
class CameraPose:
    x: float
    y: float
    z: float


def camera_pose(cfg: SynthConfig, t: float) -> CameraPose:
    """Camera position at time ``t`` (seconds); bob vertical, sway lateral at half the bob rate."""
    w = 2 * math.pi * cfg.bob_frequency_hz
    y = cfg.camera_height_cm / 100.0 + cfg.bob_amplitude_cm / 100.0 * math.sin(w * t)
    x = cfg.sway_amplitude_cm / 100.0 * math.sin(0.5 * w * t)
    z = cfg.start_z_m + cfg.walk_speed_mps * t
    return CameraPose(x, y, z)


def _check_path(cfg: SynthConfig) -> None:
    half = cfg.corridor_width_m / 2
    top = cfg.camera_height_cm + cfg.bob_amplitude_cm
    bottom = cfg.camera_height_cm - cfg.bob_amplitude_cm
    if top >= 100 * cfg.corridor_height_m or bottom <= 0:
        raise ValueError("camera path leaves the corridor vertically")
    if cfg.sway_amplitude_cm / 100.0 >= half:
        raise ValueError("camera sway reaches the corridor walls")
    end = cfg.start_z_m + cfg.walk_speed_mps * cfg.duration_s
    if cfg.start_z_m < 0 or end >= cfg.corridor_length_m - 0.5:
        raise ValueError(f"camera path (z up to {end:.2f} m) runs past the corridor end")


def _hash01(ix, iy, salt: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1)."""
    mask = np.uint64(0xFFFFFFFF)
    h = (ix.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B1)) & mask
    h ^= (iy.astype(np.int64).astype(np.uint64) * np.uint64(0x85EBCA77)) & mask
    h ^= np.uint64(salt & 0xFFFFFFFF)
    h = (h ^ (h >> np.uint64(15))) * np.uint64(0x2C1B3C6D) & mask
    h = (h ^ (h >> np.uint64(12))) * np.uint64(0x297A2D39) & mask
    h ^= h >> np.uint64(15)
    return (h & np.uint64(0xFFFFFF)).astype(np.float64) / float(1 << 24)


def value_noise(u: np.ndarray, v: np.ndarray, salt: int) -> np.ndarray:
    """Smooth value noise on the unit lattice, values in [0, 1]."""
    iu = np.floor(u)
    iv = np.floor(v)
    fu = u - iu
    fv = v - iv
    su = fu * fu * (3 - 2 * fu)
    sv = fv * fv * (3 - 2 * fv)
    iu = iu.astype(np.int64)
    iv = iv.astype(np.int64)
    a = _hash01(iu, iv, salt)
    b = _hash01(iu + 1, iv, salt)
    c = _hash01(iu, iv + 1, salt)
    d = _hash01(iu + 1, iv + 1, salt)
    return (a * (1 - su) + b * su) * (1 - sv) + (c * (1 - su) + d * su) * sv


# surface ids
FLOOR, CEILING, LEFT_WALL, RIGHT_WALL, END_WALL = range(5)
_SURFACE_BASE = {FLOOR: 0.22, CEILING: 0.88, LEFT_WALL: 0.62, RIGHT_WALL: 0.58, END_WALL: 0.45}
_TEXTURE_AMP = {FLOOR: 0.26, CEILING: 0.10, LEFT_WALL: 0.26, RIGHT_WALL: 0.26, END_WALL: 0.2}


@dataclass(frozen=True)
class Pedestrian:
    x: float
    z0: float
    vz: float
    width: float
    depth: float
    height: float
    shade: float
    salt: int

    def bounds(self, t: float):
        z = self.z0 + self.vz * t
        return (
            np.array([self.x - self.width / 2, 0.0, z - self.depth / 2]),
            np.array([self.x + self.width / 2, self.height, z + self.depth / 2]),
        )


def make_pedestrians(cfg: SynthConfig) -> list[Pedestrian]:
    rng = np.random.default_rng([cfg.texture_seed, 7919])
    half = cfg.corridor_width_m / 2
    peds = []
    for k in range(cfg.n_pedestrians):
        side = -1.0 if k % 2 == 0 else 1.0
        x = side * rng.uniform(0.45, max(0.46, half - 0.3))
        z0 = cfg.start_z_m + rng.uniform(3.0, 18.0)
        vz = rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.5)
        peds.append(
            Pedestrian(
                x=float(x),
                z0=float(z0),
                vz=float(vz),
                width=float(rng.uniform(0.4, 0.55)),
                depth=0.3,
                height=float(rng.uniform(1.55, 1.9)),
                shade=float(rng.uniform(0.3, 0.75)),
                salt=int(rng.integers(1, 2**31)),
            )
        )
    return peds


def camera_rays(cfg: SynthConfig) -> np.ndarray:
    """Unnormalized ray directions (Hs, Ws, 3) for the supersampled grid."""
    s = cfg.supersample
    Ws, Hs = cfg.render_width * s, cfg.render_height * s
    f = cfg.focal_px * s
    cols = np.arange(Ws) + 0.5 - Ws / 2
    rows = np.arange(Hs) + 0.5 - Hs / 2
    u, v = np.meshgrid(cols, rows)
    return np.stack([u / f, -v / f, np.ones_like(u)], axis=-1)


def cast(cfg: SynthConfig, pose: CameraPose, rays: np.ndarray, peds=(), t: float = 0.0):
    """Nearest hit per ray: returns (distance, surface id, intensity)."""
    dx, dy, dz = rays[..., 0], rays[..., 1], rays[..., 2]
    half = cfg.corridor_width_m / 2
    inf = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(dy < 0, -pose.y / dy, inf)
        t_ceil = np.where(dy > 0, (cfg.corridor_height_m - pose.y) / dy, inf)
        t_left = np.where(dx < 0, (-half - pose.x) / dx, inf)
        t_right = np.where(dx > 0, (half - pose.x) / dx, inf)
        t_end = (cfg.corridor_length_m - pose.z) / dz
    stack = np.stack([t_floor, t_ceil, t_left, t_right, t_end])
    sid = stack.argmin(axis=0)
    dist = stack.min(axis=0)

    hx = pose.x + dist * dx
    hy = pose.y + dist * dy
    hz = pose.z + dist * dz
    salt0 = cfg.texture_seed * 16
    tex = np.zeros_like(dist)
    base = np.zeros_like(dist)
    amp = np.zeros_like(dist)
    for s in range(5):
        m = sid == s
        if not m.any():
            continue
        if s in (FLOOR, CEILING):
            a, b = hx[m], hz[m]
        elif s in (LEFT_WALL, RIGHT_WALL):
            a, b = hz[m], hy[m]
        else:
            a, b = hx[m], hy[m]
        n = 0.7 * value_noise(a / 0.35, b / 0.35, salt0 + s) + 0.3 * value_noise(a / 0.12, b / 0.12, salt0 + 8 + s)
        tex[m] = n
        base[m] = _SURFACE_BASE[s]
        amp[m] = _TEXTURE_AMP[s]

    origin = np.array([pose.x, pose.y, pose.z])
    for k, ped in enumerate(peds):
        lo, hi = ped.bounds(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / rays
            t2 = (hi - origin) / rays
        tnear = np.nanmax(np.minimum(t1, t2), axis=-1)
        tfar = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (tnear <= tfar) & (tnear > 0) & (tnear < dist)
        if not hit.any():
            continue
        th = tnear[hit]
        px = pose.x + th * dx[hit]
        py = pose.y + th * dy[hit]
        pz = pose.z + th * dz[hit]
        n = value_noise((px + pz - ped.z0 - ped.vz * t) / 0.15, py / 0.15, ped.salt)
        dist[hit] = th
        sid[hit] = 5 + k
        tex[hit] = n
        base[hit] = ped.shade
        amp[hit] = 0.2

    intensity = base + amp * (tex - 0.5)
    # mild distance haze
    fog = np.exp(-dist / 40.0)
    intensity = intensity * fog + 0.5 * (1 - fog)
    return dist, sid, intensity


def render_frame(cfg: SynthConfig, t: float, rays=None, peds=None) -> np.ndarray:
    rays = camera_rays(cfg) if rays is None else rays
    peds = make_pedestrians(cfg) if peds is None else peds
    _, _, inten = cast(cfg, camera_pose(cfg, t), rays, peds, t)
    s = cfg.supersample
    inten = inten.reshape(cfg.render_height, s, cfg.render_width, s).mean(axis=(1, 3))
    return np.clip(np.rint(inten * 255.0), 0, 255).astype(np.uint8)


def render_synthetic(
    cfg: SynthConfig,
    video_id: str = "synthetic",
    person_id: str = "p00",
    mount: str = "chest",
) -> tuple[np.ndarray, VideoMeta]:
    """Render the walk described by ``cfg``; a pure function of its arguments."""
    _check_path(cfg)
    rays = camera_rays(cfg)
    peds = make_pedestrians(cfg)
    n = cfg.n_frames
    if n < 1:
        raise ValueError("duration_s * fps gives no frames")
    frames = np.empty((n, cfg.render_height, cfg.render_width), dtype=np.uint8)
    for i in range(n):
        frames[i] = render_frame(cfg, i / cfg.fps, rays, peds)
    meta = VideoMeta(
        video_id=video_id,
        person_id=person_id,
        mount=mount,
        background="dynamic" if cfg.n_pedestrians > 0 else "static",
        height_cm=float(cfg.camera_height_cm),
        fps=float(cfg.fps),
        frame_count=n,
        frame_width=cfg.render_width,
        frame_height=cfg.render_height,
    )
    return frames, meta


def floor_wall_row(cfg: SynthConfig, pose: CameraPose, col: float, side: int = 1) -> float:
    """Analytic image row (pixel units, 0 = top edge) of the floor/wall junction
    seen in image column ``col`` (pixel-center coordinate, e.g. ``c + 0.5``)."""
    cx, cy = cfg.render_width / 2, cfg.render_height / 2
    lateral = side * cfg.corridor_width_m / 2 - pose.x
    return cy + pose.y * (col - cx) / lateral


# -- cohort ------------------------------------------------------------------


@dataclass(frozen=True)
class PersonProfile:
    person_id: str
    heights_cm: dict  # mount -> camera height
    walk_speed_mps: float
    bob_amplitude_cm: float
    bob_frequency_hz: float
    sway_amplitude_cm: float
    texture_seed: int


def make_person(index: int, seed: int) -> PersonProfile:
    rng = np.random.default_rng([seed, index])
    head = rng.uniform(160.0, 188.0)
    chest = head - rng.uniform(28.0, 40.0)
    waist = max(85.0, head - rng.uniform(68.0, 82.0))
    return PersonProfile(
        person_id=f"p{index:02d}",
        heights_cm={"waist": round(float(waist), 1), "chest": round(float(chest), 1), "head": round(float(head), 1)},
        walk_speed_mps=float(rng.uniform(1.0, 1.35)),
        bob_amplitude_cm=float(rng.uniform(1.5, 3.5)),
        bob_frequency_hz=float(rng.uniform(1.6, 2.0)),
        sway_amplitude_cm=float(rng.uniform(1.0, 3.0)),
        texture_seed=int(rng.integers(0, 2**31)),
    )


@dataclass(frozen=True)
class CohortItem:
    cfg: SynthConfig
    video_id: str
    person_id: str
    mount: str


def make_cohort(
    n_persons: int = 10,
    seed: int = 0,
    backgrounds=BACKGROUNDS,
    duration_s: float = 10.0,
    fps: float = 30.0,
    render_size: tuple[int, int] = (64, 64),
    n_pedestrians: int = 3,
) -> list[CohortItem]:
    """persons x mounts x backgrounds walks.  Dynamic walks get pedestrians
    and a livelier gait (faster pace, stronger bob)."""
    items = []
    for p in range(n_persons):
        prof = make_person(p, seed)
        for mount in MOUNTS:
            for bg in backgrounds:
                dynamic = bg == "dynamic"
                cfg = SynthConfig(
                    camera_height_cm=prof.heights_cm[mount],
                    walk_speed_mps=prof.walk_speed_mps * (1.15 if dynamic else 1.0),
                    bob_amplitude_cm=prof.bob_amplitude_cm * (1.3 if dynamic else 1.0),
                    sway_amplitude_cm=prof.sway_amplitude_cm,
                    bob_frequency_hz=prof.bob_frequency_hz,
                    texture_seed=prof.texture_seed,
                    n_pedestrians=n_pedestrians if dynamic else 0,
                    duration_s=duration_s,
                    fps=fps,
                    render_width=render_size[0],
                    render_height=render_size[1],
                )
                vid = f"{prof.person_id}_{mount}_{bg}"
                items.append(CohortItem(cfg, vid, prof.person_id, mount))
    return items


def synth_config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)


__all__ = [
    "ARCHIVE_SUFFIX",
    "ArchiveError",
    "BACKGROUNDS",
    "CameraPose",
    "CohortItem",
    "MOUNTS",
    "Manifest",
    "ManifestError",
    "SynthConfig",
    "VideoMeta",
    "camera_pose",
    "cast",
    "floor_wall_row",
    "load_manifest",
    "make_cohort",
    "make_person",
    "read_archive_header",
    "read_frames",
    "render_frame",
    "render_synthetic",
    "write_frames",
    "write_manifest",
]
