"""Temporal, spatial, two-stream and classifier networks, plus training.

Temporal stream (flow, 32x32x120)::

    conv3d 30@17x17x20 /(2,2,4) -> relu -> maxpool 2x2x13 -> [4x4, 60 ch]
    -> conv2d 100@3x3 -> relu -> maxpool 2x2 -> dense 400 -> relu
    -> dense 50 -> relu -> dense 1 (linear)

The spatial stream (gray, 32x32x60) uses conv3d 30@17x17x10 /(2,2,2) and
batchnorm + ELU in place of ReLU.  After 3D pooling the depth axis (2) is
folded into channels, ordered depth-major (channel = depth * 30 + kernel).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BinScheme, assign_bin
from .nncore import Network, ShapeError, layers as L
from .nncore.losses import mse_loss, softmax_cross_entropy
from .nncore.optim import make_optimizer
from .nncore.serialize import load_model, model_bytes, save_model
from .preprocess import ClipSample, LabelScale

log = logging.getLogger(__name__)

ARCHS = ("temporal", "spatial", "twostream1", "twostream50", "classifier3", "classifier5", "classifier11")
TEMPORAL_INPUT = (32, 32, 120)
SPATIAL_INPUT = (32, 32, 60)
CLASSIFIER_SCHEMES = {3: "mount3", 5: "cm5", 11: "cm11"}

# every dimension stated for the temporal network
TEMPORAL_SHAPES = [
    (8, 8, 26, 30),  # conv3d
    (8, 8, 26, 30),  # relu
    (4, 4, 2, 30),  # pool3d
    (4, 4, 60),  # fold depth into channels
    (2, 2, 100),  # conv2d
    (2, 2, 100),
    (1, 1, 100),  # pool2d
    (100,),
    (400,),
    (400,),
    (50,),
    (50,),
    (1,),
    (1,),
]


def _stream_tail(conv3d_filters, conv2d_filters, dense_units, act, norm):
    d1, d2 = dense_units
    post = ([L.batchnorm()] if norm else []) + [act()]
    return (
        post
        + [L.pool3d_max((2, 2, 13)), L.reshape((4, 4, 2 * conv3d_filters)), L.conv2d(conv2d_filters, (3, 3))]
        + post
        + [L.pool2d_max((2, 2)), L.reshape((conv2d_filters,)), L.dense(d1)]
        + post
        + [L.dense(d2)]
        + post
    )


def build_temporal(conv3d_filters: int = 30, conv2d_filters: int = 100, dense_units=(400, 50)) -> Network:
    specs = (
        [L.conv3d(conv3d_filters, (17, 17, 20), (2, 2, 4))]
        + _stream_tail(conv3d_filters, conv2d_filters, dense_units, L.relu, norm=False)
        + [L.dense(1, init="glorot"), L.linear_out()]
    )
    net = Network(specs, TEMPORAL_INPUT)
    if (conv3d_filters, conv2d_filters, tuple(dense_units)) == (30, 100, (400, 50)):
        _require_shapes(net, TEMPORAL_SHAPES, "temporal")
    return net


def build_spatial(conv3d_filters: int = 30, conv2d_filters: int = 100, dense_units=(400, 50)) -> Network:
    specs = (
        [L.conv3d(conv3d_filters, (17, 17, 10), (2, 2, 2))]
        + _stream_tail(conv3d_filters, conv2d_filters, dense_units, L.elu, norm=True)
        + [L.dense(1, init="glorot"), L.linear_out()]
    )
    net = Network(specs, SPATIAL_INPUT)
    if (conv3d_filters, conv2d_filters, tuple(dense_units)) == (30, 100, (400, 50)):
        # same chain as the temporal stream with a batchnorm before every activation
        core = [s for s, spec in zip(net.shapes, net.specs) if spec.kind != "batchnorm"]
        _require_shapes_list(core, TEMPORAL_SHAPES, "spatial")
    return net


def _require_shapes(net: Network, expected, name):
    _require_shapes_list(net.shapes, expected, name)


def _require_shapes_list(shapes, expected, name):
    if len(shapes) != len(expected):
        raise ShapeError(f"{name}: {len(shapes)} layers, expected {len(expected)}")
    for i, (got, want) in enumerate(zip(shapes, expected)):
        if tuple(got) != tuple(want):
            raise ShapeError(f"{name}: layer {i} output {got}, expected {want}")


def feature_layer(net: Network) -> int:
    """Index of the final dense layer; layers before it produce the penultimate features."""
    dense = [i for i, s in enumerate(net.specs) if s.kind == "dense"]
    return dense[-1]


def build_head(width: int) -> Network:
    return Network([L.concat(), L.dense(1, init="glorot"), L.linear_out()], ((width,), (width,)))


@dataclass
class TwoStream:
    """Two stream sub-networks joined by a trained dense head.

    ``join="at_1"`` concatenates the two scalar outputs; ``join="at_50"``
    concatenates the penultimate (50-unit) activations.
    """

    temporal: Network
    spatial: Network
    head: Network
    join: str

    def stream_views(self):
        if self.join == "at_1":
            return self.temporal, self.spatial
        return (
            self.temporal.truncated(feature_layer(self.temporal)),
            self.spatial.truncated(feature_layer(self.spatial)),
        )

    def features(self, flow, gray, batch_size: int = 64):
        t, s = self.stream_views()
        return t.predict(flow, batch_size), s.predict(gray, batch_size)

    def predict(self, flow, gray, batch_size: int = 64):
        ft, fs = self.features(flow, gray, batch_size)
        return self.head.predict((ft, fs), batch_size)

    def init_head_from_streams(self):
        """Head starts as the average of the two stream predictions."""
        dt = self.head.dtype
        if self.join == "at_1":
            w = np.array([[0.5, 0.5]], dtype=dt)
            b = np.zeros(1, dtype=dt)
        else:
            it, is_ = feature_layer(self.temporal), feature_layer(self.spatial)
            wt, bt = self.temporal.params[it]["w"], self.temporal.params[it]["b"]
            ws, bs = self.spatial.params[is_]["w"], self.spatial.params[is_]["b"]
            w = 0.5 * np.concatenate([wt, ws], axis=1).astype(dt)
            b = (0.5 * (bt + bs)).astype(dt)
        self.head.params[1]["w"] = w
        self.head.params[1]["b"] = b


def build_twostream(join: str, **widths) -> TwoStream:
    if join not in ("at_1", "at_50"):
        raise ValueError(f"join must be 'at_1' or 'at_50', got {join!r}")
    t, s = build_temporal(**widths), build_spatial(**widths)
    if join == "at_1":
        width = t.output_shape[0]
    else:
        width = t.shapes[feature_layer(t) - 1][0]
    head = build_head(width)
    if not widths:
        expected = 1 if join == "at_1" else 50
        if head.shapes[0] != (2 * expected,):
            raise ShapeError(f"fusion input width {head.shapes[0]}, expected {(2 * expected,)}")
    return TwoStream(t, s, head, join)


def build_classifier(bins: int, base: str = "spatial", **widths) -> Network:
    if bins not in CLASSIFIER_SCHEMES:
        raise ValueError(f"bins must be one of {sorted(CLASSIFIER_SCHEMES)}, got {bins}")
    net = build_temporal(**widths) if base == "temporal" else build_spatial(**widths) if base == "spatial" else None
    if net is None:
        raise ValueError(f"unknown classifier base {base!r}")
    specs = net.specs[:-2] + [L.dense(bins, init="glorot"), L.softmax()]
    return Network(specs, net.input_shape)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0
    fixed_label_scale: bool = False
    fine_tune: bool = False
    classifier_base: str = "spatial"
    head_epochs: int = 200
    widths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _take(x, idx):
    if isinstance(x, tuple):
        return tuple(a[idx] for a in x)
    return x[idx]


def _batches(idx: np.ndarray, batch_size: int):
    n = len(idx)
    out = [idx[s : s + batch_size] for s in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def _loss(kind, pred, target):
    if kind == "mse":
        return mse_loss(pred, target)
    return softmax_cross_entropy(pred, target)


def fit_network(net: Network, x, y, cfg: TrainConfig, loss: str = "mse", stop: int | None = None,
                max_epochs: int | None = None) -> dict:
    """Minibatch training with early stopping on a held-out fraction.

    ``stop`` limits the forward pass to the first ``stop`` layers (used to
    train classifiers on logits, skipping the final softmax).  The best
    parameters by validation loss are restored at the end.
    """
    rng = np.random.default_rng(cfg.seed)
    n = len(y)
    perm = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n >= 10 else 0
    val_idx, tr_idx = np.sort(perm[:n_val]), perm[n_val:]
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    params = net.trainable()
    best = (np.inf, None)
    history = {"train": [], "val": []}
    bad = 0
    epochs = cfg.max_epochs if max_epochs is None else max_epochs
    for epoch in range(epochs):
        order = rng.permutation(tr_idx)
        total = 0.0
        for b in _batches(order, cfg.batch_size):
            out, caches = net.forward(_take(x, b), training=True, stop=stop)
            lv, d = _loss(loss, out, y[b])
            grads, _ = net.backward(caches, d.astype(out.dtype), need_input_grad=False)
            opt.step(params, net.flat_grads(grads))
            total += lv * len(b)
        history["train"].append(total / max(len(tr_idx), 1))
        if n_val:
            vout = _predict(net, _take(x, val_idx), stop)
            vl, _ = _loss(loss, vout, y[val_idx])
            history["val"].append(vl)
            if vl < best[0]:
                best = (vl, _snapshot(net))
                bad = 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
    if best[1] is not None:
        _restore(net, best[1])
    history["epochs"] = len(history["train"])
    return history


def _snapshot(net: Network):
    return [({k: v.copy() for k, v in p.items()}, {k: v.copy() for k, v in s.items()})
            for p, s in zip(net.params, net.state)]


def _restore(net: Network, snap):
    for i, (p, s) in enumerate(snap):
        for k, v in p.items():
            net.params[i][k][...] = v
        for k, v in s.items():
            net.state[i][k][...] = v


def _predict(net: Network, x, stop=None, batch_size: int = 64):
    n = x[0].shape[0] if isinstance(x, tuple) else x.shape[0]
    outs = [net.forward(_take(x, slice(s, s + batch_size)), stop=stop)[0] for s in range(0, n, batch_size)]
    return np.concatenate(outs, axis=0)


def train_steps(net: Network, x, y, n_steps: int, lr: float = 1e-3, target_loss: float | None = None,
                optimizer: str = "adam") -> list[float]:
    """Full-batch optimization for a fixed step budget (overfitting checks)."""
    opt = make_optimizer(optimizer, lr)
    params = net.trainable()
    losses = []
    for _ in range(n_steps):
        out, caches = net.forward(x, training=True)
        lv, d = mse_loss(out, y)
        losses.append(lv)
        if target_loss is not None and lv < target_loss:
            break
        grads, _ = net.backward(caches, d.astype(out.dtype), need_input_grad=False)
        opt.step(params, net.flat_grads(grads))
    return losses


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


@dataclass
class ModelArtifact:
    arch: str
    networks: dict  # name -> Network
    label_scale: LabelScale
    train_config_digest: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")

    @property
    def is_classifier(self) -> bool:
        return self.arch.startswith("classifier")

    @property
    def bins(self) -> int | None:
        return int(self.arch[len("classifier"):]) if self.is_classifier else None

    def twostream(self) -> TwoStream:
        join = "at_1" if self.arch == "twostream1" else "at_50"
        n = self.networks
        return TwoStream(n["temporal"], n["spatial"], n["head"], join)

    def input_kinds(self) -> tuple[str, ...]:
        if self.arch == "temporal":
            return ("flow",)
        if self.arch == "spatial":
            return ("gray",)
        if self.arch.startswith("twostream"):
            return ("flow", "gray")
        return ("flow",) if self.extra.get("base") == "temporal" else ("gray",)

    def raw_outputs(self, clips: list[ClipSample]) -> np.ndarray:
        """Normalized regression outputs (N,) or class probabilities (N, bins)."""
        if not clips:
            raise ValueError("empty clip list")
        if self.arch.startswith("twostream"):
            flow, gray = stack_inputs(clips, "flow"), stack_inputs(clips, "gray")
            return self.twostream().predict(flow, gray)[:, 0]
        x = stack_inputs(clips, self.input_kinds()[0])
        out = self.networks["main"].predict(x)
        return out if self.is_classifier else out[:, 0]

    def meta(self) -> dict:
        return {"arch": self.arch, "train_config_digest": self.train_config_digest, "extra": self.extra}

    def to_bytes(self) -> bytes:
        return model_bytes(self.meta(), (self.label_scale.min_cm, self.label_scale.max_cm), self.networks)

    def save(self, path) -> Path:
        return save_model(path, self.meta(), (self.label_scale.min_cm, self.label_scale.max_cm), self.networks)

    @classmethod
    def load(cls, path) -> "ModelArtifact":
        meta, scale, networks = load_model(path)
        art = cls(meta["arch"], networks, LabelScale(*scale), meta.get("train_config_digest", ""),
                  meta.get("extra", {}))
        _check_arch(art)
        return art


def _check_arch(art: ModelArtifact) -> None:
    """The stored chain must match the canonical chain for the arch tag."""
    widths = art.extra.get("widths", {})
    if art.arch == "temporal":
        ref = {"main": build_temporal(**widths)}
    elif art.arch == "spatial":
        ref = {"main": build_spatial(**widths)}
    elif art.arch.startswith("twostream"):
        ts = build_twostream("at_1" if art.arch == "twostream1" else "at_50", **widths)
        ref = {"temporal": ts.temporal, "spatial": ts.spatial, "head": ts.head}
    else:
        ref = {"main": build_classifier(art.bins, art.extra.get("base", "spatial"), **widths)}
    if set(ref) != set(art.networks):
        raise ValueError(f"{art.arch}: stored networks {sorted(art.networks)} != {sorted(ref)}")
    for k, net in ref.items():
        if [s.to_json() for s in net.specs] != [s.to_json() for s in art.networks[k].specs]:
            raise ValueError(f"{art.arch}: stored '{k}' chain does not match the canonical architecture")


def save_model_artifact(art: ModelArtifact, path) -> Path:
    return art.save(path)


def load_model_artifact(path) -> ModelArtifact:
    return ModelArtifact.load(path)


def stack_inputs(clips: list[ClipSample], kind: str) -> np.ndarray:
    attr = "flow_tensor" if kind == "flow" else "gray_tensor"
    arrs = [getattr(c, attr) for c in clips]
    if any(a is None for a in arrs):
        raise ValueError(f"clip without a {kind} tensor")
    return np.stack(arrs).astype(np.float32, copy=False)


def class_labels(clips: list[ClipSample], bins: int) -> np.ndarray:
    scheme = BinScheme.named(CLASSIFIER_SCHEMES[bins])
    if scheme.kind == "mount3":
        return np.array([assign_bin(c.mount, scheme) for c in clips])
    return np.array([assign_bin(c.height_cm, scheme) for c in clips])


def _label_scale(clips, cfg: TrainConfig) -> LabelScale:
    if cfg.fixed_label_scale:
        return LabelScale.paper_range()
    heights = [c.height_cm for c in clips]
    if max(heights) > min(heights):
        return LabelScale.fit(heights)
    return LabelScale.paper_range()


def train_model(arch: str, clips: list[ClipSample], config: TrainConfig | None = None,
                streams: dict | None = None) -> ModelArtifact:
    """Train ``arch`` on clips.

    For two-stream archs, already trained stream artifacts may be passed as
    ``streams={"temporal": art, "spatial": art}``; they are then reused (and
    frozen unless ``config.fine_tune``).
    """
    cfg = config or TrainConfig()
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}")
    if not clips:
        raise ValueError("train_model needs at least one clip")
    widths = dict(cfg.widths)
    digest = cfg.digest()

    if arch.startswith("classifier"):
        bins = int(arch[len("classifier"):])
        net = build_classifier(bins, cfg.classifier_base, **widths).init(cfg.seed)
        kind = "flow" if cfg.classifier_base == "temporal" else "gray"
        x = stack_inputs(clips, kind)
        y = class_labels(clips, bins)
        hist = fit_network(net, x, y, cfg, loss="softmax_ce", stop=len(net.specs) - 1)
        log.info("%s trained for %d epochs", arch, hist["epochs"])
        return ModelArtifact(arch, {"main": net}, LabelScale.paper_range(), digest,
                             {"base": cfg.classifier_base, "widths": widths})

    scale = _label_scale(clips, cfg)
    y = scale.normalize([c.height_cm for c in clips]).astype(np.float32)[:, None]

    if arch in ("temporal", "spatial"):
        net = (build_temporal if arch == "temporal" else build_spatial)(**widths).init(cfg.seed)
        x = stack_inputs(clips, "flow" if arch == "temporal" else "gray")
        hist = fit_network(net, x, y, cfg)
        log.info("%s trained for %d epochs", arch, hist["epochs"])
        return ModelArtifact(arch, {"main": net}, scale, digest, {"widths": widths})

    # two-stream
    join = "at_1" if arch == "twostream1" else "at_50"
    ts = build_twostream(join, **widths)
    streams = streams or {}
    for name in ("temporal", "spatial"):
        if name in streams:
            art = streams[name]
            if art.label_scale != scale:
                raise ValueError(f"pretrained {name} stream uses a different label scale")
            setattr(ts, name, art.networks["main"].copy())
        else:
            setattr(ts, name, train_model(name, clips, cfg).networks["main"])
    ts.head.init(cfg.seed)
    ts.init_head_from_streams()
    flow, gray = stack_inputs(clips, "flow"), stack_inputs(clips, "gray")
    if cfg.fine_tune:
        _fine_tune(ts, flow, gray, y, cfg)
    else:
        ft, fs = ts.features(flow, gray)
        hist = fit_network(ts.head, (ft, fs), y, cfg, max_epochs=cfg.head_epochs)
        log.info("%s head trained for %d epochs", arch, hist["epochs"])
    nets = {"temporal": ts.temporal, "spatial": ts.spatial, "head": ts.head}
    return ModelArtifact(arch, nets, scale, digest, {"widths": widths})


def _fine_tune(ts: TwoStream, flow, gray, y, cfg: TrainConfig) -> None:
    """End-to-end training of both streams and the head."""
    rng = np.random.default_rng(cfg.seed)
    t_view, s_view = ts.stream_views()
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    params = t_view.trainable() + s_view.trainable() + ts.head.trainable()
    for _ in range(cfg.head_epochs):
        for b in _batches(rng.permutation(len(y)), cfg.batch_size):
            ot, ct = t_view.forward(flow[b], training=True)
            os_, cs = s_view.forward(gray[b], training=True)
            out, ch = ts.head.forward((ot, os_), training=True)
            _, d = mse_loss(out, y[b])
            gh, (dt, ds) = ts.head.backward(ch, d.astype(out.dtype))
            gt, _ = t_view.backward(ct, dt, need_input_grad=False)
            gs, _ = s_view.backward(cs, ds, need_input_grad=False)
            opt.step(params, t_view.flat_grads(gt) + s_view.flat_grads(gs) + ts.head.flat_grads(gh))


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def predict_clip(art: ModelArtifact, clip: ClipSample) -> float:
    if art.is_classifier:
        raise ValueError("predict_clip returns heights; use predict_proba for classifiers")
    return float(art.label_scale.denormalize(art.raw_outputs([clip])[0]))


def predict_clips(art: ModelArtifact, clips: list[ClipSample]) -> np.ndarray:
    return art.label_scale.denormalize(art.raw_outputs(clips))


def predict_video(art: ModelArtifact, clips: list[ClipSample]) -> float:
    """Mean of the per-clip height estimates of one video."""
    if not clips:
        raise ValueError("predict_video needs at least one clip")
    return float(np.mean(predict_clips(art, clips)))


def predict_proba(art: ModelArtifact, clips: list[ClipSample]) -> np.ndarray:
    if not art.is_classifier:
        raise ValueError(f"{art.arch} is not a classifier")
    return art.raw_outputs(clips)


def predict_video_class(art: ModelArtifact, clips: list[ClipSample]) -> int:
    return int(np.argmax(predict_proba(art, clips).mean(axis=0)))


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------

REDUCED_WIDTHS = {"conv3d_filters": 2, "conv2d_filters": 3, "dense_units": (6, 4)}


def gradcheck_cases(seed: int = 0) -> list[tuple[str, Network, object, bool]]:
    """(name, network, input batch, training) covering every layer kind plus
    reduced-width temporal and spatial chains at full input size."""
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-1.0, 1.0, shape)

    cases = [
        ("conv3d+pool3d", Network([L.conv3d(2, (3, 3, 4), (2, 2, 2)), L.pool3d_max((2, 2, 2)),
                                   L.reshape((16,)), L.dense(2), L.linear_out()], (9, 9, 10)), u(2, 9, 9, 10), False),
        ("conv2d+pool2d", Network([L.conv2d(3, (3, 3)), L.relu(), L.pool2d_max((2, 2)), L.reshape((12,)),
                                   L.dense(2), L.linear_out()], (6, 6, 2)), u(2, 6, 6, 2), False),
        ("dense+elu", Network([L.dense(5), L.elu(), L.dense(3), L.relu(), L.dense(1, init="glorot"),
                               L.linear_out()], (4,)), u(3, 4), False),
        ("batchnorm(train)", Network([L.dense(5), L.batchnorm(), L.elu(), L.dense(1)], (4,)), u(4, 4), True),
        ("batchnorm(eval)", Network([L.dense(5), L.batchnorm(), L.elu(), L.dense(1)], (4,)), u(4, 4), False),
        ("softmax", Network([L.dense(4), L.softmax()], (3,)), u(3, 3), False),
        ("concat", Network([L.concat(), L.dense(2), L.linear_out()], ((3,), (2,))), (u(2, 3), u(2, 2)), False),
        ("temporal(reduced)", build_temporal(**REDUCED_WIDTHS), u(2, *TEMPORAL_INPUT), False),
        ("spatial(reduced,train)", build_spatial(**REDUCED_WIDTHS), u(3, *SPATIAL_INPUT), True),
        ("spatial(reduced,eval)", build_spatial(**REDUCED_WIDTHS), u(2, *SPATIAL_INPUT), False),
    ]
    for i, (_, net, x, training) in enumerate(cases):
        for attempt in range(50):
            _init_for_gradcheck(net, x, training, np.random.default_rng([seed, i, attempt]))
            if not dead_arrays(net, x, training):
                break
        else:
            raise RuntimeError(f"gradcheck case {cases[i][0]}: no live initialization found")
    return cases


def _init_for_gradcheck(net: Network, x, training: bool, rng) -> None:
    net.init(int(rng.integers(2**31)), dtype=np.float64)
    for p in net.params:  # positive biases keep the small relu chains alive
        if "b" in p:
            p["b"][...] = rng.uniform(0.05, 0.3, p["b"].shape)
    for st in net.state:  # non-trivial running statistics for eval-mode batchnorm
        if "running_var" in st:
            st["running_mean"][...] = rng.uniform(-0.5, 0.5, st["running_mean"].shape)
            st["running_var"][...] = rng.uniform(0.5, 2.0, st["running_var"].shape)


def dead_arrays(net: Network, x, training: bool = False) -> list[str]:
    """Parameter arrays whose gradient is identically zero for this input,
    which would make a finite-difference check vacuous."""
    out, caches = net.forward(x, training=training, update_stats=False)
    proj = np.random.default_rng(0).standard_normal(out.shape)
    grads, _ = net.backward(caches, proj, need_input_grad=False)
    return [f"{i}.{k}" for i, g in enumerate(grads) for k, v in g.items() if not np.any(v)]


def gradcheck_suite(tolerance: float = 1e-4, seed: int = 0, max_entries: int = 12) -> list[tuple[str, object]]:
    from .nncore import gradcheck

    return [(name, gradcheck(net, x, tolerance=tolerance, training=training, max_entries=max_entries, seed=seed))
            for name, net, x, training in gradcheck_cases(seed)]
