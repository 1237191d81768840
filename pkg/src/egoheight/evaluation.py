"""Evaluation protocols: leave-one-person-out, cross-domain, metrics, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dataset import BACKGROUNDS, Manifest, read_frames
from .models import (
    TrainConfig,
    class_labels,
    predict_proba,
    predict_video,
    train_model,
)
from .preprocess import LabelScale, preprocess_video, read_clip_cache, write_clip_cache

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("video_id", "true_cm", "predicted_cm")
SUMMARY_COLUMNS = ("experiment_id", "arch", "split_desc", "n_videos", "mae_cm", "mse_cm2", "r2", "seed",
                   "config_digest")
TABLE_COLUMNS = ("arch", "train_domain", "test_domain", "n_videos", "mae_cm", "mse_cm2", "r2")
SPLIT_KINDS = ("loo_person", "cross_domain", "kfold")


# -- metrics -----------------------------------------------------------------


class Metrics(NamedTuple):
    mae: float
    mse: float
    r2: float | None  # None when truths are constant


def metrics(pairs) -> Metrics:
    """MAE, MSE and r2 = 1 - SS_res / SS_tot over (true, predicted) pairs."""
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("metrics needs at least one pair")
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pairs must be (true, predicted)")
    t, p = arr[:, 0], arr[:, 1]
    e = p - t
    mae = float(np.mean(np.abs(e)))
    mse = float(np.mean(e * e))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = None if len(t) < 2 or ss_tot == 0.0 else 1.0 - float(np.sum(e * e)) / ss_tot
    return Metrics(mae, mse, r2)


# -- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    kind: str
    held_out: str

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise ValueError(f"split kind must be one of {SPLIT_KINDS}, got {self.kind!r}")

    def check(self, train_units, test_units) -> None:
        leak = set(train_units) & set(test_units)
        if leak:
            raise AssertionError(f"{self.kind} split {self.held_out}: held-out units in training: {sorted(leak)}")


@dataclass
class EvalReport:
    experiment_id: str
    arch: str
    split_desc: str
    per_video: list  # (video_id, true_cm, predicted_cm)
    mae_cm: float
    mse_cm2: float
    r2: float | None
    seed: int
    config_digest: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.per_video = [(str(v), float(t), float(p)) for v, t, p in self.per_video]
        if not self.per_video:
            raise ValueError("EvalReport needs at least one per-video prediction")
        if self.mae_cm < 0:
            raise ValueError("mae must be non-negative")
        if self.r2 is not None and self.r2 > 1.0 + 1e-12:
            raise ValueError("r2 cannot exceed 1")

    @classmethod
    def from_predictions(cls, experiment_id, arch, split_desc, per_video, seed, config_digest, extra=None):
        m = metrics([(t, p) for _, t, p in per_video])
        return cls(experiment_id, arch, split_desc, list(per_video), m.mae, m.mse, m.r2, seed, config_digest,
                   dict(extra or {}))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_video"] = [list(r) for r in self.per_video]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["per_video"] = [tuple(r) for r in d["per_video"]]
        return cls(**d)

    def summary_row(self) -> dict:
        return {
            "experiment_id": self.experiment_id, "arch": self.arch, "split_desc": self.split_desc,
            "n_videos": len(self.per_video), "mae_cm": self.mae_cm, "mse_cm2": self.mse_cm2, "r2": self.r2,
            "seed": self.seed, "config_digest": self.config_digest,
        }


def _fmt(v):
    if v is None:
        return "nan"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        values = [r[c] for c in columns] if isinstance(r, dict) else list(r)
        w.writerow([_fmt(v) for v in values])
    return buf.getvalue()


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_summary.csv")


def emit_report(report: EvalReport, path, format: str = "csv") -> list[Path]:
    """Write a report.  CSV writes per-video rows to ``path`` and the metrics
    to ``<stem>_summary.csv``; JSON writes everything to ``path``."""
    path = Path(path)
    if format == "json":
        path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
        return [path]
    if format != "csv":
        raise ValueError(f"format must be csv or json, got {format!r}")
    path.write_text(_csv_text(REPORT_COLUMNS, report.per_video), encoding="utf-8")
    spath = summary_path(path)
    spath.write_text(_csv_text(SUMMARY_COLUMNS, [report.summary_row()]), encoding="utf-8")
    return [path, spath]


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def emit_scatter(report: EvalReport, path) -> Path:
    """Two columns per video: true_cm, predicted_cm."""
    path = Path(path)
    path.write_text(_csv_text(("true_cm", "predicted_cm"), [(t, p) for _, t, p in report.per_video]),
                    encoding="utf-8")
    return path


def emit_table(reports, path) -> Path:
    """Cross-domain table: one row per (arch, train domain, test domain)."""
    path = Path(path)
    path.write_text(_csv_text(TABLE_COLUMNS, [table_row(r) for r in reports]), encoding="utf-8")
    return path


def table_row(r: EvalReport) -> dict:
    return {"arch": r.arch, "train_domain": r.extra.get("train_domain", ""),
            "test_domain": r.extra.get("test_domain", ""), "n_videos": len(r.per_video),
            "mae_cm": r.mae_cm, "mse_cm2": r.mse_cm2, "r2": r.r2}


# -- clips -------------------------------------------------------------------


@dataclass
class ClipBank:
    """Preprocessed clips of every video of a manifest."""

    metas: dict  # video_id -> VideoMeta
    clips: dict  # video_id -> list[ClipSample]

    def persons(self) -> list[str]:
        return sorted({m.person_id for m in self.metas.values()})

    def videos(self, person: str | None = None, background: str | None = None, exclude_person=None) -> list[str]:
        return [v for v, m in sorted(self.metas.items())
                if (person is None or m.person_id == person)
                and (background is None or m.background == background)
                and (exclude_person is None or m.person_id != exclude_person)]

    def gather(self, video_ids) -> list[ClipSample]:
        return [c for v in video_ids for c in self.clips[v]]

    def subset(self, video_ids) -> "ClipBank":
        ids = set(video_ids)
        return ClipBank({v: m for v, m in self.metas.items() if v in ids},
                        {v: c for v, c in self.clips.items() if v in ids})


def load_clips(manifest: Manifest, cache_dir=None, with_flow: bool = True, with_gray: bool = True) -> ClipBank:
    """Preprocess every manifest video, reusing ``<cache_dir>/<video_id>.egc`` when present."""
    metas, clips = {}, {}
    scale = LabelScale.paper_range()
    cache = Path(cache_dir) if cache_dir else None
    for meta in manifest.entries:
        metas[meta.video_id] = meta
        cpath = cache / f"{meta.video_id}.egc" if cache else None
        if cpath is not None and cpath.is_file():
            clips[meta.video_id], _ = read_clip_cache(cpath)
            continue
        frames = read_frames(manifest.archive_path(meta))
        cs = preprocess_video(frames, meta, scale, with_flow=with_flow, with_gray=with_gray)
        clips[meta.video_id] = cs
        if cpath is not None:
            cpath.parent.mkdir(parents=True, exist_ok=True)
            write_clip_cache(cpath, cs, meta.video_id, scale)
    return ClipBank(metas, clips)


def _bank(source, cache_dir=None) -> ClipBank:
    return source if isinstance(source, ClipBank) else load_clips(source, cache_dir)


# -- protocols ---------------------------------------------------------------


def _train(arch, clips, config, stream_cache, key):
    """Train ``arch``; two-stream archs reuse streams trained on the same clips."""
    if not arch.startswith("twostream") or stream_cache is None:
        return train_model(arch, clips, config)
    streams = {}
    for name in ("temporal", "spatial"):
        k = (key, name, config.digest())
        if k not in stream_cache:
            stream_cache[k] = train_model(name, clips, config)
        streams[name] = stream_cache[k]
    return train_model(arch, clips, config, streams=streams)


def run_loo(source, arch: str, config: TrainConfig | None = None, background: str | None = None,
            experiment_id: str | None = None, stream_cache: dict | None = None, cache_dir=None) -> EvalReport:
    """Leave-one-person-out regression: pooled per-video predictions and metrics.

    ``source`` is a Manifest or a ClipBank.  Passing the same ``stream_cache``
    dict to several calls shares trained single streams between the
    temporal, spatial and two-stream runs of a fold.
    """
    cfg = config or TrainConfig()
    bank = _bank(source, cache_dir)
    if background is not None:
        bank = bank.subset(bank.videos(background=background))
    persons = bank.persons()
    if len(persons) < 2:
        raise ValueError(f"leave-one-person-out needs at least two persons, got {len(persons)}")
    for p in persons:
        if not bank.gather(bank.videos(person=p)):
            raise ValueError(f"person {p} has no usable clips")
    per_video = []
    for p in persons:
        plan = SplitPlan("loo_person", p)
        train_v = bank.videos(exclude_person=p)
        test_v = [v for v in bank.videos(person=p) if bank.clips[v]]
        plan.check({bank.metas[v].person_id for v in train_v}, {p})
        art = _train(arch, bank.gather(train_v), cfg, stream_cache, ("loo", background, p))
        for v in test_v:
            per_video.append((v, bank.metas[v].height_cm, predict_video(art, bank.clips[v])))
        log.info("LOO %s: held out %s", arch, p)
    split = "loo_person" + (f"[{background}]" if background else "")
    return EvalReport.from_predictions(experiment_id or f"{arch}_{split}", arch, split, per_video, cfg.seed,
                                       cfg.digest())


def run_loo_classifier(source, bins: int, config: TrainConfig | None = None, background: str | None = None,
                       cache_dir=None) -> dict:
    """Leave-one-person-out accuracy of a classifier-head network.

    A video's class is the argmax of its clip-averaged probabilities.
    Returns video-level and clip-level accuracy plus per-video rows.
    """
    cfg = config or TrainConfig()
    bank = _bank(source, cache_dir)
    if background is not None:
        bank = bank.subset(bank.videos(background=background))
    persons = bank.persons()
    if len(persons) < 2:
        raise ValueError("leave-one-person-out needs at least two persons")
    rows, clip_hits, clip_total = [], 0, 0
    for p in persons:
        train_v = bank.videos(exclude_person=p)
        SplitPlan("loo_person", p).check({bank.metas[v].person_id for v in train_v}, {p})
        art = train_model(f"classifier{bins}", bank.gather(train_v), cfg)
        for v in bank.videos(person=p):
            cs = bank.clips[v]
            if not cs:
                continue
            proba = predict_proba(art, cs)
            truth = int(class_labels(cs[:1], bins)[0])
            rows.append((v, truth, int(np.argmax(proba.mean(axis=0)))))
            clip_hits += int(np.sum(np.argmax(proba, axis=1) == truth))
            clip_total += len(cs)
    if not rows:
        raise ValueError("no usable clips")
    acc = float(np.mean([t == q for _, t, q in rows]))
    return {"bins": bins, "accuracy": acc, "clip_accuracy": clip_hits / clip_total, "per_video": rows,
            "seed": cfg.seed, "config_digest": cfg.digest()}


def run_cross_domain(source, arch: str, train_domain: str, test_domain: str, config: TrainConfig | None = None,
                     cache_dir=None) -> EvalReport:
    """Train on every video of one background setting, test on another."""
    cfg = config or TrainConfig()
    for d in (train_domain, test_domain):
        if d not in BACKGROUNDS:
            raise ValueError(f"domain must be one of {BACKGROUNDS}, got {d!r}")
    if train_domain == test_domain:
        warnings.warn(f"train and test domain are both {train_domain!r}: this run tests on training data")
    bank = _bank(source, cache_dir)
    train_v = [v for v in bank.videos(background=train_domain) if bank.clips[v]]
    test_v = [v for v in bank.videos(background=test_domain) if bank.clips[v]]
    if not train_v or not test_v:
        raise ValueError(f"empty domain: {len(train_v)} {train_domain} / {len(test_v)} {test_domain} videos")
    if train_domain != test_domain:
        SplitPlan("cross_domain", test_domain).check(train_v, test_v)
    art = train_model(arch, bank.gather(train_v), cfg)
    per_video = [(v, bank.metas[v].height_cm, predict_video(art, bank.clips[v])) for v in test_v]
    split = f"train_{train_domain}_test_{test_domain}"
    return EvalReport.from_predictions(f"{arch}_{split}", arch, split, per_video, cfg.seed, cfg.digest(),
                                       {"train_domain": train_domain, "test_domain": test_domain})


def run_robustness(source, archs=("temporal", "spatial"), config: TrainConfig | None = None,
                   cache_dir=None) -> list[EvalReport]:
    """The four cross-domain rows per arch: trained on static or dynamic, tested on the other."""
    bank = _bank(source, cache_dir)
    reports = []
    for arch in archs:
        for train_d, test_d in (("static", "dynamic"), ("dynamic", "static")):
            reports.append(run_cross_domain(bank, arch, train_d, test_d, config))
    return reports


def dynamic_training_helps(reports, arch: str = "temporal") -> bool | None:
    """Soft check: is train-on-dynamic MAE <= train-on-static MAE for ``arch``?

    Warns (never raises) when the direction is reversed.
    """
    by = {r.extra.get("train_domain"): r for r in reports if r.arch == arch}
    if not {"static", "dynamic"} <= set(by):
        return None
    ok = by["dynamic"].mae_cm <= by["static"].mae_cm
    if not ok:
        warnings.warn(f"{arch}: train-on-dynamic MAE {by['dynamic'].mae_cm:.2f} exceeds "
                      f"train-on-static MAE {by['static'].mae_cm:.2f}")
    return ok
