"""Classical frame classifiers: HOG / raw-pixel descriptors with a linear SVC."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import MOUNTS

HEIGHT_ORIGIN_CM = 85.0
HEIGHT_TOP_CM = 188.0
FRAME_STRIDE = 15
SVC_ITERS = 2000  # accuracy on the synthetic cohort is unchanged from 2000 to 10000
ACCURACY_COLUMNS = ("scheme", "descriptor", "kernel", "split", "accuracy", "seed")


# -- bins --------------------------------------------------------------------


@dataclass(frozen=True)
class BinScheme:
    kind: str  # mount3 | cm5 | cm11
    edges_cm: tuple = ()

    def __post_init__(self):
        if self.kind not in ("mount3", "cm5", "cm11"):
            raise ValueError(f"unknown bin scheme {self.kind!r}")
        e = self.edges_cm
        if self.kind != "mount3" and any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError("bin edges must be strictly increasing")

    @classmethod
    def named(cls, kind: str) -> "BinScheme":
        if kind == "mount3":
            return cls("mount3")
        width = {"cm5": 25.0, "cm11": 10.0}.get(kind)
        if width is None:
            raise ValueError(f"unknown bin scheme {kind!r}")
        n = int((HEIGHT_TOP_CM - HEIGHT_ORIGIN_CM) // width) + 1
        edges = tuple(HEIGHT_ORIGIN_CM + width * i for i in range(n)) + (HEIGHT_TOP_CM,)
        return cls(kind, edges)

    @property
    def n_classes(self) -> int:
        return 3 if self.kind == "mount3" else len(self.edges_cm) - 1

    @property
    def width_cm(self) -> float:
        return self.edges_cm[1] - self.edges_cm[0]


def assign_bin(value, scheme: BinScheme) -> int:
    """Mount name -> 0/1/2 for ``mount3``; height in cm -> bin index otherwise."""
    if scheme.kind == "mount3":
        if value not in MOUNTS:
            raise ValueError(f"unknown mount {value!r}")
        return MOUNTS.index(value)
    h = float(value)
    lo, hi = scheme.edges_cm[0], scheme.edges_cm[-1]
    if not lo <= h <= hi:
        raise ValueError(f"height {h} cm outside [{lo}, {hi}] for scheme {scheme.kind}")
    return min(int(math.floor((h - lo) / scheme.width_cm)), scheme.n_classes - 1)


def video_label(meta, scheme: BinScheme) -> int:
    return assign_bin(meta.mount if scheme.kind == "mount3" else meta.height_cm, scheme)


# -- descriptors -------------------------------------------------------------


@dataclass(frozen=True)
class HogConfig:
    cell_px: int = 8
    orientations: int = 9
    block_cells: int = 2
    image_size: tuple = (64, 64)  # (w, h)
    clip: float = 0.2

    def __post_init__(self):
        w, h = self.image_size
        if w % self.cell_px or h % self.cell_px:
            raise ValueError("image dimensions must be divisible by cell_px")
        if self.orientations < 2:
            raise ValueError("need at least two orientation bins")

    @property
    def length(self) -> int:
        w, h = self.image_size
        bx = w // self.cell_px - self.block_cells + 1
        by = h // self.cell_px - self.block_cells + 1
        return bx * by * self.block_cells**2 * self.orientations


def hog_descriptor(image: np.ndarray, cfg: HogConfig = HogConfig()) -> np.ndarray:
    from skimage.feature import hog

    img = np.asarray(image, dtype=np.float64)
    w, h = cfg.image_size
    if img.shape != (h, w):
        raise ValueError(f"image shape {img.shape} does not match HOG image size {(h, w)}")
    if cfg.clip != 0.2:
        raise ValueError("only the standard L2-Hys clip of 0.2 is supported")
    return hog(
        img,
        orientations=cfg.orientations,
        pixels_per_cell=(cfg.cell_px, cfg.cell_px),
        cells_per_block=(cfg.block_cells, cfg.block_cells),
        block_norm="L2-Hys",
        feature_vector=True,
    )


def raw_descriptor(image: np.ndarray) -> np.ndarray:
    from .preprocess import downsample_gray

    return downsample_gray(image).ravel()


def describe(image, descriptor: str, hog_cfg: HogConfig = HogConfig()) -> np.ndarray:
    if descriptor == "hog":
        img = np.asarray(image)
        w, h = hog_cfg.image_size
        if img.shape != (h, w):
            from skimage.transform import resize

            img = resize(img.astype(np.float64), (h, w), anti_aliasing=True, preserve_range=True)
        return hog_descriptor(img, hog_cfg)
    if descriptor == "raw":
        return raw_descriptor(image)
    raise ValueError(f"unknown descriptor {descriptor!r}")


# -- linear SVC --------------------------------------------------------------


@dataclass
class LinearSvcModel:
    weights: np.ndarray  # (n_classes, d)
    biases: np.ndarray  # (n_classes,)
    mean: np.ndarray
    scale: np.ndarray
    scheme: BinScheme | None = None
    descriptor: str = ""

    def decision_function(self, features) -> np.ndarray:
        z = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weights.T + self.biases

    def predict(self, features) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class index
        return np.argmax(self.decision_function(features), axis=1)


def train_svc(features, labels, scheme: BinScheme | None = None, C: float = 1.0, n_iter: int = SVC_ITERS,
              n_classes: int | None = None, descriptor: str = "") -> LinearSvcModel:
    """One-vs-rest linear SVM by full-batch subgradient descent.

    Each class minimizes ``(1/2C)|w|^2 + mean_i hinge(y_i (w.x_i + b))`` on
    standardized features with the Pegasos step size ``C/t``; the iterate is
    projected onto the ball of radius ``sqrt(C)`` that contains the optimum.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (n, d) with one label per row")
    present = np.unique(y)
    if len(present) < 2:
        raise ValueError("train_svc needs at least two classes")
    K = n_classes or (scheme.n_classes if scheme else int(y.max()) + 1)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (X - mean) / scale
    Y = np.where(y[:, None] == np.arange(K)[None, :], 1.0, -1.0)  # (n, K)
    lam = 1.0 / C
    radius = 1.0 / math.sqrt(lam)
    W = np.zeros((K, Z.shape[1]))
    b = np.zeros(K)
    n = len(Z)
    for t in range(1, n_iter + 1):
        margins = Y * (Z @ W.T + b)
        viol = (margins < 1.0) * Y  # (n, K)
        eta = 1.0 / (lam * t)
        W = (1.0 - eta * lam) * W + (eta / n) * (viol.T @ Z)
        b = b + (eta / n) * viol.sum(axis=0)
        norms = np.linalg.norm(W, axis=1)
        shrink = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
        W *= shrink[:, None]
    return LinearSvcModel(W, b, mean, scale, scheme, descriptor)


def accuracy(model: LinearSvcModel, features, labels) -> float:
    return float(np.mean(model.predict(features) == np.asarray(labels)))


# -- datasets of frames ------------------------------------------------------


@dataclass
class FrameVideo:
    """Frames of one recording plus its metadata, with a descriptor cache."""

    frames: np.ndarray  # (n, h, w) uint8
    meta: object
    _cache: dict = field(default_factory=dict, repr=False)

    def features(self, idx, descriptor: str) -> np.ndarray:
        out = []
        for i in idx:
            key = (descriptor, int(i))
            if key not in self._cache:
                self._cache[key] = describe(self.frames[int(i)], descriptor)
            out.append(self._cache[key])
        return np.stack(out)


def _strided(video: FrameVideo, stride: int = FRAME_STRIDE) -> np.ndarray:
    return np.arange(0, len(video.frames), stride)


def _gather(videos, picks, descriptor, scheme):
    X, y = [], []
    for v, idx in zip(videos, picks):
        if len(idx) == 0:
            continue
        X.append(v.features(idx, descriptor))
        y.append(np.full(len(idx), video_label(v.meta, scheme)))
    return np.concatenate(X), np.concatenate(y)


def kfold_cv(videos, k: int = 3, scheme: BinScheme | str = "mount3", descriptor: str = "hog", seed: int = 0,
             C: float = 1.0, n_iter: int = SVC_ITERS, max_redraws: int = 100) -> dict:
    """k-fold cross-validation over every 15th frame of every video.

    Returns ``{"accuracy": mean, "folds": [...], "seed": seed_used}``.
    """
    scheme = BinScheme.named(scheme) if isinstance(scheme, str) else scheme
    X, y = _gather(videos, [_strided(v) for v in videos], descriptor, scheme)
    n = len(y)
    if n < k or k < 2:
        raise ValueError(f"{n} samples is too few for {k}-fold cross-validation")
    classes = np.unique(y)
    for attempt in range(max_redraws):
        rng = np.random.default_rng(seed + attempt)
        folds = np.array_split(rng.permutation(n), k)
        if all(set(np.delete(y, f)) >= set(classes) for f in folds):
            break
    else:
        raise ValueError("could not draw folds with every class present in training")
    accs = []
    for f in folds:
        train = np.setdiff1d(np.arange(n), f)
        model = train_svc(X[train], y[train], scheme, C=C, n_iter=n_iter, descriptor=descriptor)
        accs.append(accuracy(model, X[f], y[f]))
    return {"accuracy": float(np.mean(accs)), "folds": accs, "seed": seed + attempt}


def _by_person(videos):
    persons = sorted({v.meta.person_id for v in videos})
    return persons, {p: [v for v in videos if v.meta.person_id == p] for p in persons}


def loo_accuracy(videos, scheme: BinScheme | str = "mount3", descriptor: str = "hog", C: float = 1.0,
                 n_iter: int = SVC_ITERS, train_stride: int = FRAME_STRIDE, budget: int | None = None,
                 seed: int = 0) -> float:
    """Leave-one-person-out frame accuracy, pooled over all test frames.

    Training frames are every ``train_stride``-th frame, or ``budget`` frames
    drawn at random from each training video when ``budget`` is given.  Test
    frames are every 15th frame of the held-out person's videos.
    """
    scheme = BinScheme.named(scheme) if isinstance(scheme, str) else scheme
    persons, groups = _by_person(videos)
    if len(persons) < 2:
        raise ValueError("leave-one-person-out needs at least two persons")
    rng = np.random.default_rng(seed)
    correct = total = 0
    for p in persons:
        train_v = [v for q in persons if q != p for v in groups[q]]
        if budget is None:
            picks = [np.arange(0, len(v.frames), train_stride) for v in train_v]
        else:
            picks = [np.sort(rng.choice(len(v.frames), size=budget, replace=False)) for v in train_v]
        Xtr, ytr = _gather(train_v, picks, descriptor, scheme)
        Xte, yte = _gather(groups[p], [_strided(v) for v in groups[p]], descriptor, scheme)
        if len(np.unique(ytr)) < 2:
            raise ValueError(f"fold holding out {p}: training data has a single class")
        model = train_svc(Xtr, ytr, scheme, C=C, n_iter=n_iter, descriptor=descriptor)
        correct += int(np.sum(model.predict(Xte) == yte))
        total += len(yte)
    return correct / total


def frame_budget_curve(videos, budgets=(1, 5, 20, 50, 75), scheme: BinScheme | str = "mount3",
                       descriptor: str = "hog", seeds=(0, 1, 2), C: float = 1.0, n_iter: int = SVC_ITERS) -> list[dict]:
    """LOO accuracy when each training video contributes only ``budget`` random frames.

    Returns one row per (budget, seed) in the accuracy-CSV layout plus
    summary rows (``seed="mean"`` / ``seed="std"``) per budget.
    """
    scheme_obj = BinScheme.named(scheme) if isinstance(scheme, str) else scheme
    shortest = min(len(v.frames) for v in videos)
    if max(budgets) > shortest:
        raise ValueError(f"budget {max(budgets)} exceeds the shortest video ({shortest} frames)")
    rows = []
    for b in budgets:
        accs = []
        for s in seeds:
            acc = loo_accuracy(videos, scheme_obj, descriptor, C=C, n_iter=n_iter, budget=b, seed=s)
            accs.append(acc)
            rows.append(accuracy_row(scheme_obj.kind, descriptor, f"loo_budget{b}", acc, s))
        rows.append(accuracy_row(scheme_obj.kind, descriptor, f"loo_budget{b}", float(np.mean(accs)), "mean"))
        rows.append(accuracy_row(scheme_obj.kind, descriptor, f"loo_budget{b}", float(np.std(accs)), "std"))
    return rows


def accuracy_row(scheme, descriptor, split, acc, seed, kernel: str = "linear") -> dict:
    return {"scheme": scheme, "descriptor": descriptor, "kernel": kernel, "split": split,
            "accuracy": acc, "seed": seed}


def write_accuracy_csv(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=ACCURACY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.6f}" if k == "accuracy" else r[k]) for k in ACCURACY_COLUMNS})
    return path
