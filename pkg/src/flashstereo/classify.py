"""Flash-vs-artifact patch classification.

The in-repo baseline is a logistic regression on hand-built context features
of the 65 x 65 patch, trained by full-batch gradient descent. Any object with
a ``predict_proba(patches) -> array`` method can stand in for it (see
:class:`PatchClassifier` and :func:`load_classifier`).
"""

from __future__ import annotations

import importlib
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .detect import PATCH_HALF, PATCH_SIZE, Detection, Patch, extract_patch, with_prob
from .errors import ConfigError, DataError, InsufficientDataError, TrainingError

logger = logging.getLogger(__name__)

MODEL_FORMAT = "flashstereo-logreg"
MODEL_VERSION = 1

FEATURE_NAMES = [
    "center_mean",
    "ring_5_10",
    "ring_10_20",
    "ring_20_32",
    "contrast_5_10",
    "contrast_10_20",
    "contrast_20_32",
    "clutter_count",
    "center_r",
    "center_g",
    "center_b",
    "chroma_g",
    "radial_slope",
]
CHROMA_FEATURES = ("center_r", "center_g", "center_b", "chroma_g")

_yy, _xx = np.mgrid[:PATCH_SIZE, :PATCH_SIZE] - PATCH_HALF
_RADIUS = np.hypot(_yy, _xx)
_CENTER = (np.abs(_yy) <= 4) & (np.abs(_xx) <= 4)
_RINGS = [(_RADIUS >= 5) & (_RADIUS < 10), (_RADIUS >= 10) & (_RADIUS < 20), (_RADIUS >= 20) & (_RADIUS <= 32)]
_RBIN = np.rint(_RADIUS).astype(int)
_PROFILE_R = np.arange(0, 33)


def featurize_many(pixels: np.ndarray) -> np.ndarray:
    """Feature matrix ``(N, len(FEATURE_NAMES))`` for patch pixels ``(N, 65, 65, 3)``."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 2:
        px = px[None, :, :, None]
    elif px.ndim == 3:
        px = px[None] if px.shape == (PATCH_SIZE, PATCH_SIZE, 3) else px[..., None]
    if px.ndim != 4 or px.shape[1:3] != (PATCH_SIZE, PATCH_SIZE):
        raise DataError(f"patches must be {PATCH_SIZE}x{PATCH_SIZE}, got shape {px.shape}")
    if px.shape[-1] == 1:
        px = np.repeat(px, 3, axis=-1)
    gray = px @ np.array([0.299, 0.587, 0.114])
    n = len(gray)

    center = gray[:, _CENTER].mean(axis=1)
    rings = np.stack([gray[:, m].mean(axis=1) for m in _RINGS], axis=1)
    contrast = (center[:, None] + 1.0) / (rings + 1.0)

    peak = gray[:, PATCH_HALF, PATCH_HALF]
    mx = ndimage.maximum_filter(gray, size=(1, 3, 3), mode="nearest")
    mn = ndimage.minimum_filter(gray, size=(1, 3, 3), mode="nearest")
    is_max = (gray == mx) & (gray > mn) & (gray > 0.5 * peak[:, None, None]) & ~_CENTER
    clutter = is_max.reshape(n, -1).sum(axis=1).astype(np.float64)

    rgb_center = px[:, _CENTER, :].mean(axis=1)
    chroma = rgb_center[:, 1] - 0.5 * (rgb_center[:, 0] + rgb_center[:, 2])

    counts = np.bincount(_RBIN.ravel(), minlength=64)[: len(_PROFILE_R)]
    sums = np.stack([np.bincount(_RBIN.ravel(), weights=g.ravel(), minlength=64)[: len(_PROFILE_R)] for g in gray])
    profile = sums / counts / (peak[:, None] + 1.0)
    rc = _PROFILE_R - _PROFILE_R.mean()
    slope = (profile - profile.mean(axis=1, keepdims=True)) @ rc / (rc @ rc)

    return np.column_stack([center, rings, contrast, clutter, rgb_center, chroma, slope])


def featurize(patch: Patch | np.ndarray) -> np.ndarray:
    px = patch.pixels if isinstance(patch, Patch) else patch
    return featurize_many(np.asarray(px)[None])[0]


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class PatchDataset:
    pixels: np.ndarray  # (N, 65, 65, 3) uint8
    labels: np.ndarray  # (N,) 1 = flash, 0 = artifact

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.pixels) != len(self.labels):
            raise DataError("pixels and labels differ in length")
        if len(self.pixels) and self.pixels.shape[1:3] != (PATCH_SIZE, PATCH_SIZE):
            raise DataError("patches must be 65x65")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 (artifact) or 1 (flash)")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_patches(cls, patches: Sequence[Patch]) -> "PatchDataset":
        keep = [p for p in patches if p.label in ("flash", "artifact")]
        bad = [p for p in keep if not p.is_centered()]
        if bad:
            raise DataError(f"{len(bad)} patches violate the center-brightest invariant")
        if not keep:
            return cls(np.zeros((0, PATCH_SIZE, PATCH_SIZE, 3), np.uint8), np.zeros(0, np.int64))
        return cls(np.stack([p.pixels for p in keep]), np.array([p.label == "flash" for p in keep], dtype=np.int64))

    def subset(self, idx) -> "PatchDataset":
        return PatchDataset(self.pixels[idx], self.labels[idx])

    def split(self, val_fraction: float = 0.2, seed: int = 0) -> tuple["PatchDataset", "PatchDataset"]:
        """Stratified train/validation split."""
        rng = np.random.default_rng(seed)
        train, val = [], []
        for c in (0, 1):
            idx = np.flatnonzero(self.labels == c)
            idx = idx[rng.permutation(len(idx))]
            n_val = int(round(val_fraction * len(idx)))
            val.extend(idx[:n_val])
            train.extend(idx[n_val:])
        return self.subset(np.sort(train)), self.subset(np.sort(val))


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class PatchClassifier(Protocol):
    def predict_proba(self, pixels: np.ndarray) -> np.ndarray: ...


@dataclass
class Hyperparams:
    learning_rate: float = 0.5
    epochs: int = 3000
    l2: float = 1e-3
    seed: int = 0
    class_weighting: bool = True


def logistic_loss_and_grad(w, b, X, y, sample_weight=None, l2=0.0):
    """Weighted mean log-loss plus ``l2/2 |w|^2`` and its gradient ``(gw, gb)``."""
    z = X @ w + b
    s = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    norm = s.sum()
    loss = float(s @ (np.logaddexp(0.0, z) - y * z) / norm + 0.5 * l2 * (w @ w))
    r = s * (sigmoid(z) - y) / norm
    return loss, X.T @ r + l2 * w, float(r.sum())


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass
class BaselineModel:
    feature_names: list[str] = field(default_factory=list)
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    weights: np.ndarray | None = None
    bias: float = 0.0
    hyperparams: dict = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list, repr=False)

    @property
    def is_trained(self) -> bool:
        return self.weights is not None

    def _design(self, pixels: np.ndarray) -> np.ndarray:
        if not self.is_trained:
            raise TrainingError("model is not trained")
        F = featurize_many(pixels)
        cols = [FEATURE_NAMES.index(n) for n in self.feature_names]
        return (F[:, cols] - self.mean) / self.std

    def decision_function(self, pixels: np.ndarray) -> np.ndarray:
        return self._design(pixels) @ self.weights + self.bias

    def predict_proba(self, pixels: np.ndarray) -> np.ndarray:
        px = np.asarray(pixels)
        if len(px) == 0:
            return np.zeros(0)
        return sigmoid(self.decision_function(px))

    def refit_standardization(self, pixels: np.ndarray) -> "BaselineModel":
        """Copy with standardization statistics re-estimated on new data; weights kept."""
        F = featurize_many(pixels)
        cols = [FEATURE_NAMES.index(n) for n in self.feature_names]
        std = F[:, cols].std(axis=0)
        std = np.where(std > 1e-12, std, self.std)
        return BaselineModel(self.feature_names, F[:, cols].mean(axis=0), std, self.weights.copy(), self.bias, dict(self.hyperparams))

    def to_dict(self) -> dict:
        if not self.is_trained:
            raise TrainingError("model is not trained")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "feature_names": list(self.feature_names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "hyperparams": self.hyperparams,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineModel":
        if d.get("format") != MODEL_FORMAT:
            raise ConfigError(f"not a {MODEL_FORMAT} model file")
        if d.get("version") != MODEL_VERSION:
            raise ConfigError(f"unsupported model version {d.get('version')}")
        names = list(d["feature_names"])
        unknown = set(names) - set(FEATURE_NAMES)
        if unknown:
            raise ConfigError(f"unknown features in model: {sorted(unknown)}")
        return cls(
            feature_names=names,
            mean=np.array(d["mean"], dtype=float),
            std=np.array(d["std"], dtype=float),
            weights=np.array(d["weights"], dtype=float),
            bias=float(d["bias"]),
            hyperparams=dict(d.get("hyperparams", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def train(
    dataset: PatchDataset,
    hyperparams: Hyperparams | None = None,
    features: Sequence[str] | None = None,
    X: np.ndarray | None = None,
) -> BaselineModel:
    """Fit the baseline by full-batch gradient descent on standardized features.

    ``X`` may pass precomputed features (columns of :data:`FEATURE_NAMES`).
    """
    hp = hyperparams or Hyperparams()
    y = dataset.labels.astype(np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos < 2 or n_neg < 2:
        raise InsufficientDataError(f"need at least 2 examples per class (got {n_pos} flash, {n_neg} artifact)")
    names = list(features) if features is not None else list(FEATURE_NAMES)
    F = featurize_many(dataset.pixels) if X is None else np.asarray(X, dtype=float)
    F = F[:, [FEATURE_NAMES.index(n) for n in names]]
    mean = F.mean(axis=0)
    std = F.std(axis=0)
    keep = std > 1e-12
    dropped = [n for n, k in zip(names, keep) if not k]
    if dropped:
        logger.info("dropping zero-variance features: %s", dropped)
    names = [n for n, k in zip(names, keep) if k]
    Z = (F[:, keep] - mean[keep]) / std[keep]

    if hp.class_weighting:
        sw = np.where(y == 1, len(y) / (2.0 * n_pos), len(y) / (2.0 * n_neg))
    else:
        sw = np.ones(len(y))
    rng = np.random.default_rng(hp.seed)
    w = rng.normal(scale=0.01, size=Z.shape[1])
    b = 0.0
    history = []
    for epoch in range(hp.epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gw, gb = logistic_loss_and_grad(w, b, Z, y, sw, hp.l2)
        if not np.isfinite(loss):
            raise TrainingError(
                f"loss became {loss} at epoch {epoch} (learning_rate={hp.learning_rate}, max|w|={np.abs(w).max():.3g})"
            )
        history.append(loss)
        w = w - hp.learning_rate * gw
        b = b - hp.learning_rate * gb
    loss, _, _ = logistic_loss_and_grad(w, b, Z, y, sw, hp.l2)
    history.append(loss)
    return BaselineModel(names, mean[keep], std[keep], w, float(b), asdict(hp), history)


def predict(model: PatchClassifier, patch: Patch | np.ndarray, threshold: float = 0.5) -> tuple[float, int]:
    px = patch.pixels if isinstance(patch, Patch) else np.asarray(patch)
    p = float(model.predict_proba(px[None])[0])
    return p, int(p >= threshold)


# ---------------------------------------------------------------------------
# Model loading
# ---------------------------------------------------------------------------

_LOADERS: dict[str, Callable[[dict, Path], PatchClassifier]] = {}


def register_model_format(name: str, loader: Callable[[dict, Path], PatchClassifier]) -> None:
    """Register a loader for model JSON files whose ``format`` field is ``name``."""
    _LOADERS[name] = loader


def _load_entrypoint(d: dict, path: Path) -> PatchClassifier:
    # {"format": "python-entrypoint", "entrypoint": "pkg.mod:factory", "weights": "file"}
    mod_name, _, attr = d["entrypoint"].partition(":")
    factory = getattr(importlib.import_module(mod_name), attr)
    weights = d.get("weights")
    return factory((path.parent / weights) if weights else None)


register_model_format(MODEL_FORMAT, lambda d, p: BaselineModel.from_dict(d))
register_model_format("python-entrypoint", _load_entrypoint)


def load_classifier(path: str | Path) -> PatchClassifier:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"model file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid model JSON at line {e.lineno}") from e
    fmt = d.get("format")
    if fmt not in _LOADERS:
        raise ConfigError(f"{path}: unknown model format {fmt!r}")
    return _LOADERS[fmt](d, path)


# ---------------------------------------------------------------------------
# Applying and evaluating
# ---------------------------------------------------------------------------


def filter_detections(
    detections: Sequence[Detection],
    frames: Mapping[int, np.ndarray] | Callable[[int], np.ndarray],
    model: PatchClassifier,
    min_prob: float | None = None,
) -> list[Detection]:
    """Annotate each detection with its flash probability; optionally keep ``prob >= min_prob``.

    ``frames`` maps a frame index to the frame it was detected in. Patches are
    re-centered on their brightest pixel, so several detections can yield the
    patch of one light (typically a clutter blob next to a flash). Only the
    detection nearest that shared peak keeps the patch's probability; the
    others get 0.
    """
    get = frames if callable(frames) else frames.__getitem__
    by_frame: dict[int, list[int]] = defaultdict(list)
    for i, d in enumerate(detections):
        by_frame[d.frame].append(i)
    probs = np.zeros(len(detections))
    for k in sorted(by_frame):
        try:
            frame = get(k)
        except (KeyError, IndexError) as e:
            raise DataError(f"frame {k} is missing for patch extraction") from e
        idx = by_frame[k]
        patches = [extract_patch(frame, detections[i].seed) for i in idx]
        p = model.predict_proba(np.stack([q.pixels for q in patches]))
        width = np.asarray(frame).shape[1]
        owner: dict[tuple[int, int], tuple[float, int]] = {}
        for j, (i, q) in enumerate(zip(idx, patches)):
            dw = abs(detections[i].w - q.w) % width
            dist = float(np.hypot(min(dw, width - dw), detections[i].h - q.h))
            if (q.w, q.h) not in owner or dist < owner[(q.w, q.h)][0]:
                owner[(q.w, q.h)] = (dist, j)
        for j in sorted(j for _, j in owner.values()):
            probs[idx[j]] = p[j]
    out = [with_prob(d, p) for d, p in zip(detections, probs)]
    if min_prob is not None:
        out = [d for d in out if d.prob >= min_prob]
    return out


@dataclass
class ClassifierReport:
    n: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: list[list[int]]  # [[tn, fp], [fn, tp]]
    roc: list[tuple[float, float, float]]  # (threshold, fpr, tpr)
    probabilities: list[float] = field(default_factory=list, repr=False)
    labels: list[int] = field(default_factory=list, repr=False)
    threshold: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("probabilities")
        d.pop("labels")
        return d


def metrics_from_predictions(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    n = len(y_true)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": (tp + tn) / n if n else 0.0,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "confusion": [[tn, fp], [fn, tp]],
    }


def roc_points(y_true, probs) -> list[tuple[float, float, float]]:
    y_true = np.asarray(y_true, dtype=int)
    probs = np.asarray(probs, dtype=float)
    P = max(int(y_true.sum()), 1)
    N = max(int((1 - y_true).sum()), 1)
    out = []
    for th in np.concatenate([[np.inf], np.unique(probs)[::-1]]):
        pred = probs >= th
        out.append((float(th), float(np.sum(pred & (y_true == 0)) / N), float(np.sum(pred & (y_true == 1)) / P)))
    return out


def evaluate(model: PatchClassifier, dataset: PatchDataset, threshold: float = 0.5) -> ClassifierReport:
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    probs = np.asarray(model.predict_proba(dataset.pixels), dtype=float)
    m = metrics_from_predictions(dataset.labels, probs >= threshold)
    return ClassifierReport(
        n=len(dataset),
        roc=roc_points(dataset.labels, probs),
        probabilities=probs.tolist(),
        labels=dataset.labels.tolist(),
        threshold=threshold,
        **m,
    )


def chroma_ablation(
    train_set: PatchDataset, val_set: PatchDataset, hyperparams: Hyperparams | None = None
) -> dict:
    """Validation metrics with and without the RGB/chroma features."""
    no_chroma = [n for n in FEATURE_NAMES if n not in CHROMA_FEATURES]
    out = {}
    for name, feats in (("with_chroma", FEATURE_NAMES), ("without_chroma", no_chroma)):
        model = train(train_set, hyperparams, features=feats)
        out[name] = evaluate(model, val_set).to_dict()
        out[name].pop("roc")
    return out
