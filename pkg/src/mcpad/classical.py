"""Baseline classifiers and score fusion: logistic regression and a linear
SVM trained by deterministic full-batch (sub)gradient descent from zero
initialization, min-max score normalization, and mean fusion.

Labels are encoded 1 = bonafide, 0 = attack throughout; higher scores mean
more bonafide.

Model blobs: magic "MCLM", version u8, kind u8 (1=LR 2=SVM 3=normalizer),
u32 dimension, parameters as little-endian float64.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_MAGIC = b"MCLM"
MODEL_VERSION = 1

POP_BONAFIDE_ONLY = "bonafide_only"
POP_ALL = "all"

STD_FLOOR = 1e-8

DEFAULT_LR_L2 = 0.1
DEFAULT_LR_EPOCHS = 800
DEFAULT_LR_RATE = 0.005
DEFAULT_SVM_C = 1.0
DEFAULT_SVM_EPOCHS = 500
DEFAULT_SVM_RATE = 0.1


class FitError(ValueError):
    """Training preconditions not met (empty population, one class, ...)."""


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    population: str

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise ValueError(f"dimension mismatch: {x.shape[-1]} != {self.mean.shape[0]}")
        return (x - self.mean) / self.std


def standardize_fit(
    features: np.ndarray,
    labels: np.ndarray,
    population: str = POP_ALL,
    degenerate_scale: float | None = None,
) -> Standardizer:
    """Per-dimension mean/std (population std, floored at 1e-8) over the
    selected fit population.

    ``degenerate_scale`` replaces the scale of (near-)constant dimensions
    (std <= 1e-7) instead of the floor; histogram features can have bins the
    fit population never touches, and dividing those by the floor turns them
    into train-set lookups.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if population == POP_BONAFIDE_ONLY:
        rows = features[labels == 1]
    elif population == POP_ALL:
        rows = features
    else:
        raise ValueError(f"unknown population tag {population!r}")
    if rows.shape[0] < 2:
        raise FitError("standardizer needs at least 2 rows in the fit population")
    mean = rows.mean(axis=0)
    raw_std = rows.std(axis=0)
    std = np.maximum(raw_std, STD_FLOOR)
    if degenerate_scale is not None:
        std = np.where(raw_std <= 10.0 * STD_FLOOR, degenerate_scale, std)
    return Standardizer(mean=mean, std=std, population=population)


def _check_two_classes(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if not ((labels == 1).any() and (labels == 0).any()):
        raise FitError("training needs both classes")
    return labels


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -40.0, 40.0)))


@dataclass
class LrModel:
    weights: np.ndarray
    bias: float
    standardizer: Standardizer
    l2: float

    def __post_init__(self):
        if self.weights.shape[0] != self.standardizer.mean.shape[0]:
            raise ValueError("weight dimension must match the standardizer")


def lr_train(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = DEFAULT_LR_L2,
    epochs: int = DEFAULT_LR_EPOCHS,
    lr: float = DEFAULT_LR_RATE,
    standardizer: Standardizer | None = None,
) -> LrModel:
    """Full-batch gradient descent on mean BCE + l2*||w||^2 from zero init;
    the default standardizer is fit on bonafide rows only."""
    features = np.asarray(features, dtype=np.float64)
    y = _check_two_classes(labels)
    if standardizer is None:
        standardizer = standardize_fit(features, labels, POP_BONAFIDE_ONLY)
    xs = standardizer.apply(features)
    n, d = xs.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(epochs):
        p = _sigmoid(xs @ w + b)
        err = p - y
        grad_w = xs.T @ err / n + 2.0 * l2 * w
        grad_b = float(err.mean())
        w -= lr * grad_w
        b -= lr * grad_b
    return LrModel(weights=w, bias=b, standardizer=standardizer, l2=l2)


def lr_score(model: LrModel, x: np.ndarray) -> np.ndarray | float:
    """Probability of bonafide: sigmoid(w . standardize(x) + b)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = model.standardizer.apply(x.reshape(1, -1) if single else x)
    scores = _sigmoid(xs @ model.weights + model.bias)
    return float(scores[0]) if single else scores


def lr_loss(model_w: np.ndarray, model_b: float, xs: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Objective value on pre-standardized features (for monotonicity checks)."""
    p = np.clip(_sigmoid(xs @ model_w + model_b), 1e-12, 1 - 1e-12)
    bce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(bce + l2 * np.sum(model_w**2))


def lr_training_losses(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = DEFAULT_LR_L2,
    epochs: int = DEFAULT_LR_EPOCHS,
    lr: float = DEFAULT_LR_RATE,
    standardizer: Standardizer | None = None,
) -> np.ndarray:
    """Objective per epoch for the same schedule as :func:`lr_train`."""
    features = np.asarray(features, dtype=np.float64)
    y = _check_two_classes(labels)
    if standardizer is None:
        standardizer = standardize_fit(features, labels, POP_BONAFIDE_ONLY)
    xs = standardizer.apply(features)
    n, d = xs.shape
    w = np.zeros(d)
    b = 0.0
    losses = [lr_loss(w, b, xs, y, l2)]
    for _ in range(epochs):
        p = _sigmoid(xs @ w + b)
        err = p - y
        w -= lr * (xs.T @ err / n + 2.0 * l2 * w)
        b -= lr * float(err.mean())
        losses.append(lr_loss(w, b, xs, y, l2))
    return np.array(losses)


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    c: float
    standardizer: Standardizer

    def __post_init__(self):
        if self.weights.shape[0] != self.standardizer.mean.shape[0]:
            raise ValueError("weight dimension must match the standardizer")


def svm_train(
    features: np.ndarray,
    labels: np.ndarray,
    c: float = DEFAULT_SVM_C,
    epochs: int = DEFAULT_SVM_EPOCHS,
    lr: float = DEFAULT_SVM_RATE,
    standardizer: Standardizer | None = None,
) -> SvmModel:
    """Sub-gradient descent on (1/2)||w||^2 + C * mean hinge from zero init
    with a 1/sqrt(t+1) step decay; bonafide -> +1, attack -> -1."""
    features = np.asarray(features, dtype=np.float64)
    y01 = _check_two_classes(labels)
    y = 2.0 * y01 - 1.0
    if standardizer is None:
        standardizer = standardize_fit(features, labels, POP_ALL)
    xs = standardizer.apply(features)
    n, d = xs.shape
    w = np.zeros(d)
    b = 0.0
    for t in range(epochs):
        eta = lr / np.sqrt(t + 1.0)
        margins = y * (xs @ w + b)
        viol = margins < 1.0
        grad_w = w - c * (xs[viol].T @ y[viol]) / n
        grad_b = -c * float(y[viol].sum()) / n
        w -= eta * grad_w
        b -= eta * grad_b
    return SvmModel(weights=w, bias=b, c=c, standardizer=standardizer)


def svm_score(model: SvmModel, x: np.ndarray) -> np.ndarray | float:
    """Raw signed margin w . standardize(x) + b (positive = bonafide)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = model.standardizer.apply(x.reshape(1, -1) if single else x)
    margins = xs @ model.weights + model.bias
    return float(margins[0]) if single else margins


@dataclass(frozen=True)
class ScoreNormalizer:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("max must exceed min")


def score_normalize_fit(scores: Sequence[float]) -> ScoreNormalizer:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2 or scores.max() <= scores.min():
        raise FitError("need at least 2 distinct scores to fit a normalizer")
    return ScoreNormalizer(lo=float(scores.min()), hi=float(scores.max()))


def score_normalize_apply(norm: ScoreNormalizer, scores) -> np.ndarray | float:
    arr = np.asarray(scores, dtype=np.float64)
    out = np.clip((arr - norm.lo) / (norm.hi - norm.lo), 0.0, 1.0)
    return float(out) if np.isscalar(scores) or out.ndim == 0 else out


def fuse_mean(scores: Sequence[float]) -> float:
    """Arithmetic mean of per-algorithm normalized scores."""
    if len(scores) == 0:
        raise ValueError("cannot fuse an empty score list")
    arr = np.asarray(scores, dtype=np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("fusion inputs must lie in [0, 1]")
    return float(arr.mean())


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

_KIND_LR = 1
_KIND_SVM = 2
_KIND_NORM = 3

_POP_CODES = {POP_BONAFIDE_ONLY: 0.0, POP_ALL: 1.0}


def save_model(model: LrModel | SvmModel | ScoreNormalizer, path: str | Path) -> None:
    if isinstance(model, LrModel):
        kind = _KIND_LR
        dim = model.weights.shape[0]
        params = np.concatenate(
            [model.weights, [model.bias, model.l2, _POP_CODES[model.standardizer.population]],
             model.standardizer.mean, model.standardizer.std]
        )
    elif isinstance(model, SvmModel):
        kind = _KIND_SVM
        dim = model.weights.shape[0]
        params = np.concatenate(
            [model.weights, [model.bias, model.c, _POP_CODES[model.standardizer.population]],
             model.standardizer.mean, model.standardizer.std]
        )
    elif isinstance(model, ScoreNormalizer):
        kind = _KIND_NORM
        dim = 0
        params = np.array([model.lo, model.hi])
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<BBI", MODEL_VERSION, kind, dim))
        fh.write(np.asarray(params, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_model(path: str | Path) -> LrModel | SvmModel | ScoreNormalizer:
    blob = Path(path).read_bytes()
    if blob[:4] != MODEL_MAGIC:
        raise ValueError(f"bad model magic {blob[:4]!r}")
    version, kind, dim = struct.unpack_from("<BBI", blob, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"unknown model version {version}")
    params = np.frombuffer(blob, dtype="<f8", offset=10).astype(np.float64)
    pops = {0.0: POP_BONAFIDE_ONLY, 1.0: POP_ALL}
    if kind == _KIND_NORM:
        return ScoreNormalizer(lo=params[0], hi=params[1])
    w = params[:dim]
    bias, hyper, pop_code = params[dim : dim + 3]
    mean = params[dim + 3 : 2 * dim + 3]
    std = params[2 * dim + 3 : 3 * dim + 3]
    std_obj = Standardizer(mean=mean, std=std, population=pops[pop_code])
    if kind == _KIND_LR:
        return LrModel(weights=w, bias=float(bias), standardizer=std_obj, l2=float(hyper))
    if kind == _KIND_SVM:
        return SvmModel(weights=w, bias=float(bias), c=float(hyper), standardizer=std_obj)
    raise ValueError(f"unknown model kind {kind}")
