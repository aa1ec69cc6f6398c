"""Core types and primitives shared by every other module.

Pixels live in [0,1] as float arrays of shape (H, W, C); every perturbation
budget is expressed on that scale.  The helpers here are deliberately strict
about two exactness guarantees the rest of the toolkit leans on:

* sup-norm budgets hold exactly (not "up to rounding") on the stored
  perturbation *and* on the recomputed difference ``perturbed - original``;
* perturbed images are exactly inside [0,1].
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidRangeError",
    "ShapeMismatchError",
    "InvalidLabelError",
    "UnknownLayerError",
    "ModelEvaluationError",
    "PerturbationBudget",
    "Perturbation",
    "PredictionRecord",
    "AidResult",
    "Image",
    "LabeledExample",
    "LabeledDataset",
    "ClassifierHandle",
    "EvalReport",
    "clip_box",
    "project_budget",
    "budgeted_image",
    "boxed_delta",
    "softmax",
    "cross_entropy",
    "predict",
    "input_gradient",
]


class InvalidRangeError(ValueError):
    """Lower bound exceeds upper bound."""


class ShapeMismatchError(ValueError):
    """Arrays that must share a shape do not."""


class InvalidLabelError(ValueError):
    """Class label outside [0, class_count)."""


class UnknownLayerError(KeyError):
    """Requested feature layer is not exposed by the model."""


class ModelEvaluationError(RuntimeError):
    """Model produced invalid outputs (non-finite or unnormalized)."""


# ---------------------------------------------------------------------------
# elementwise projections
# ---------------------------------------------------------------------------

def clip_box(z, a, b):
    """Elementwise min(max(z, a), b).  Idempotent and monotone.

    Raises InvalidRangeError if a > b.
    """
    if np.any(np.asarray(a) > np.asarray(b)):
        raise InvalidRangeError(f"clip_box bounds out of order: a={a} > b={b}")
    return np.minimum(np.maximum(z, a), b)


@dataclass(frozen=True)
class PerturbationBudget:
    """Norm-ball budget: p in {inf, 2}, radius epsilon, iteration count."""

    epsilon: float
    norm: float = np.inf
    iterations: int = 1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.norm not in (np.inf, 2):
            raise ValueError(f"norm must be inf or 2, got {self.norm}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


def project_budget(delta, x, budget):
    """Project a perturbation onto the budget ball around the origin.

    sup-norm: clip to [-eps, eps] (bound holds exactly).
    2-norm:   rescale onto the sphere when ||delta||_2 > eps.
    """
    delta = np.asarray(delta)
    x = np.asarray(x)
    if delta.shape != x.shape:
        raise ShapeMismatchError(f"delta {delta.shape} vs image {x.shape}")
    eps = budget.epsilon
    if budget.norm == np.inf:
        return clip_box(delta, -eps, eps)
    nrm = float(np.linalg.norm(delta.ravel()))
    if nrm <= eps or nrm == 0.0:
        return delta
    return delta * (eps / nrm)


def boxed_delta(x, delta):
    """Largest-magnitude ``d`` near ``delta`` with ``x + d`` exactly in [0,1].

    Counterpart of :func:`budgeted_image` for norm-2 searches that carry no
    sup-norm radius: guarantees the *recomputed* float sum ``x + d`` stays
    inside the box.  Returns ``(z, d)`` with ``z = x + d``.
    """
    x = np.asarray(x, dtype=np.float64)
    z = clip_box(x + np.asarray(delta, dtype=np.float64), 0.0, 1.0)
    d = z - x
    s = x + d
    bad = (s < 0.0) | (s > 1.0)
    while np.any(bad):
        d = np.where(bad, np.nextafter(d, 0.0), d)
        s = x + d
        bad = (s < 0.0) | (s > 1.0)
    return s, d


def budgeted_image(x, delta, epsilon):
    """Apply ``delta`` to ``x`` under an exact sup-norm budget and box.

    Returns ``(z, d)`` where ``z`` is the perturbed image in [0,1] and
    ``d = z - x`` (the same float subtraction a caller would redo) with
    ``max|d| <= epsilon`` exactly.  Rounding of ``(x + delta) - x`` can
    overshoot the budget by an ulp; offending pixels are nudged one ulp
    toward ``x`` until the measured difference is back inside the ball.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = clip_box(np.asarray(delta, dtype=np.float64), -epsilon, epsilon)
    z = clip_box(x + delta, 0.0, 1.0)
    d = z - x
    bad = np.abs(d) > epsilon
    while np.any(bad):
        z = np.where(bad, np.nextafter(z, x), z)
        d = z - x
        bad = np.abs(d) > epsilon
    return z, d


# ---------------------------------------------------------------------------
# images and datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Image:
    """A (H, W, C) pixel array in [0,1] plus a provenance id."""

    pixels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3:
            raise ShapeMismatchError(f"image must be (H, W, C), got {p.shape}")
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ValueError("pixel values outside [0,1]")

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class LabeledExample:
    image: Image
    label: int


class LabeledDataset:
    """Ordered image/label pairs with a shared shape and class count.

    Stored as one (N, H, W, C) array for batch operations; ``dataset[i]``
    yields a LabeledExample view.
    """

    def __init__(self, images, labels, class_count, name="dataset", source_ids=None):
        images = np.asarray(images, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if images.ndim != 4:
            raise ShapeMismatchError(f"images must be (N, H, W, C), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ShapeMismatchError(
                f"labels {labels.shape} do not match {images.shape[0]} images")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError("pixel values outside [0,1]")
        if labels.size and (labels.min() < 0 or labels.max() >= class_count):
            raise InvalidLabelError(
                f"labels must lie in [0, {class_count}), got range "
                f"[{labels.min()}, {labels.max()}]")
        self.images = images
        self.labels = labels
        self.class_count = int(class_count)
        self.name = name
        self.source_ids = (list(source_ids) if source_ids is not None
                           else [f"{name}/{i}" for i in range(len(labels))])

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, i):
        return LabeledExample(Image(self.images[i], self.source_ids[i]),
                              int(self.labels[i]))

    @property
    def examples(self):
        return [self[i] for i in range(len(self))]

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices, name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.images[indices], self.labels[indices], self.class_count,
            name=name or f"{self.name}/subset",
            source_ids=[self.source_ids[i] for i in indices])

    @classmethod
    def concat(cls, datasets, name=None):
        datasets = list(datasets)
        if not datasets:
            raise ValueError("nothing to concatenate")
        ks = {d.class_count for d in datasets}
        if len(ks) != 1:
            raise ValueError(f"class counts differ: {sorted(ks)}")
        return cls(
            np.concatenate([d.images for d in datasets], axis=0),
            np.concatenate([d.labels for d in datasets], axis=0),
            ks.pop(),
            name=name or "+".join(d.name for d in datasets),
            source_ids=[s for d in datasets for s in d.source_ids])


# ---------------------------------------------------------------------------
# perturbations and prediction records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Perturbation:
    """A pixel-space delta together with the budget it satisfies."""

    delta: np.ndarray
    budget: PerturbationBudget
    direction: str = "aid"  # "aid" | "attack"

    def __post_init__(self):
        if self.direction not in ("aid", "attack"):
            raise ValueError(f"direction must be 'aid' or 'attack', got {self.direction!r}")
        if self.budget.norm == np.inf and self.delta.size:
            peak = float(np.abs(self.delta).max())
            if peak > self.budget.epsilon:
                raise ValueError(
                    f"sup-norm budget violated: {peak} > {self.budget.epsilon}")


@dataclass(frozen=True)
class PredictionRecord:
    """Argmax class (ties -> lowest index), full probability vector, and the
    probability assigned to the true class when a label is known."""

    predicted_class: int
    probabilities: np.ndarray
    true_class_confidence: float | None = None

    @property
    def confidence(self):
        """Probability of the predicted class."""
        return float(self.probabilities[self.predicted_class])


@dataclass(frozen=True)
class AidResult:
    """Before/after records for one perturbed image."""

    original: PredictionRecord
    perturbed: PredictionRecord
    perturbation: Perturbation
    method: str  # {"fgsm_aid", "ifgsm_aid", "ifgsm_attack", "cw_aid"}
    perturbed_image: np.ndarray = field(repr=False, default=None)
    objective_trace: np.ndarray | None = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# classifier abstraction
# ---------------------------------------------------------------------------

class ClassifierHandle(ABC):
    """A trained classifier exposing probabilities, per-example cross-entropy
    input gradients, and (optionally) named internal feature maps.

    Handles are immutable after construction and safe for concurrent
    read-only inference; gradient calls are merely guaranteed correct, not
    guaranteed to parallelize.
    """

    model_id: str = "model"
    class_count: int = 0
    input_shape: tuple = ()
    feature_layers: tuple = ()

    @abstractmethod
    def logits(self, xs):
        """(B, H, W, C) -> (B, K) unnormalized scores."""

    @abstractmethod
    def input_grad_from_dlogits(self, xs, dlogits):
        """Backpropagate an upstream (B, K) gradient to the input pixels."""

    def predict_proba(self, xs):
        return softmax(self.logits(np.asarray(xs)))

    def loss_and_input_grad(self, xs, ys):
        """Per-example cross-entropy values and their input gradients."""
        xs = np.asarray(xs)
        ys = np.asarray(ys, dtype=np.int64)
        logit = self.logits(xs)
        p = softmax(logit)
        losses = cross_entropy(logit, ys)
        dlogits = p.copy()
        dlogits[np.arange(len(ys)), ys] -= 1.0
        return losses, self.input_grad_from_dlogits(xs, dlogits)

    def feature_with_score_grad(self, xs, classes, layer):
        """Feature maps of ``layer`` plus d(class logit)/d(feature map)."""
        raise UnknownLayerError(
            f"model {self.model_id!r} exposes no feature layer {layer!r}")

    def _check_batch(self, xs):
        xs = np.asarray(xs)
        if xs.shape[1:] != tuple(self.input_shape):
            raise ShapeMismatchError(
                f"batch shape {xs.shape[1:]} does not match model input "
                f"{tuple(self.input_shape)}")
        return xs


def softmax(logits):
    """Row-stable softmax in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, ys):
    """Per-example -log softmax(logits)[y], computed via logsumexp."""
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=-1))
    return lse - z[np.arange(len(ys)), np.asarray(ys, dtype=np.int64)]


def predict(model, images, labels=None):
    """Classify a batch, one PredictionRecord per image in input order."""
    xs = np.asarray(images)
    if xs.ndim == 3:
        xs = xs[None]
    xs = model._check_batch(xs)
    probs = model.predict_proba(xs)
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise ModelEvaluationError(f"model {model.model_id!r} produced invalid probabilities")
    if np.abs(probs.sum(axis=-1) - 1.0).max() > 1e-5:
        raise ModelEvaluationError(f"model {model.model_id!r} probabilities not normalized")
    preds = probs.argmax(axis=-1)  # np.argmax breaks ties toward the lowest index
    records = []
    for i, k in enumerate(preds):
        conf = None
        if labels is not None:
            y = int(np.asarray(labels).ravel()[i])
            if not 0 <= y < model.class_count:
                raise InvalidLabelError(f"label {y} outside [0, {model.class_count})")
            conf = float(probs[i, y])
        records.append(PredictionRecord(int(k), probs[i], conf))
    return records


def input_gradient(model, x, y):
    """Gradient of the cross-entropy loss at (x, y) w.r.t. the pixels."""
    x = np.asarray(x)
    single = x.ndim == 3
    xs = x[None] if single else x
    xs = model._check_batch(xs)
    ys = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if ys.min() < 0 or ys.max() >= model.class_count:
        raise InvalidLabelError(f"label outside [0, {model.class_count})")
    _, grads = model.loss_and_input_grad(xs, ys)
    return grads[0] if single else grads


# ---------------------------------------------------------------------------
# evaluation reports
# ---------------------------------------------------------------------------

class EvalReport:
    """Accuracy/confidence rows keyed by (model, image set, regime).

    Rows are plain dicts so different experiments can carry different keys
    (epsilon, attack strength, ...); meta records the producing config hash.
    """

    def __init__(self, rows=None, meta=None):
        self.rows = list(rows) if rows else []
        self.meta = dict(meta) if meta else {}

    def add_row(self, **kw):
        self.rows.append(kw)
        return self

    def filter(self, **kw):
        return [r for r in self.rows if all(r.get(k) == v for k, v in kw.items())]

    def to_dict(self):
        return {"meta": self.meta, "rows": self.rows}

    def to_json(self, path):
        import json
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, default=_json_default)

    @classmethod
    def from_json(cls, path):
        import json
        with open(path) as f:
            d = json.load(f)
        return cls(rows=d["rows"], meta=d["meta"])

    def to_csv(self, path):
        import csv
        keys = []
        for r in self.rows:
            for k in r:
                if k not in keys:
                    keys.append(k)
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=keys)
            w.writeheader()
            for r in self.rows:
                w.writerow(r)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def evaluate_accuracy(model, images, labels, batch_size=256):
    """(accuracy, mean true-class confidence) over a batch of images."""
    xs = np.asarray(images)
    ys = np.asarray(labels, dtype=np.int64)
    n = len(ys)
    if n == 0:
        raise ValueError("empty evaluation set")
    correct = 0
    conf_sum = 0.0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        probs = model.predict_proba(xs[lo:hi])
        preds = probs.argmax(axis=-1)
        correct += int((preds == ys[lo:hi]).sum())
        conf_sum += float(probs[np.arange(hi - lo), ys[lo:hi]].sum())
    return correct / n, conf_sum / n
