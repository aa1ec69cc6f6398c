"""Image-agnostic (universal) perturbation search and its evaluation protocol.

A single delta is shared by a whole image set and updated with the sign of
the set-mean gradient:

    delta <- clip_{±eps}(delta - (eps/N) * sign(mean_i dJ/dx at clip_{0,1}(x_i + delta)))

The update is the per-image iterative search of :mod:`aidkit.aid` with the
gradient replaced by the mean; on a one-image set the two coincide exactly.

The evaluation protocol splits a test set, per model, into disjoint pools of
correctly and incorrectly classified images (two splits each, A for finding
perturbations and B for generalization checks).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    EvalReport,
    LabeledDataset,
    PerturbationBudget,
    ShapeMismatchError,
    clip_box,
    evaluate_accuracy,
)

__all__ = [
    "SplitSpec",
    "UniversalPerturbation",
    "build_splits",
    "find_universal",
    "eval_universal",
    "epsilon_sweep",
]

SPLIT_NAMES = ("correctA", "correctB", "incorrectA", "incorrectB")


@dataclass(frozen=True)
class SplitSpec:
    """Provenance of a correct/incorrect split family."""

    dataset: str
    model_id: str
    size: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class UniversalPerturbation:
    """One image-shaped delta applicable to any image of matching shape."""

    delta: np.ndarray
    budget: PerturbationBudget
    source_set: str
    model_id: str

    def __post_init__(self):
        if self.budget.norm == np.inf and self.delta.size:
            peak = float(np.abs(self.delta).max())
            if peak > self.budget.epsilon:
                raise ValueError(f"sup-norm budget violated: {peak} > {self.budget.epsilon}")

    @property
    def iterations(self):
        return self.budget.iterations

    def apply(self, images):
        """Perturbed copies clip_{0,1}(x + delta)."""
        return clip_box(np.asarray(images, dtype=np.float64) + self.delta, 0.0, 1.0)


def build_splits(model, dataset, n=1000, seed=0):
    """Split a dataset into {correctA, correctB, incorrectA, incorrectB}.

    Every member of the correct* sets is classified correctly by ``model``,
    every member of incorrect* is misclassified; the four sets are disjoint.
    Pools too small for 2n shrink (with a warning); a pool with fewer than
    two members yields empty splits for that pair.
    """
    probs = _batched_proba(model, dataset.images)
    correct_mask = probs.argmax(axis=-1) == dataset.labels
    rng = np.random.default_rng(seed)
    out = {}
    for pool_name, mask in (("correct", correct_mask), ("incorrect", ~correct_mask)):
        idx = np.flatnonzero(mask)
        rng.shuffle(idx)
        if len(idx) < 2:
            warnings.warn(f"{pool_name} pool has {len(idx)} example(s); "
                          f"{pool_name}A/B left empty")
            half = 0
        else:
            half = min(n, len(idx) // 2)
            if half < n:
                warnings.warn(f"{pool_name} pool supports only {half} per split "
                              f"(requested {n})")
        out[pool_name + "A"] = dataset.subset(idx[:half], name=pool_name + "A")
        out[pool_name + "B"] = dataset.subset(idx[half:2 * half], name=pool_name + "B")
    if all(len(out[k]) == 0 for k in SPLIT_NAMES):
        raise ValueError("dataset too small to form any split")
    return out


def _batched_proba(model, xs, chunk=512):
    parts = [model.predict_proba(xs[lo:lo + chunk]) for lo in range(0, len(xs), chunk)]
    return np.concatenate(parts, axis=0)


def find_universal(model, images, labels, budget, source_set="set", chunk=256):
    """Search one shared delta over an image set.

    ``images``/``labels`` may also be a LabeledDataset passed as ``images``
    with ``labels=None``.
    """
    if labels is None and isinstance(images, LabeledDataset):
        source_set = images.name if source_set == "set" else source_set
        images, labels = images.images, images.labels
    xs = np.asarray(images, dtype=np.float64)
    ys = np.asarray(labels, dtype=np.int64)
    if len(xs) == 0:
        raise ValueError("empty image set")
    if xs.shape[1:] != tuple(model.input_shape):
        raise ShapeMismatchError(
            f"images {xs.shape[1:]} vs model input {tuple(model.input_shape)}")
    if budget.norm != np.inf:
        raise ValueError("universal search uses the sup-norm budget")

    n = len(xs)
    eps, iters = budget.epsilon, budget.iterations
    coef = -(eps / iters)
    delta = np.zeros(xs.shape[1:], dtype=np.float64)
    grad_buf = np.empty_like(xs)
    for _ in range(iters):
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            z = clip_box(xs[lo:hi] + delta, 0.0, 1.0)
            _, g = model.loss_and_input_grad(z, ys[lo:hi])
            grad_buf[lo:hi] = g
        gbar = grad_buf.sum(axis=0) / n
        delta = clip_box(delta + coef * np.sign(gbar), -eps, eps)
    return UniversalPerturbation(delta, budget, source_set, model.model_id)


def eval_universal(model, up, sets):
    """Accuracy/confidence of clip_{0,1}(x + delta) per named image set."""
    report = EvalReport(meta={"model_id": model.model_id,
                              "source_set": up.source_set,
                              "epsilon": up.budget.epsilon,
                              "iterations": up.budget.iterations})
    for name, ds in sets.items():
        if len(ds) == 0:
            report.add_row(model_id=model.model_id, image_set=name,
                           epsilon=up.budget.epsilon, n=0,
                           accuracy=float("nan"), mean_confidence=float("nan"))
            continue
        if ds.image_shape != up.delta.shape:
            raise ShapeMismatchError(
                f"set {name} images {ds.image_shape} vs delta {up.delta.shape}")
        acc, conf = evaluate_accuracy(model, up.apply(ds.images), ds.labels)
        report.add_row(model_id=model.model_id, image_set=name,
                       epsilon=up.budget.epsilon, n=len(ds),
                       accuracy=acc, mean_confidence=conf)
    return report


def epsilon_sweep(model, source, eval_sets, epsilon_grid, iterations=50):
    """One find/eval cycle per epsilon; rows keep the grid order.

    Returns (report, perturbations).
    """
    epsilon_grid = list(epsilon_grid)
    if not epsilon_grid:
        raise ValueError("empty epsilon grid")
    report = EvalReport(meta={"model_id": model.model_id, "source_set": source.name,
                              "iterations": iterations,
                              "epsilon_grid": [float(e) for e in epsilon_grid]})
    ups = []
    for eps in epsilon_grid:
        budget = PerturbationBudget(float(eps), np.inf, iterations)
        up = find_universal(model, source, None, budget)
        ups.append(up)
        for row in eval_universal(model, up, eval_sets).rows:
            report.rows.append(row)
    return report, ups
