"""Image-specific confidence-raising (aid) and confidence-breaking (attack)
perturbation search with signed gradients under an exact sup-norm budget.

Single-step form:     delta = -eps * sign(dJ/dx)            (aid)
Iterative form:       delta <- clip_{±eps}(delta -/+ (eps/N) * sign(g))
                      with g evaluated at clip_{0,1}(x + delta)

The iterative update is kept in perturbation space so the image-agnostic
search in :mod:`aidkit.universal` is the exact same recursion with the
per-image gradient replaced by a mean gradient; a one-image set reproduces
the per-image search bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    AidResult,
    EvalReport,
    InvalidLabelError,
    Perturbation,
    PerturbationBudget,
    PredictionRecord,
    ShapeMismatchError,
    budgeted_image,
    clip_box,
    predict,
)

__all__ = [
    "AidConfig",
    "fgsm_aid",
    "fgsm_attack",
    "ifgsm_aid",
    "ifgsm_attack",
    "ifgsm_batch",
    "aid_dataset",
    "WEAK_EPSILON",
    "STRONG_EPSILON",
]

WEAK_EPSILON = 0.05   # imperceptible regime default
STRONG_EPSILON = 5.0  # content-destroying regime default


@dataclass(frozen=True)
class AidConfig:
    """Budget plus regime/direction tags for dataset-level runs."""

    budget: PerturbationBudget
    regime: str = "weak"      # "weak" | "strong"
    direction: str = "aid"    # "aid" | "attack"

    def __post_init__(self):
        if self.regime not in ("weak", "strong"):
            raise ValueError(f"regime must be 'weak' or 'strong', got {self.regime!r}")
        if self.direction not in ("aid", "attack"):
            raise ValueError(f"direction must be 'aid' or 'attack', got {self.direction!r}")

    @classmethod
    def weak(cls, epsilon=WEAK_EPSILON, iterations=50, direction="aid"):
        return cls(PerturbationBudget(epsilon, np.inf, iterations), "weak", direction)

    @classmethod
    def strong(cls, epsilon=STRONG_EPSILON, iterations=50, direction="aid"):
        return cls(PerturbationBudget(epsilon, np.inf, iterations), "strong", direction)


def _check_inputs(model, xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.size == 0:
        raise ValueError("empty image batch")
    if xs.shape[1:] != tuple(model.input_shape):
        raise ShapeMismatchError(
            f"images {xs.shape[1:]} vs model input {tuple(model.input_shape)}")
    if ys.size and (ys.min() < 0 or ys.max() >= model.class_count):
        raise InvalidLabelError(f"labels outside [0, {model.class_count})")
    return xs, ys


def signed_gradient_deltas(model, xs, ys, epsilon, iterations, direction):
    """Run the iterative search for a batch; returns per-image deltas.

    ``direction="aid"`` descends the per-example cross-entropy,
    ``"attack"`` ascends it; the unclipped steps of the two directions are
    exact negations of each other at every iterate.
    """
    xs, ys = _check_inputs(model, xs, ys)
    coef = (-1.0 if direction == "aid" else 1.0) * (epsilon / iterations)
    delta = np.zeros_like(xs)
    for _ in range(iterations):
        z = clip_box(xs + delta, 0.0, 1.0)
        _, g = model.loss_and_input_grad(z, ys)
        delta = clip_box(delta + coef * np.sign(g), -epsilon, epsilon)
    return delta


def _single_result(model, x, y, delta, epsilon, direction, method,
                   iterations, norm=np.inf):
    z, _ = budgeted_image(x, delta, epsilon)
    orig = predict(model, x[None], [y])[0]
    pert = predict(model, z[None], [y])[0]
    budget = PerturbationBudget(epsilon, norm, iterations)
    return AidResult(
        original=orig, perturbed=pert,
        perturbation=Perturbation(delta, budget, direction),
        method=method, perturbed_image=z)


def fgsm_aid(model, x, y, epsilon):
    """One signed-gradient step toward lower loss: delta = -eps*sign(dJ/dx)."""
    return _fgsm(model, x, y, epsilon, "aid")


def fgsm_attack(model, x, y, epsilon):
    """Sign-flipped counterpart of :func:`fgsm_aid`."""
    return _fgsm(model, x, y, epsilon, "attack")


def _fgsm(model, x, y, epsilon, direction):
    x = np.asarray(x, dtype=np.float64)
    xs, ys = _check_inputs(model, x[None], [y])
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    _, g = model.loss_and_input_grad(xs, ys)
    sgn = -1.0 if direction == "aid" else 1.0
    delta = (sgn * epsilon) * np.sign(g[0])
    return _single_result(model, x, y, delta, epsilon, direction,
                          f"fgsm_{direction}", iterations=1)


def ifgsm_aid(model, x, y, budget):
    """Iterative signed-gradient aid with step eps/N and sup-norm projection."""
    return _ifgsm(model, x, y, budget, "aid")


def ifgsm_attack(model, x, y, budget):
    """Iterative signed-gradient attack (cost maximization)."""
    return _ifgsm(model, x, y, budget, "attack")


def _ifgsm(model, x, y, budget, direction):
    if budget.norm != np.inf:
        raise ValueError("iterative signed-gradient search uses the sup-norm budget")
    x = np.asarray(x, dtype=np.float64)
    delta = signed_gradient_deltas(model, x[None], [y], budget.epsilon,
                                   budget.iterations, direction)[0]
    return _single_result(model, x, y, delta, budget.epsilon, direction,
                          f"ifgsm_{direction}", budget.iterations)


def ifgsm_batch(model, xs, ys, budget, direction="aid", chunk=256):
    """Batch iterative search; returns (deltas, perturbed_images).

    Chunked for memory; each image's trajectory is independent of its
    chunk-mates up to float rounding of the underlying GEMMs.
    """
    xs, ys = _check_inputs(model, xs, ys)
    if budget.norm != np.inf:
        raise ValueError("iterative signed-gradient search uses the sup-norm budget")
    deltas = np.empty_like(xs)
    perturbed = np.empty_like(xs)
    for lo in range(0, len(xs), chunk):
        hi = min(lo + chunk, len(xs))
        d = signed_gradient_deltas(model, xs[lo:hi], ys[lo:hi],
                                   budget.epsilon, budget.iterations, direction)
        for i in range(lo, hi):
            z, _ = budgeted_image(xs[i], d[i - lo], budget.epsilon)
            perturbed[i] = z
            deltas[i] = d[i - lo]
    return deltas, perturbed


def aid_dataset(model, dataset, config, chunk=256, keep_results=True):
    """Run the configured search over a whole dataset.

    Returns (results, report): per-example AidResults (None for recorded
    per-image failures) and an EvalReport with aggregate accuracy and mean
    true-class confidence before and after.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    xs, ys = dataset.images, dataset.labels
    n = len(dataset)
    results = [None] * n if keep_results else None
    failures = []
    eps = config.budget.epsilon

    orig_probs = np.empty((n, model.class_count))
    pert_probs = np.empty((n, model.class_count))
    perturbed = np.empty_like(xs)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        try:
            d = signed_gradient_deltas(model, xs[lo:hi], ys[lo:hi], eps,
                                       config.budget.iterations, config.direction)
        except Exception:  # isolate the failing images, keep going
            d = np.zeros_like(xs[lo:hi])
            for i in range(lo, hi):
                try:
                    d[i - lo] = signed_gradient_deltas(
                        model, xs[i:i + 1], ys[i:i + 1], eps,
                        config.budget.iterations, config.direction)[0]
                except Exception as e_one:
                    failures.append({"index": i, "error": str(e_one)})
        orig_probs[lo:hi] = model.predict_proba(xs[lo:hi])
        for i in range(lo, hi):
            z, _ = budgeted_image(xs[i], d[i - lo], eps)
            perturbed[i] = z
        pert_probs[lo:hi] = model.predict_proba(perturbed[lo:hi])
        if keep_results:
            for i in range(lo, hi):
                results[i] = _result_from_probs(
                    orig_probs[i], pert_probs[i], int(ys[i]), d[i - lo],
                    perturbed[i], config)

    idx = np.arange(n)
    report = EvalReport(meta={"model_id": model.model_id, "dataset": dataset.name,
                              "failures": failures})
    for tag, probs in (("original", orig_probs), ("perturbed", pert_probs)):
        acc = float((probs.argmax(axis=-1) == ys).mean())
        conf = float(probs[idx, ys].mean())
        report.add_row(model_id=model.model_id, image_set=dataset.name,
                       regime=config.regime, direction=config.direction,
                       stage=tag, epsilon=(0.0 if tag == "original" else eps),
                       iterations=config.budget.iterations,
                       n=n, accuracy=acc, mean_confidence=conf)
    return results, report


def _result_from_probs(orig_p, pert_p, y, delta, z, config):
    orig = PredictionRecord(int(orig_p.argmax()), orig_p, float(orig_p[y]))
    pert = PredictionRecord(int(pert_p.argmax()), pert_p, float(pert_p[y]))
    return AidResult(
        original=orig, perturbed=pert,
        perturbation=Perturbation(delta, config.budget, config.direction),
        method=f"ifgsm_{config.direction}", perturbed_image=z)
