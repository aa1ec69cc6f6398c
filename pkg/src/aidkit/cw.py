"""Norm-penalized confidence aid: minimize ||delta||_2 + c * f(x + delta)
subject to x + delta in [0,1]^D.

f is the probability margin max_k p_k - p_y, which is zero exactly when the
prediction is already correct, so for correctly classified images a small c
keeps delta near zero (the norm term dominates and there is nothing for the
margin term to improve).  The balancing weight c trades imperceptibility
against correction strength: c=1 behaves like a weak aid, c=10000 forces
corrections regardless of distortion.

Optimization is Adam on delta (canonical moment defaults), with the box
constraint enforced by projection after every step and the best feasible
iterate (lowest objective) returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    AidResult,
    InvalidLabelError,
    Perturbation,
    PerturbationBudget,
    PredictionRecord,
    ShapeMismatchError,
    boxed_delta,
    clip_box,
)

__all__ = ["CwConfig", "NonFiniteObjectiveError", "margin_f", "cw_aid", "cw_aid_batch"]

WEAK_C = 1.0
STRONG_C = 10000.0


class NonFiniteObjectiveError(RuntimeError):
    """Objective became NaN/inf during optimization."""


@dataclass(frozen=True)
class CwConfig:
    c: float = WEAK_C
    steps: int = 100
    learning_rate: float = 0.01

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")

    @classmethod
    def weak(cls, steps=100, learning_rate=0.01):
        return cls(WEAK_C, steps, learning_rate)

    @classmethod
    def strong(cls, steps=100, learning_rate=0.01):
        return cls(STRONG_C, steps, learning_rate)


def margin_f(model, x, y):
    """Probability margin max_k p_k - p_y; >= 0, and 0 iff y attains the max."""
    x = np.asarray(x)
    xs = x[None] if x.ndim == 3 else x
    if not 0 <= int(y) < model.class_count:
        raise InvalidLabelError(f"label {y} outside [0, {model.class_count})")
    p = model.predict_proba(xs)[0]
    return float(p.max() - p[int(y)])


def _margins_and_grads(model, zs, ys):
    """Batch margins f(z) and their input gradients.

    The margin's logit-space gradient follows from the softmax Jacobian:
    with m = argmax p,  d f / d logits = p_m e_m - p_y e_y - (p_m - p_y) p,
    which vanishes identically when m == y (the margin sits on its floor).
    """
    p = model.predict_proba(zs)
    n, k = p.shape
    idx = np.arange(n)
    m = p.argmax(axis=-1)
    pm = p[idx, m]
    py = p[idx, ys]
    f = pm - py
    dlogits = np.zeros_like(p)
    dlogits[idx, m] += pm
    dlogits[idx, ys] -= py
    dlogits -= (pm - py)[:, None] * p
    g = model.input_grad_from_dlogits(zs, dlogits)
    return f, g, p


def cw_aid_batch(model, xs, ys, config):
    """Vectorized norm-penalized aid over a batch; returns a list of AidResults."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.shape[1:] != tuple(model.input_shape):
        raise ShapeMismatchError(
            f"images {xs.shape[1:]} vs model input {tuple(model.input_shape)}")
    if ys.size and (ys.min() < 0 or ys.max() >= model.class_count):
        raise InvalidLabelError(f"labels outside [0, {model.class_count})")
    n = len(xs)
    axes = tuple(range(1, xs.ndim))

    delta = np.zeros_like(xs)
    m1 = np.zeros_like(xs)
    m2 = np.zeros_like(xs)
    b1, b2, adam_eps = 0.9, 0.999, 1e-8

    orig_probs = model.predict_proba(xs)

    def objective(d):
        norms = np.sqrt((d * d).sum(axis=axes))
        f, g, p = _margins_and_grads(model, clip_box(xs + d, 0.0, 1.0), ys)
        return norms + config.c * f, norms, g, p

    obj, norms, grad_f, _ = objective(delta)
    trace = np.empty((config.steps + 1, n))
    trace[0] = obj
    best_obj = obj.copy()
    best_delta = delta.copy()

    def per_example(v):
        return v.reshape(v.shape + (1,) * (xs.ndim - 1))

    for t in range(1, config.steps + 1):
        # subgradient of ||delta||_2 is delta/||delta||_2, taken as 0 at 0
        grad = delta / per_example(np.maximum(norms, 1e-12)) + config.c * grad_f
        m1 = b1 * m1 + (1 - b1) * grad
        m2 = b2 * m2 + (1 - b2) * grad * grad
        mhat = m1 / (1 - b1 ** t)
        vhat = m2 / (1 - b2 ** t)
        delta = delta - config.learning_rate * mhat / (np.sqrt(vhat) + adam_eps)
        delta = clip_box(xs + delta, 0.0, 1.0) - xs  # box projection each step

        obj, norms, grad_f, _ = objective(delta)
        if not np.all(np.isfinite(obj)):
            raise NonFiniteObjectiveError(
                f"objective non-finite at step {t}: "
                f"{int(np.count_nonzero(~np.isfinite(obj)))} example(s)")
        trace[t] = obj
        better = obj < best_obj
        best_obj = np.where(better, obj, best_obj)
        best_delta[better] = delta[better]

    results = []
    for i in range(n):
        z, d = boxed_delta(xs[i], best_delta[i])
        norm2 = float(np.linalg.norm(d.ravel()))
        pert_p = model.predict_proba(z[None])[0]
        budget = PerturbationBudget(norm2, 2, config.steps)
        results.append(AidResult(
            original=PredictionRecord(int(orig_probs[i].argmax()), orig_probs[i],
                                      float(orig_probs[i][ys[i]])),
            perturbed=PredictionRecord(int(pert_p.argmax()), pert_p,
                                       float(pert_p[ys[i]])),
            perturbation=Perturbation(d, budget, "aid"),
            method="cw_aid", perturbed_image=z,
            objective_trace=trace[:, i].copy()))
    return results


def cw_aid(model, x, y, config):
    """Single-image norm-penalized aid; see :func:`cw_aid_batch`."""
    x = np.asarray(x, dtype=np.float64)
    return cw_aid_batch(model, x[None], np.asarray([y]), config)[0]
