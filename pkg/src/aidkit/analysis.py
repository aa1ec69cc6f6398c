"""Prediction analysis: gradient-weighted attention maps and their overlap,
robustness of perturbed images under re-attack, and cross-model
transferability of aided images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import (
    EvalReport,
    ShapeMismatchError,
    evaluate_accuracy,
)
from .aid import ifgsm_batch

__all__ = [
    "AttentionMap",
    "TransferMatrix",
    "gradcam",
    "gradcam_batch",
    "attended_region",
    "iou",
    "iou_distribution",
    "robustness_report",
    "transfer_matrix",
]


@dataclass(frozen=True)
class AttentionMap:
    """Max-normalized, rectified class-attention heat map in [0,1]."""

    heat: np.ndarray  # (H, W)
    layer: str
    target_class: int

    def __post_init__(self):
        h = self.heat
        if h.size and (h.min() < 0.0 or h.max() > 1.0 + 1e-12):
            raise ValueError("heat values outside [0,1]")
        if h.size and h.max() > 0 and abs(h.max() - 1.0) > 1e-9:
            raise ValueError("nonzero heat map must peak at 1")


@dataclass(frozen=True)
class TransferMatrix:
    """accuracy[i, j]: images aided on source_ids[i], classified by eval_ids[j]."""

    source_ids: tuple
    eval_ids: tuple
    accuracy: np.ndarray
    regime: str


def gradcam_batch(model, xs, classes, layer=None):
    """Heat maps for a batch, upsampled to input resolution.

    Channel weights are the spatial mean of d(class logit)/d(feature map);
    the weighted channel sum is rectified, bilinearly upsampled, and
    max-normalized per image (an all-zero map stays all-zero).
    """
    layer = layer or _default_layer(model)
    xs = np.asarray(xs)
    A, dA = model.feature_with_score_grad(xs, classes, layer)
    weights = dA.mean(axis=(1, 2))                       # (B, ch)
    raw = np.maximum((A * weights[:, None, None, :]).sum(axis=-1), 0.0)
    H, W = model.input_shape[0], model.input_shape[1]
    maps = np.empty((len(xs), H, W))
    for i, r in enumerate(raw):
        up = r if r.shape == (H, W) else ndimage.zoom(r, (H / r.shape[0], W / r.shape[1]), order=1)
        peak = up.max()
        maps[i] = up / peak if peak > 0 else up
    return np.clip(maps, 0.0, 1.0)


def gradcam(model, x, target_class, layer=None):
    """Attention map of one image for one class."""
    layer = layer or _default_layer(model)
    heat = gradcam_batch(model, np.asarray(x)[None], [target_class], layer)[0]
    return AttentionMap(heat, layer, int(target_class))


def _default_layer(model):
    if not model.feature_layers:
        from .core import UnknownLayerError
        raise UnknownLayerError(f"model {model.model_id!r} exposes no feature layers")
    return model.feature_layers[-1]


def attended_region(amap, tau=0.5):
    """Binary mask heat >= tau, tau in (0,1)."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")
    heat = amap.heat if isinstance(amap, AttentionMap) else np.asarray(amap)
    return heat >= tau


def iou(a, b):
    """Intersection over union of two masks; 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def iou_distribution(model, dataset, aid_config, attack_config, tau=0.5,
                     layer=None, bins=10, chunk=256):
    """Attended-region overlap of originals vs their aided and attacked versions.

    The target class for each map is the model's prediction on that very
    input, so an attack that flips the prediction is scored against the map
    of the class it flipped to.
    """
    layer = layer or _default_layer(model)
    xs, ys = dataset.images, dataset.labels
    _, aided = ifgsm_batch(model, xs, ys, aid_config.budget, "aid", chunk=chunk)
    _, attacked = ifgsm_batch(model, xs, ys, attack_config.budget, "attack", chunk=chunk)

    values = {"aided": np.empty(len(xs)), "attacked": np.empty(len(xs))}
    for lo in range(0, len(xs), chunk):
        hi = min(lo + chunk, len(xs))
        base_cls = model.predict_proba(xs[lo:hi]).argmax(axis=-1)
        base_masks = gradcam_batch(model, xs[lo:hi], base_cls, layer) >= tau
        for tag, imgs in (("aided", aided), ("attacked", attacked)):
            cls = model.predict_proba(imgs[lo:hi]).argmax(axis=-1)
            masks = gradcam_batch(model, imgs[lo:hi], cls, layer) >= tau
            for i in range(hi - lo):
                values[tag][lo + i] = iou(base_masks[i], masks[i])

    edges = np.linspace(0.0, 1.0, bins + 1)
    return {
        "aided": values["aided"],
        "attacked": values["attacked"],
        "hist_aided": np.histogram(values["aided"], bins=edges)[0],
        "hist_attacked": np.histogram(values["attacked"], bins=edges)[0],
        "bin_edges": edges,
        "tau": tau,
        "layer": layer,
    }


def robustness_report(model, dataset, aid_configs, attack_budgets, chunk=256):
    """Accuracy of (aided) images under re-attack, per regime and strength.

    ``aid_configs`` maps regime name -> AidConfig or None (None = plain
    originals).  Each regime is filtered to its correctly classified images
    before attacking, so the unattacked accuracy is 100% by construction.
    """
    xs, ys = dataset.images, dataset.labels
    report = EvalReport(meta={"model_id": model.model_id, "dataset": dataset.name})
    for regime, config in aid_configs.items():
        if config is None:
            imgs = xs
        else:
            _, imgs = ifgsm_batch(model, xs, ys, config.budget, config.direction,
                                  chunk=chunk)
        preds = _batched_argmax(model, imgs, chunk)
        keep = np.flatnonzero(preds == ys)
        if len(keep) == 0:
            raise ValueError(f"regime {regime!r}: no correctly classified images to attack")
        kept_imgs, kept_ys = imgs[keep], ys[keep]
        acc, conf = evaluate_accuracy(model, kept_imgs, kept_ys)
        report.add_row(model_id=model.model_id, regime=regime, attack_epsilon=0.0,
                       n=len(keep), accuracy=acc, mean_confidence=conf)
        for budget in attack_budgets:
            _, struck = ifgsm_batch(model, kept_imgs, kept_ys, budget, "attack",
                                    chunk=chunk)
            acc, conf = evaluate_accuracy(model, struck, kept_ys)
            report.add_row(model_id=model.model_id, regime=regime,
                           attack_epsilon=budget.epsilon, n=len(keep),
                           accuracy=acc, mean_confidence=conf)
    return report


def _batched_argmax(model, xs, chunk=512):
    parts = [model.predict_proba(xs[lo:lo + chunk]).argmax(axis=-1)
             for lo in range(0, len(xs), chunk)]
    return np.concatenate(parts)


def transfer_matrix(models, dataset, configs, chunk=256):
    """Aid with each model in turn, classify with every model.

    ``configs`` maps regime -> AidConfig; returns {regime: TransferMatrix}.
    Row i, column j holds the accuracy of model j on images aided via model i.
    """
    shapes = {tuple(m.input_shape) for m in models}
    ks = {m.class_count for m in models}
    if len(shapes) != 1 or len(ks) != 1:
        raise ValueError("models must share input shape and label space")
    xs, ys = dataset.images, dataset.labels
    out = {}
    for regime, config in configs.items():
        acc = np.empty((len(models), len(models)))
        for i, src in enumerate(models):
            _, aided = ifgsm_batch(src, xs, ys, config.budget, config.direction,
                                   chunk=chunk)
            for j, ev in enumerate(models):
                acc[i, j] = evaluate_accuracy(ev, aided, ys)[0]
        out[regime] = TransferMatrix(tuple(m.model_id for m in models),
                                     tuple(m.model_id for m in models),
                                     acc, regime)
    return out
