"""Training-data modification in the image principal-component basis.

Each training image is projected onto the eigenvectors of the pixel
covariance; the top-d coefficients are kept, the next m are replaced by
Gaussian noise scaled to c * sqrt(eigenvalue), and the remainder is zeroed
before reconstruction.  Training on such data spreads the classes along the
noise directions (which carry no label information), pushing decision
boundaries to run along them; models trained this way tolerate much larger
image-agnostic perturbations.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .core import EvalReport, LabeledDataset, clip_box
from .universal import build_splits, epsilon_sweep

log = logging.getLogger(__name__)

__all__ = [
    "PcaModel",
    "ModificationConfig",
    "fit_pca",
    "modify_image",
    "modify_dataset",
    "train_modified",
    "compare_universal",
]


@dataclass(frozen=True)
class PcaModel:
    """Mean image plus full spectral decomposition of the pixel covariance.

    Eigenvalues are sorted nonincreasing (tiny negative rounding artifacts
    clamped to zero); eigenvector columns are orthonormal.
    """

    mean: np.ndarray          # (D,)
    eigenvalues: np.ndarray   # (D,), lambda_1 >= ... >= lambda_D >= 0
    eigenvectors: np.ndarray  # (D, D), columns
    image_shape: tuple
    dataset_id: str = ""

    @property
    def dim(self):
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class ModificationConfig:
    """Kept-subspace size d, noise dimension count m, noise scale c, seed."""

    d: int
    m: int = 10
    c: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.d < 0 or self.m < 0:
            raise ValueError(f"d and m must be >= 0, got d={self.d}, m={self.m}")
        if self.c <= 0:
            raise ValueError(f"noise scale c must be > 0, got {self.c}")


def fit_pca(dataset):
    """Mean and eigendecomposition of the training-pixel covariance."""
    if len(dataset) < 2:
        raise ValueError(f"need at least 2 images to fit, got {len(dataset)}")
    X = dataset.images.reshape(len(dataset), -1).astype(np.float64)
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / len(dataset)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    if evals[0] < 1e-18:  # identical images leave only rounding dust
        warnings.warn("degenerate dataset: all images identical, spectrum is zero")
    return PcaModel(mean, evals, evecs, dataset.image_shape, dataset.name)


def _noisy_coefficients(coeffs, pca, config, xi):
    """Apply the keep/noise/zero rule to projected coefficients.

    coeffs: (N, D) projections V^T (x - mean); xi: (N, m) standard normals.
    """
    d, m = config.d, config.m
    if d + m > pca.dim:
        raise ValueError(f"d+m = {d + m} exceeds pixel dimension {pca.dim}")
    out = np.zeros_like(coeffs)
    out[:, :d] = coeffs[:, :d]
    if m:
        out[:, d:d + m] = xi * (config.c * np.sqrt(pca.eigenvalues[d:d + m]))
    return out


def modify_image(x, pca, config, rng=None, clip=True):
    """Reconstruct one image from kept + noised coefficients.

    Deterministic for a fixed seed: with ``rng=None`` the generator is
    seeded from ``config.seed``.  ``clip=False`` skips the [0,1] box (the
    raw reconstruction is what the coefficient rule produces; training
    pipelines need valid pixels, so the default clips).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != pca.image_shape:
        raise ValueError(f"image {x.shape} vs fitted shape {pca.image_shape}")
    rng = rng or np.random.default_rng(config.seed)
    flat = x.reshape(1, -1)
    keep = config.d + config.m
    V = pca.eigenvectors[:, :keep]
    coeffs = (flat - pca.mean) @ V
    xi = rng.standard_normal((1, config.m))
    noised = _noisy_coefficients(coeffs, pca, config, xi)[:, :keep]
    recon = (noised @ V.T + pca.mean).reshape(pca.image_shape)
    return clip_box(recon, 0.0, 1.0) if clip else recon


def modify_dataset(dataset, pca, config):
    """Modify every image once (noise drawn per image, fixed by the seed).

    Reconstructions are clipped to [0,1] (training pipelines need valid
    pixels); the clipping magnitude is logged so its effect is inspectable.
    """
    X = dataset.images.reshape(len(dataset), -1)
    keep = config.d + config.m
    V = pca.eigenvectors[:, :keep]
    coeffs = (X - pca.mean) @ V
    rng = np.random.default_rng(config.seed)
    xi = rng.standard_normal((len(dataset), config.m))
    noised = _noisy_coefficients(coeffs, pca, config, xi)[:, :keep]
    recon = noised @ V.T + pca.mean
    clipped = clip_box(recon, 0.0, 1.0)
    overflow = np.abs(recon - clipped)
    log.info("modify_dataset d=%d m=%d c=%g: clipped %.3f%% of pixels, "
             "mean|overflow|=%.2e max=%.2e", config.d, config.m, config.c,
             100.0 * float((overflow > 0).mean()),
             float(overflow.mean()), float(overflow.max()))
    recon = clipped
    return LabeledDataset(recon.reshape(dataset.images.shape), dataset.labels,
                          dataset.class_count,
                          name=f"{dataset.name}_pca{config.d}",
                          source_ids=dataset.source_ids)


def train_modified(structure, dataset, config, training, store=None, model_id=None):
    """Fit the covariance on ``dataset``, modify it, and train ``structure``.

    Returns a handle tagged with the modification parameters (model id
    defaults to e.g. ``pca500`` for d=500).
    """
    from . import harness  # deferred: harness dispatches back into this module

    pca = fit_pca(dataset)
    modified = modify_dataset(dataset, pca, config)
    model_id = model_id or f"pca{config.d}"
    spec = harness.TrainingSpec(
        structure=structure, dataset_id=modified.name, seed=training.seed,
        epochs=training.epochs, learning_rate=training.learning_rate,
        momentum=training.momentum, weight_decay=training.weight_decay,
        batch_size=training.batch_size, augment=training.augment,
        model_id=model_id)
    handle = harness.train_baseline(spec, modified, store=store)
    handle.meta.update({"pca_d": config.d, "pca_m": config.m,
                        "pca_c": config.c, "pca_seed": config.seed})
    return handle


def compare_universal(models, dataset, epsilon_grid, n=1000, seed=0,
                      iterations=50, source="correctA"):
    """Per-model universal-perturbation sweeps on shared protocol settings.

    Splits are rebuilt per model (correctness is model-dependent).  The
    ``source`` set is either one split name or a '+'-joined union; every
    model's rows land in one comparative report.
    """
    shapes = {tuple(m.input_shape) for m in models}
    ks = {m.class_count for m in models}
    if len(shapes) != 1 or len(ks) != 1:
        raise ValueError("models must share input shape and class count")
    report = EvalReport(meta={"models": [m.model_id for m in models],
                              "dataset": dataset.name, "n": n, "seed": seed,
                              "iterations": iterations, "source": source,
                              "epsilon_grid": [float(e) for e in epsilon_grid]})
    for model in models:
        splits = build_splits(model, dataset, n=n, seed=seed)
        parts = source.split("+")
        src = (splits[parts[0]] if len(parts) == 1
               else LabeledDataset.concat([splits[p] for p in parts], name=source))
        eval_sets = dict(splits)
        if len(parts) > 1:
            eval_sets[source] = src
            suffix = parts[0][-1]
            other = "B" if suffix == "A" else "A"
            unseen = "+".join(p[:-1] + other for p in parts)
            eval_sets[unseen] = LabeledDataset.concat(
                [splits[p[:-1] + other] for p in parts], name=unseen)
        sub_report, _ = epsilon_sweep(model, src, eval_sets, epsilon_grid,
                                      iterations=iterations)
        report.rows.extend(sub_report.rows)
    return report
