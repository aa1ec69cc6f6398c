"""Nearest-neighbor local-linear approximation of the natural-image manifold.

A chart at an anchor image is the mean of its k nearest bank images plus the
top-q principal directions of those neighbors; the distance of a probe to
the chart is the residual norm after projecting onto that affine subspace.
Only the qualitative behavior (distance grows with perturbation size) is
claimed, so the construction favors simplicity: raw pixel space, Euclidean
neighbors, one chart per anchor.
"""

from __future__ import annotations

import numpy as np

from .core import EvalReport, LabeledDataset, PerturbationBudget

__all__ = ["ManifoldApprox", "local_chart", "manifold_distance", "distance_curve"]


class ManifoldApprox:
    """Flattened reference bank with neighbor count k and chart dimension q."""

    def __init__(self, bank, k=50, q=10):
        if isinstance(bank, LabeledDataset):
            bank = bank.images
        bank = np.asarray(bank, dtype=np.float64)
        if bank.ndim > 2:
            self.image_shape = bank.shape[1:]
            bank = bank.reshape(bank.shape[0], -1)
        else:
            self.image_shape = (bank.shape[1],)
        if bank.shape[0] == 0:
            raise ValueError("empty reference bank")
        if not 1 <= q <= k:
            raise ValueError(f"need k >= q >= 1, got k={k}, q={q}")
        if k > bank.shape[0]:
            raise ValueError(f"k={k} exceeds bank size {bank.shape[0]}")
        self.bank = bank
        self.k = k
        self.q = q
        self._sq_norms = (bank * bank).sum(axis=1)

    def neighbor_indices(self, anchor):
        a = np.asarray(anchor, dtype=np.float64).ravel()
        d2 = self._sq_norms - 2.0 * (self.bank @ a) + a @ a
        order = np.argsort(d2, kind="stable")  # ties -> lowest bank index
        return order[: self.k]


def local_chart(approx, anchor):
    """(origin, basis): neighbor mean and top-q principal directions (rows)."""
    nbrs = approx.bank[approx.neighbor_indices(anchor)]
    origin = nbrs.mean(axis=0)
    _, _, vh = np.linalg.svd(nbrs - origin, full_matrices=False)
    return origin, vh[: approx.q]


def manifold_distance(approx, anchor, probe):
    """Residual distance of ``probe`` to the chart anchored at ``anchor``."""
    origin, basis = local_chart(approx, anchor)
    return _chart_distance(origin, basis, probe)


def _chart_distance(origin, basis, probe):
    r = np.asarray(probe, dtype=np.float64).ravel() - origin
    resid = r - basis.T @ (basis @ r)
    return float(np.linalg.norm(resid))


def distance_curve(model, dataset, approx, epsilon_grid, iterations=50, chunk=256):
    """Mean chart distance of aided images per epsilon, anchored at originals.

    Charts are built once per image and reused across the grid.  Rows carry
    (epsilon, mean_distance, std) in grid order.
    """
    from .aid import ifgsm_batch

    epsilon_grid = list(epsilon_grid)
    if not epsilon_grid:
        raise ValueError("empty epsilon grid")
    xs, ys = dataset.images, dataset.labels
    charts = [local_chart(approx, x) for x in xs]
    report = EvalReport(meta={"model_id": model.model_id, "dataset": dataset.name,
                              "k": approx.k, "q": approx.q,
                              "iterations": iterations})
    for eps in epsilon_grid:
        if eps == 0.0:
            probes = xs  # unperturbed baseline row
        else:
            budget = PerturbationBudget(float(eps), np.inf, iterations)
            _, probes = ifgsm_batch(model, xs, ys, budget, "aid", chunk=chunk)
        dists = np.array([_chart_distance(o, b, p)
                          for (o, b), p in zip(charts, probes)])
        report.add_row(epsilon=float(eps), mean_distance=float(dists.mean()),
                       std=float(dists.std()), n=len(dists))
    return report
