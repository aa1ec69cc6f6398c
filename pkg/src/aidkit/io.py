"""Perturbation persistence: a float32 row-major array container plus a JSON
sidecar describing how the perturbation was produced."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .core import PerturbationBudget, clip_box

__all__ = ["save_perturbation", "load_perturbation"]

SIDECAR_KEYS = ("model_id", "epsilon", "norm", "iterations", "method",
                "source_set", "creation_time")


def save_perturbation(path, delta, model_id, epsilon, norm, iterations,
                      method, source_set=""):
    """Write ``<path>.npy`` (float32, C order) and ``<path>.json``."""
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(delta), dtype=np.float32)
    np.save(path.with_suffix(".npy"), arr)
    meta = {
        "model_id": model_id,
        "epsilon": float(epsilon),
        "norm": "inf" if norm == np.inf else float(norm),
        "iterations": int(iterations),
        "method": method,
        "source_set": source_set,
        "creation_time": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "shape": list(arr.shape),
    }
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(meta, f, indent=2)
    return path.with_suffix(".npy"), path.with_suffix(".json")


def load_perturbation(path):
    """Read a perturbation back as float64 with its sidecar.

    float32 rounding on disk can nudge values past a sup-norm budget, so
    sup-norm deltas are re-clipped to the stored epsilon on load.
    """
    path = Path(path)
    delta = np.load(path.with_suffix(".npy")).astype(np.float64)
    with open(path.with_suffix(".json")) as f:
        meta = json.load(f)
    norm = np.inf if meta["norm"] == "inf" else float(meta["norm"])
    if norm == np.inf:
        delta = clip_box(delta, -meta["epsilon"], meta["epsilon"])
    budget = PerturbationBudget(meta["epsilon"], norm, meta["iterations"])
    return delta, budget, meta
