"""Dataset construction and ingestion.

Three sources, all yielding a LabeledDataset of float pixels in [0,1]:

* a procedural pattern-classification generator (the desk-scale workhorse:
  smooth class templates blended with a distractor class plus structured and
  white noise, with tunable difficulty);
* a directory of image files plus a CSV manifest with columns path,label;
* pickled small-image archive batches (the standard 32x32 channel-major
  uint8 layout used by the common CIFAR-style downloads).
"""

from __future__ import annotations

import csv
import pickle
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import LabeledDataset, clip_box

__all__ = [
    "make_pattern_dataset",
    "load_manifest_dataset",
    "save_manifest_dataset",
    "load_pickle_archive",
    "load_dataset",
]


def make_pattern_dataset(n, classes=10, size=16, channels=3, seed=0,
                         name=None, template_sigma=2.0, texture=0.8,
                         mix_max=0.55, signal=0.32, smooth_noise=0.12,
                         white_noise=0.06, brightness=0.06, max_shift=2):
    """Procedural image classification task with controllable difficulty.

    Each class template is a smooth random field plus a fine-grained texture
    component (``texture`` sets its relative weight; texture puts class
    evidence in high-frequency pixels, which gives trained models the large
    gradient norms real image classifiers have).  An example blends its
    class template with a random distractor class (weight up to
    ``mix_max``), shifts both, and adds low-frequency and white noise plus a
    brightness offset.  Same seed, same dataset.
    """
    rng = np.random.default_rng(seed)
    H = W = size

    # templates share the generator driving per-example noise, so different
    # seeds give different template banks; for train/test splits of ONE task
    # use make_task()
    templates = _class_templates(rng, classes, H, W, channels,
                                 template_sigma, texture)
    return _render(rng, templates, n, classes, H, W, channels,
                   name or f"pattern{size}-{n}", mix_max, signal,
                   smooth_noise, white_noise, brightness, max_shift)


def make_task(n_train, n_test, classes=10, size=16, channels=3, seed=0,
              name="pattern", **knobs):
    """Train/test pair drawn from one template bank (shared task, disjoint draws)."""
    rng = np.random.default_rng(seed)
    H = W = size
    defaults = dict(template_sigma=2.0, texture=0.8, mix_max=0.55, signal=0.32,
                    smooth_noise=0.12, white_noise=0.06, brightness=0.06,
                    max_shift=2)
    defaults.update(knobs)
    templates = _class_templates(rng, classes, H, W, channels,
                                 defaults.pop("template_sigma"),
                                 defaults.pop("texture"))
    train = _render(rng, templates, n_train, classes, H, W, channels,
                    f"{name}-train", **defaults)
    test = _render(rng, templates, n_test, classes, H, W, channels,
                   f"{name}-test", **defaults)
    return train, test


def _class_templates(rng, count, H, W, C, sigma, texture):
    smooth = _smooth_fields(rng, count, H, W, C, sigma)
    if texture <= 0:
        return smooth
    fine = _smooth_fields(rng, count, H, W, C, 0.5)
    mixed = smooth + texture * fine
    mixed -= mixed.mean(axis=(1, 2, 3), keepdims=True)
    mixed /= mixed.std(axis=(1, 2, 3), keepdims=True)
    return mixed


def _smooth_fields(rng, count, H, W, C, sigma):
    raw = rng.standard_normal((count, H, W, C))
    smooth = ndimage.gaussian_filter(raw, sigma=(0, sigma, sigma, 0), mode="wrap")
    smooth -= smooth.mean(axis=(1, 2, 3), keepdims=True)
    smooth /= smooth.std(axis=(1, 2, 3), keepdims=True)
    return smooth


def _render(rng, templates, n, classes, H, W, C, name, mix_max, signal,
            smooth_noise, white_noise, brightness, max_shift):
    labels = rng.integers(0, classes, size=n)
    distract = (labels + rng.integers(1, classes, size=n)) % classes
    mix = rng.uniform(0.0, mix_max, size=n)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2, 2))
    bright = rng.normal(0.0, brightness, size=n)

    smooth = ndimage.gaussian_filter(
        rng.standard_normal((n, H, W, C)), sigma=(0, 1.5, 1.5, 0), mode="wrap")
    smooth *= smooth_noise / max(smooth.std(), 1e-12)
    white = rng.normal(0.0, white_noise, size=(n, H, W, C))

    images = np.empty((n, H, W, C))
    for i in range(n):
        t_main = np.roll(templates[labels[i]], tuple(shifts[i, 0]), axis=(0, 1))
        t_mix = np.roll(templates[distract[i]], tuple(shifts[i, 1]), axis=(0, 1))
        struct = (1.0 - mix[i]) * t_main + mix[i] * t_mix
        images[i] = 0.5 + signal * struct + smooth[i] + white[i] + bright[i]
    return LabeledDataset(clip_box(images, 0.0, 1.0), labels, classes, name=name)


# ---------------------------------------------------------------------------
# file ingestion
# ---------------------------------------------------------------------------

def load_manifest_dataset(directory, class_count=None, name=None):
    """Directory of image files + manifest.csv with columns path,label."""
    from PIL import Image as PILImage

    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv in {directory}")
    paths, labels = [], []
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            paths.append(row["path"])
            labels.append(int(row["label"]))
    if not paths:
        raise ValueError(f"empty manifest in {directory}")
    images = []
    for p in paths:
        arr = np.asarray(PILImage.open(directory / p).convert("RGB"), dtype=np.float64)
        images.append(arr / 255.0)
    labels = np.asarray(labels)
    k = class_count or int(labels.max()) + 1
    return LabeledDataset(np.stack(images), labels, k,
                          name=name or directory.name, source_ids=paths)


def save_manifest_dataset(dataset, directory):
    """Write a dataset as PNGs plus manifest.csv (inverse of the loader)."""
    from PIL import Image as PILImage

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(len(dataset)):
        fname = f"img_{i:06d}.png"
        arr = np.round(dataset.images[i] * 255.0).astype(np.uint8)
        PILImage.fromarray(arr).save(directory / fname)
        rows.append((fname, int(dataset.labels[i])))
    with open(directory / "manifest.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["path", "label"])
        w.writerows(rows)


def load_pickle_archive(path, class_count=None, name=None):
    """One or more pickled batches of channel-major uint8 32x32 images.

    Accepts a single batch file or a directory of ``*batch*``/``train``/
    ``test`` files; keys may be bytes or str, labels under ``labels`` or
    ``fine_labels``.
    """
    path = Path(path)
    files = [path]
    if path.is_dir():
        files = sorted(p for p in path.iterdir()
                       if p.is_file() and ("batch" in p.name or p.name in ("train", "test")))
        if not files:
            raise FileNotFoundError(f"no archive batches under {path}")
    datas, labels = [], []
    for f in files:
        with open(f, "rb") as fh:
            d = pickle.load(fh, encoding="bytes")
        d = {(k.decode() if isinstance(k, bytes) else k): v for k, v in d.items()}
        raw = np.asarray(d["data"], dtype=np.uint8)
        lab = d.get("labels", d.get("fine_labels"))
        if lab is None:
            raise KeyError(f"{f}: no 'labels' or 'fine_labels' key")
        datas.append(raw)
        labels.append(np.asarray(lab, dtype=np.int64))
    data = np.concatenate(datas, axis=0)
    labels = np.concatenate(labels)
    side = int(np.sqrt(data.shape[1] // 3))
    images = (data.reshape(-1, 3, side, side).transpose(0, 2, 3, 1)
              .astype(np.float64) / 255.0)
    k = class_count or int(labels.max()) + 1
    return LabeledDataset(images, labels, k, name=name or path.stem)


def load_dataset(spec, **kw):
    """Dispatch on a dataset spec string.

    ``pattern:n=2000,seed=0,size=16`` -> procedural generator;
    a directory containing manifest.csv -> manifest loader;
    anything else -> pickled archive loader.
    """
    spec = str(spec)
    if spec.startswith("pattern:") or spec == "pattern":
        args = {}
        if ":" in spec:
            for part in spec.split(":", 1)[1].split(","):
                if part:
                    k, v = part.split("=")
                    args[k] = float(v) if "." in v else int(v)
        args.update(kw)
        args.setdefault("n", 1000)
        return make_pattern_dataset(**args)
    p = Path(spec)
    if p.is_dir() and (p / "manifest.csv").exists():
        return load_manifest_dataset(p, **kw)
    return load_pickle_archive(p, **kw)
