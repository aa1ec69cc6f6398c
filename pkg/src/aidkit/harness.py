"""Model training, the on-disk model store, and declarative experiment runs.

The training recipe is the standard small-image one: SGD with momentum and
weight decay, step learning-rate decay at 50%/75% of the epochs (the decay
schedule and batch size are toolkit defaults; shift-only augmentation is
used because the procedural datasets are not flip-invariant).
"""

from __future__ import annotations

import hashlib
import json
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .core import EvalReport, evaluate_accuracy, softmax
from .zoo import NetHandle, build_structure
from .net import SgdMomentum

__all__ = [
    "TrainingSpec",
    "TrainingDivergedError",
    "train_baseline",
    "ModelStore",
    "ExperimentConfig",
    "run_experiment",
]


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg, loss_trace):
        super().__init__(msg)
        self.loss_trace = loss_trace


@dataclass
class TrainingSpec:
    structure: str = "smallcnn"
    epochs: int = 200
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    dataset_id: str = ""
    batch_size: int = 128
    augment: bool = True
    lr_decay_at: tuple = (0.5, 0.75)
    dtype: str = "float32"
    model_id: str = ""

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")

    def resolved_id(self):
        return self.model_id or f"{self.structure}_s{self.seed}"


def _augment_batch(xs, rng, max_shift=2):
    """Random per-image wrap-around shifts (labels are shift-invariant here)."""
    out = np.empty_like(xs)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(len(xs), 2))
    for i in range(len(xs)):
        out[i] = np.roll(xs[i], tuple(shifts[i]), axis=(0, 1))
    return out


def train_baseline(spec, dataset, store=None, val=None, verbose=False):
    """Train a registered structure on a dataset; returns a NetHandle.

    Raises TrainingDivergedError (loss trace attached) on non-finite loss.
    """
    dtype = np.float32 if spec.dtype == "float32" else np.float64
    net, feature_layers = build_structure(
        spec.structure, dataset.image_shape, dataset.class_count,
        seed=spec.seed, dtype=dtype)
    opt = SgdMomentum(net, spec.learning_rate, spec.momentum, spec.weight_decay)
    rng = np.random.default_rng(spec.seed + 1)
    n = len(dataset)
    xs = dataset.images.astype(dtype)
    ys = dataset.labels
    decay_epochs = {int(f * spec.epochs) for f in spec.lr_decay_at}
    trace = []
    t0 = time.time()
    for epoch in range(spec.epochs):
        if epoch in decay_epochs and epoch > 0:
            opt.lr *= 0.1
        order = rng.permutation(n)
        losses, correct = [], 0
        for lo in range(0, n, spec.batch_size):
            idx = order[lo:lo + spec.batch_size]
            xb = xs[idx]
            if spec.augment:
                xb = _augment_batch(xb, rng)
            yb = ys[idx]
            logits, caches = net.forward(xb)
            p = softmax(logits)
            loss = float(-np.log(np.maximum(p[np.arange(len(yb)), yb], 1e-30)).mean())
            losses.append(loss)
            correct += int((logits.argmax(axis=-1) == yb).sum())
            dlogits = (p - np.eye(dataset.class_count)[yb]) / len(yb)
            _, grads = net.backward_params(dlogits.astype(dtype), caches)
            opt.step(grads)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(
                f"loss diverged at epoch {epoch}", [r["loss"] for r in trace])
        row = {"epoch": epoch, "lr": opt.lr, "loss": mean_loss,
               "train_accuracy": correct / n}
        if val is not None:
            row["val_accuracy"] = evaluate_accuracy(
                _handle(net, dataset, feature_layers, spec), val.images, val.labels)[0]
        trace.append(row)
        if verbose:
            print(f"epoch {epoch:3d}  lr {opt.lr:.4f}  loss {mean_loss:.4f}  "
                  f"acc {correct / n:.4f}"
                  + (f"  val {row['val_accuracy']:.4f}" if val is not None else ""))
    handle = _handle(net, dataset, feature_layers, spec)
    handle.meta.update({"train_seconds": round(time.time() - t0, 2),
                        "final_train_accuracy": trace[-1]["train_accuracy"]})
    if store is not None:
        store.save(handle, trace)
    return handle


def _handle(net, dataset, feature_layers, spec):
    return NetHandle(net, dataset.class_count, dataset.image_shape,
                     model_id=spec.resolved_id(), feature_layers=feature_layers,
                     meta={"spec": asdict(spec)})


class ModelStore:
    """models/<id>/{weights.npz, meta.json, training_trace.csv}"""

    def __init__(self, root):
        self.root = Path(root)

    def path(self, model_id):
        return self.root / model_id

    def has(self, model_id):
        return (self.path(model_id) / "weights.npz").exists()

    def list(self):
        if not self.root.exists():
            return []
        return sorted(p.name for p in self.root.iterdir()
                      if (p / "weights.npz").exists())

    def save(self, handle, trace=None):
        d = self.path(handle.model_id)
        d.mkdir(parents=True, exist_ok=True)
        np.savez(d / "weights.npz", **handle.net.parameters())
        meta = {
            "model_id": handle.model_id,
            "class_count": handle.class_count,
            "input_shape": list(handle.input_shape),
            "feature_layers": list(handle.feature_layers),
            "structure": handle.meta.get("spec", {}).get("structure", "smallcnn"),
            "dtype": handle.meta.get("spec", {}).get("dtype", "float32"),
            "meta": _jsonable(handle.meta),
        }
        with open(d / "meta.json", "w") as f:
            json.dump(meta, f, indent=2)
        if trace:
            import csv
            with open(d / "training_trace.csv", "w", newline="") as f:
                w = csv.DictWriter(f, fieldnames=list(trace[0].keys()))
                w.writeheader()
                w.writerows(trace)
        return d

    def load(self, model_id):
        d = self.path(model_id)
        with open(d / "meta.json") as f:
            meta = json.load(f)
        dtype = np.float32 if meta["dtype"] == "float32" else np.float64
        net, feature_layers = build_structure(
            meta["structure"], meta["input_shape"], meta["class_count"],
            dtype=dtype)
        with np.load(d / "weights.npz") as z:
            net.set_parameters({k: z[k] for k in z.files})
        return NetHandle(net, meta["class_count"], meta["input_shape"],
                         model_id=meta["model_id"],
                         feature_layers=meta["feature_layers"] or feature_layers,
                         meta=meta.get("meta", {}))

    def load_or_train(self, spec, dataset, **kw):
        mid = spec.resolved_id()
        if self.has(mid):
            return self.load(mid)
        return train_baseline(spec, dataset, store=self, **kw)


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: (
        o.item() if isinstance(o, (np.floating, np.integer))
        else o.tolist() if isinstance(o, np.ndarray)
        else list(o) if isinstance(o, tuple) else str(o))))


# ---------------------------------------------------------------------------
# declarative experiments
# ---------------------------------------------------------------------------

class ExperimentConfig:
    """A fully seeded declarative description of one experiment.

    Nested key/value data (YAML on disk); ``kind`` picks the runner, and all
    model/dataset references must resolve.
    """

    KINDS = ("aid_table", "robustness", "transfer", "universal",
             "pca_compare", "manifold", "iou")

    def __init__(self, mapping):
        self.data = dict(mapping)
        if self.data.get("kind") not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}, "
                             f"got {self.data.get('kind')!r}")
        if "seed" not in self.data:
            raise ValueError("experiment config must carry a seed")
        if "dataset" not in self.data:
            raise ValueError("experiment config must name a dataset")

    @classmethod
    def from_yaml(cls, path):
        import yaml
        with open(path) as f:
            return cls(yaml.safe_load(f))

    def __getitem__(self, k):
        return self.data[k]

    def get(self, k, default=None):
        return self.data.get(k, default)

    def hash(self):
        blob = json.dumps(self.data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def run_experiment(config, workdir, store=None, dataset=None):
    """Execute a declarative experiment; always writes a manifest.

    Outputs land under ``workdir``; failures of individual steps are
    recorded in the manifest and leave earlier outputs in place.
    """
    from . import __version__
    from . import plots

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    store = store or ModelStore(config.get("store", workdir / "models"))
    manifest = {
        "config": config.data,
        "config_hash": config.hash(),
        "seed": config["seed"],
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": [],
        "errors": [],
    }
    try:
        ds = dataset if dataset is not None else data_mod.load_dataset(config["dataset"])
        manifest["dataset_fingerprint"] = _fingerprint(ds)
        models = [store.load(mid) for mid in config.get("models", [])]
        report = _dispatch(config, ds, models, store)
        report.meta["config_hash"] = config.hash()
        rpath = workdir / "report.json"
        report.to_json(rpath)
        report.to_csv(workdir / "report.csv")
        manifest["outputs"] += ["report.json", "report.csv"]
        if config.get("plot", True) and any("epsilon" in r for r in report.rows):
            try:
                made = plots.plot_report(report, workdir / "figure",
                                         x="epsilon", y="accuracy",
                                         group=config.get("plot_group", "image_set"))
                manifest["outputs"] += [p.name for p in made]
            except Exception as e:
                manifest["errors"].append({"step": "plot", "error": repr(e)})
    except Exception as e:
        manifest["errors"].append({"step": "run", "error": repr(e),
                                   "trace": traceback.format_exc()})
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    with open(workdir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, default=str)
    return manifest


def _fingerprint(ds):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.images).tobytes()[:1 << 20])
    h.update(np.ascontiguousarray(ds.labels).tobytes())
    return f"{ds.name}:{len(ds)}:{h.hexdigest()[:12]}"


def _dispatch(config, ds, models, store):
    from .aid import AidConfig, aid_dataset
    from .analysis import iou_distribution, robustness_report, transfer_matrix
    from .core import PerturbationBudget
    from .manifold import ManifoldApprox, distance_curve
    from .pca import compare_universal
    from .universal import build_splits, epsilon_sweep

    kind = config["kind"]
    seed = config["seed"]
    if kind == "aid_table":
        report = EvalReport(meta={})
        for model in models:
            for regime in config.get("regimes", ["weak", "strong"]):
                cfg = (AidConfig.weak if regime == "weak" else AidConfig.strong)(
                    iterations=config.get("iterations", 50))
                _, rep = aid_dataset(model, ds, cfg)
                report.rows.extend(rep.rows)
        return report
    if kind == "robustness":
        model = models[0]
        regimes = {"original": None,
                   "weak": AidConfig.weak(iterations=config.get("iterations", 50)),
                   "strong": AidConfig.strong(iterations=config.get("iterations", 50))}
        budgets = [PerturbationBudget(e, np.inf, config.get("iterations", 50))
                   for e in config.get("attack_epsilons", [0.01, 0.05])]
        return robustness_report(model, ds, regimes, budgets)
    if kind == "transfer":
        configs = {r: (AidConfig.weak if r == "weak" else AidConfig.strong)(
                       iterations=config.get("iterations", 50))
                   for r in config.get("regimes", ["weak", "strong"])}
        mats = transfer_matrix(models, ds, configs)
        report = EvalReport(meta={})
        for regime, tm in mats.items():
            for i, src in enumerate(tm.source_ids):
                for j, ev in enumerate(tm.eval_ids):
                    report.add_row(regime=regime, source=src, evaluator=ev,
                                   accuracy=float(tm.accuracy[i, j]))
        return report
    if kind == "universal":
        model = models[0]
        splits = build_splits(model, ds, n=config.get("n", 1000), seed=seed)
        source = splits[config.get("source", "correctA")]
        rep, _ = epsilon_sweep(model, source, splits, config["epsilon_grid"],
                               iterations=config.get("iterations", 50))
        return rep
    if kind == "pca_compare":
        return compare_universal(models, ds, config["epsilon_grid"],
                                 n=config.get("n", 1000), seed=seed,
                                 iterations=config.get("iterations", 50),
                                 source=config.get("source", "correctA"))
    if kind == "manifold":
        bank = data_mod.load_dataset(config["bank"]) if config.get("bank") else ds
        approx = ManifoldApprox(bank, k=config.get("k", 50), q=config.get("q", 10))
        probe = ds.subset(np.arange(min(len(ds), config.get("n", 200))))
        return distance_curve(models[0], probe, approx, config["epsilon_grid"],
                              iterations=config.get("iterations", 50))
    if kind == "iou":
        model = models[0]
        aidc = AidConfig.weak(epsilon=config.get("epsilon", 0.05),
                              iterations=config.get("iterations", 50))
        attc = AidConfig(aidc.budget, "weak", "attack")
        dist = iou_distribution(model, ds, aidc, attc, tau=config.get("tau", 0.5))
        report = EvalReport(meta={"tau": dist["tau"], "layer": dist["layer"]})
        for i in range(len(dist["bin_edges"]) - 1):
            report.add_row(bin_low=float(dist["bin_edges"][i]),
                           bin_high=float(dist["bin_edges"][i + 1]),
                           aided=int(dist["hist_aided"][i]),
                           attacked=int(dist["hist_attacked"][i]))
        report.meta["median_aided"] = float(np.median(dist["aided"]))
        report.meta["median_attacked"] = float(np.median(dist["attacked"]))
        return report
    raise ValueError(f"unhandled kind {kind!r}")
