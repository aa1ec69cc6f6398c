"""Command-line interface.

Verbs: train, run, universal, pca-train, pca-compare, manifold-curve,
report, plot.  Every flag can also be supplied through a YAML config file
(--config); explicit flags win over config values, which win over defaults.
"""

from __future__ import annotations

import argparse
import csv as csv_mod
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aid import AidConfig, aid_dataset
from .core import EvalReport, PerturbationBudget
from .cw import CwConfig, cw_aid_batch
from .data import load_dataset
from .harness import ModelStore, TrainingSpec, train_baseline
from .io import save_perturbation
from .manifold import ManifoldApprox, distance_curve
from .pca import ModificationConfig, compare_universal, train_modified
from .universal import build_splits, epsilon_sweep
from . import plots


def parse_epsilon_grid(spec):
    """"0.01,0.05,0.1" or "lo:hi:log[:points]" / "lo:hi:lin[:points]"."""
    spec = str(spec)
    if ":" in spec:
        parts = spec.split(":")
        lo, hi = float(parts[0]), float(parts[1])
        scale = parts[2] if len(parts) > 2 else "log"
        points = int(parts[3]) if len(parts) > 3 else 7
        if scale == "log":
            return list(np.geomspace(lo, hi, points))
        return list(np.linspace(lo, hi, points))
    return [float(v) for v in spec.split(",") if v]


def _merge_config(args, parser):
    """Fill args from a YAML config for every flag left at its default."""
    if not getattr(args, "config", None):
        return args
    import yaml

    with open(args.config) as f:
        cfg = yaml.safe_load(f) or {}
    defaults = {a.dest: a.default for a in parser._actions}
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if hasattr(args, dest) and getattr(args, dest) == defaults.get(dest):
            setattr(args, dest, val)
    return args


def _add_common(p):
    p.add_argument("--config", help="YAML file with flag defaults")
    p.add_argument("--store", default="models", help="model store directory")


def build_parser():
    p = argparse.ArgumentParser(prog="aid", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train a classifier")
    _add_common(t)
    t.add_argument("--structure", default="smallcnn")
    t.add_argument("--dataset", default="")
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=5e-4)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--model-id", default="")
    t.set_defaults(func=cmd_train, parser=t, needs=("dataset",))

    r = sub.add_parser("run", help="per-image aid or attack over a dataset")
    _add_common(r)
    r.add_argument("--model", default="")
    r.add_argument("--dataset", default="")
    r.add_argument("--method", choices=["ifgsm", "fgsm", "cw"], default="ifgsm")
    r.add_argument("--epsilon", type=float, default=0.05)
    r.add_argument("--iters", type=int, default=50)
    r.add_argument("--direction", choices=["aid", "attack"], default="aid")
    r.add_argument("--c", type=float, default=1.0, help="cw balancing weight")
    r.add_argument("--steps", type=int, default=100, help="cw optimizer steps")
    r.add_argument("--lr", type=float, default=0.01, help="cw learning rate")
    r.add_argument("--out", default="report.json")
    r.add_argument("--save-perturbations", default="", metavar="DIR")
    r.set_defaults(func=cmd_run, parser=r, needs=("model", "dataset"))

    u = sub.add_parser("universal", help="image-agnostic perturbation sweep")
    _add_common(u)
    u.add_argument("--model", default="")
    u.add_argument("--dataset", default="")
    u.add_argument("--source", default="correctA")
    u.add_argument("--n", type=int, default=1000)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--epsilon-grid", default="0.01:0.5:log", dest="epsilon_grid")
    u.add_argument("--iters", type=int, default=50)
    u.add_argument("--eval", default="correctA,correctB,incorrectA,incorrectB")
    u.add_argument("--out", default="curves.csv")
    u.set_defaults(func=cmd_universal, parser=u, needs=("model", "dataset"))

    pt = sub.add_parser("pca-train", help="train on PCA-modified data")
    _add_common(pt)
    pt.add_argument("--structure", default="smallcnn")
    pt.add_argument("--dataset", default="")
    pt.add_argument("--d", type=int, default=-1)
    pt.add_argument("--m", type=int, default=10)
    pt.add_argument("--c", type=float, default=10.0)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--epochs", type=int, default=40)
    pt.add_argument("--lr", type=float, default=0.05)
    pt.add_argument("--batch-size", type=int, default=128)
    pt.add_argument("--out", default="", help="model id (default pca<d>)")
    pt.set_defaults(func=cmd_pca_train, parser=pt, needs=("dataset", "d"))

    pc = sub.add_parser("pca-compare", help="universal sweeps across models")
    _add_common(pc)
    pc.add_argument("--models", default="", help="comma-separated model ids")
    pc.add_argument("--dataset", default="")
    pc.add_argument("--epsilon-grid", default="0.01:0.5:log", dest="epsilon_grid")
    pc.add_argument("--n", type=int, default=1000)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--iters", type=int, default=50)
    pc.add_argument("--source", default="correctA")
    pc.add_argument("--out", default="compare.csv")
    pc.set_defaults(func=cmd_pca_compare, parser=pc, needs=("models", "dataset"))

    mc = sub.add_parser("manifold-curve", help="distance-to-manifold vs epsilon")
    _add_common(mc)
    mc.add_argument("--model", default="")
    mc.add_argument("--dataset", default="", help="probe images")
    mc.add_argument("--bank", default="", help="reference bank (default: dataset)")
    mc.add_argument("--k", type=int, default=50)
    mc.add_argument("--q", type=int, default=10)
    mc.add_argument("--n", type=int, default=200)
    mc.add_argument("--epsilon-grid", default="0.01:0.5:log", dest="epsilon_grid")
    mc.add_argument("--iters", type=int, default=50)
    mc.add_argument("--out", default="manifold.csv")
    mc.set_defaults(func=cmd_manifold, parser=mc, needs=("model", "dataset"))

    rp = sub.add_parser("report", help="render a JSON report (table + CSV)")
    rp.add_argument("input")
    rp.add_argument("--csv", default="")
    rp.set_defaults(func=cmd_report, parser=rp)

    pl = sub.add_parser("plot", help="plot a curve CSV to SVG+PNG")
    pl.add_argument("input")
    pl.add_argument("--x", default="epsilon")
    pl.add_argument("--y", default="accuracy")
    pl.add_argument("--group", default="image_set")
    pl.add_argument("--out", default="figure")
    pl.set_defaults(func=cmd_plot, parser=pl)
    return p


def cmd_train(args):
    ds = load_dataset(args.dataset)
    spec = TrainingSpec(structure=args.structure, epochs=args.epochs,
                        learning_rate=args.lr, momentum=args.momentum,
                        weight_decay=args.weight_decay, seed=args.seed,
                        dataset_id=ds.name, batch_size=args.batch_size,
                        augment=not args.no_augment, model_id=args.model_id)
    store = ModelStore(args.store)
    handle = train_baseline(spec, ds, store=store, verbose=True)
    print(f"trained {handle.model_id} "
          f"(train acc {handle.meta['final_train_accuracy']:.4f}) "
          f"-> {store.path(handle.model_id)}")
    return 0


def cmd_run(args):
    store = ModelStore(args.store)
    model = store.load(args.model)
    ds = load_dataset(args.dataset)
    if args.method == "cw":
        results = cw_aid_batch(model, ds.images, ds.labels,
                               CwConfig(c=args.c, steps=args.steps,
                                        learning_rate=args.lr))
        report = EvalReport(meta={"model_id": model.model_id, "method": "cw",
                                  "c": args.c, "steps": args.steps})
        for stage in ("original", "perturbed"):
            recs = [getattr(r, stage) for r in results]
            acc = float(np.mean([rec.predicted_class == y
                                 for rec, y in zip(recs, ds.labels)]))
            conf = float(np.mean([rec.true_class_confidence for rec in recs]))
            report.add_row(model_id=model.model_id, image_set=ds.name,
                           stage=stage, n=len(results), accuracy=acc,
                           mean_confidence=conf)
        mean_l2 = float(np.mean([r.perturbation.budget.epsilon for r in results]))
        report.meta["mean_l2"] = mean_l2
    else:
        iters = 1 if args.method == "fgsm" else args.iters
        cfg = AidConfig(PerturbationBudget(args.epsilon, np.inf, iters),
                        regime="weak" if args.epsilon <= 0.5 else "strong",
                        direction=args.direction)
        results, report = aid_dataset(model, ds, cfg)
    report.to_json(args.out)
    print(f"wrote {args.out}")
    if args.save_perturbations:
        outdir = Path(args.save_perturbations)
        outdir.mkdir(parents=True, exist_ok=True)
        for i, r in enumerate(results):
            if r is None:
                continue
            save_perturbation(outdir / f"pert_{i:06d}", r.perturbation.delta,
                              model_id=model.model_id,
                              epsilon=r.perturbation.budget.epsilon,
                              norm=r.perturbation.budget.norm,
                              iterations=r.perturbation.budget.iterations,
                              method=r.method, source_set=ds.name)
        print(f"saved {len(results)} perturbations under {outdir}")
    for row in report.rows:
        print(row)
    return 0


def cmd_universal(args):
    store = ModelStore(args.store)
    model = store.load(args.model)
    ds = load_dataset(args.dataset)
    splits = build_splits(model, ds, n=args.n, seed=args.seed)
    source = splits[args.source]
    eval_sets = {name: splits[name] for name in args.eval.split(",") if name}
    grid = parse_epsilon_grid(args.epsilon_grid)
    report, _ = epsilon_sweep(model, source, eval_sets, grid, iterations=args.iters)
    report.to_csv(args.out)
    print(f"wrote {args.out} ({len(report.rows)} rows)")
    return 0


def cmd_pca_train(args):
    store = ModelStore(args.store)
    ds = load_dataset(args.dataset)
    training = TrainingSpec(structure=args.structure, epochs=args.epochs,
                            learning_rate=args.lr, seed=args.seed,
                            batch_size=args.batch_size)
    handle = train_modified(args.structure, ds,
                            ModificationConfig(d=args.d, m=args.m, c=args.c,
                                               seed=args.seed),
                            training, store=store,
                            model_id=args.out or None)
    print(f"trained {handle.model_id} -> {store.path(handle.model_id)}")
    return 0


def cmd_pca_compare(args):
    store = ModelStore(args.store)
    models = [store.load(mid) for mid in args.models.split(",")]
    ds = load_dataset(args.dataset)
    grid = parse_epsilon_grid(args.epsilon_grid)
    report = compare_universal(models, ds, grid, n=args.n, seed=args.seed,
                               iterations=args.iters, source=args.source)
    report.to_csv(args.out)
    print(f"wrote {args.out} ({len(report.rows)} rows)")
    return 0


def cmd_manifold(args):
    store = ModelStore(args.store)
    model = store.load(args.model)
    ds = load_dataset(args.dataset)
    bank = load_dataset(args.bank) if args.bank else ds
    approx = ManifoldApprox(bank, k=args.k, q=args.q)
    probe = ds.subset(np.arange(min(len(ds), args.n)))
    grid = parse_epsilon_grid(args.epsilon_grid)
    report = distance_curve(model, probe, approx, grid, iterations=args.iters)
    report.to_csv(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_report(args):
    report = EvalReport.from_json(args.input)
    keys = []
    for r in report.rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    print("\t".join(keys))
    for r in report.rows:
        print("\t".join(str(r.get(k, "")) for k in keys))
    if args.csv:
        report.to_csv(args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_plot(args):
    with open(args.input, newline="") as f:
        rows = []
        for row in csv_mod.DictReader(f):
            parsed = {}
            for k, v in row.items():
                try:
                    parsed[k] = float(v)
                except (TypeError, ValueError):
                    parsed[k] = v
            rows.append(parsed)
    made = plots.plot_curves(rows, args.out, x=args.x, y=args.y, group=args.group)
    print("wrote " + ", ".join(str(p) for p in made))
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args = _merge_config(args, args.parser)
    for dest in getattr(args, "needs", ()):
        val = getattr(args, dest)
        if val in ("", -1):
            args.parser.error(f"--{dest.replace('_', '-')} is required "
                              f"(flag or config file)")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
