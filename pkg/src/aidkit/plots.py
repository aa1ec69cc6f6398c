"""Figure emission for reports: every figure is written as SVG and PNG with
the backing data alongside as CSV."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_report", "plot_curves", "plot_histograms"]


def plot_curves(rows, out_base, x="epsilon", y="accuracy", group="image_set",
                title=None, logx=True):
    """Line plot of ``y`` against ``x``, one line per ``group`` value."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    groups = {}
    for r in rows:
        if x in r and y in r:
            groups.setdefault(r.get(group, ""), []).append((r[x], r[y]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, pts in groups.items():
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                markersize=3, label=str(name))
    if logx and all(p[0] > 0 for pts in groups.values() for p in pts):
        ax.set_xscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    if title:
        ax.set_title(title)
    if len(groups) > 1:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    made = []
    for ext in ("svg", "png"):
        p = out_base.with_suffix(f".{ext}")
        fig.savefig(p, dpi=150)
        made.append(p)
    plt.close(fig)
    csv_path = out_base.with_suffix(".csv")
    _write_rows_csv(rows, csv_path)
    made.append(csv_path)
    return made


def plot_report(report, out_base, **kw):
    return plot_curves(report.rows, out_base, **kw)


def plot_histograms(values_by_name, out_base, bins=10, xlabel="value", title=None):
    """Overlaid histograms (one per named value array) plus the raw data CSV."""
    import numpy as np

    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    edges = np.linspace(0.0, 1.0, bins + 1)
    for name, vals in values_by_name.items():
        ax.hist(vals, bins=edges, alpha=0.55, label=str(name))
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    made = []
    for ext in ("svg", "png"):
        p = out_base.with_suffix(f".{ext}")
        fig.savefig(p, dpi=150)
        made.append(p)
    plt.close(fig)
    rows = [{"name": n, "value": float(v)}
            for n, vals in values_by_name.items() for v in vals]
    csv_path = out_base.with_suffix(".csv")
    _write_rows_csv(rows, csv_path)
    made.append(csv_path)
    return made


def _write_rows_csv(rows, path):
    import csv

    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in keys})
