"""Plot-ready data files and optional rendered figures.

Data (CSV) is always written; PNGs are rendered only on request and use
the non-interactive Agg backend with fixed metadata so repeated runs give
identical bytes.
"""

from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np

BOX_COLUMNS = ("group", "n", "min", "q1", "median", "q3", "max")
PNG_META = {"Software": None}


def box_summary(groups: dict) -> list:
    """Five-number summary per group; empty groups are skipped with a warning."""
    rows = []
    for name, values in groups.items():
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            warnings.warn(f"group {name!r} is empty; omitted from the box summary", stacklevel=2)
            continue
        q = np.percentile(v, [0, 25, 50, 75, 100])
        rows.append((name, int(v.size), *(float(x) for x in q)))
    return rows


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def write_matrix(path, matrix, row_labels=None, col_labels=None) -> Path:
    matrix = np.asarray(matrix, dtype=float)
    if row_labels is None:
        return write_rows(path, [f"c{j}" for j in range(matrix.shape[1])], matrix.tolist())
    header = ["group"] + list(col_labels if col_labels is not None else row_labels)
    return write_rows(path, header, [[r] + list(map(float, row)) for r, row in zip(row_labels, matrix)])


def read_matrix(path) -> tuple:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] == "group":
        return np.array([[float(x) for x in r[1:]] for r in body]), [r[0] for r in body], header[1:]
    return np.array([[float(x) for x in r] for r in body]), None, header


# -- figures -------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=PNG_META)
    _pyplot().close(fig)
    return path


def render_box(rows, path, ylabel=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(rows) + 2), 3.5))
    stats = [{"label": r[0], "whislo": r[2], "q1": r[3], "med": r[4], "q3": r[5], "whishi": r[6], "fliers": []}
             for r in rows]
    ax.bxp(stats, showfliers=False)
    ax.set_ylabel(ylabel)
    ax.tick_params(axis="x", labelrotation=30)
    fig.tight_layout()
    return _save(fig, path)


def render_scatter(points, labels, path, title=""):
    plt = _pyplot()
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    k = points.shape[1]
    pairs = [(0, 1), (0, 2), (1, 2)][: max(1, k * (k - 1) // 2)] if k >= 2 else [(0, 0)]
    fig, axes = plt.subplots(1, len(pairs), figsize=(4 * len(pairs), 3.6), squeeze=False)
    for ax, (i, j) in zip(axes[0], pairs):
        for g in sorted(set(labels.tolist()), key=str):
            m = labels == g
            ax.scatter(points[m, i], points[m, j], s=10, label=str(g))
        ax.set_xlabel(f"component {i + 1}")
        ax.set_ylabel(f"component {j + 1}")
    axes[0][0].legend(fontsize=6)
    fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)


def render_heatmap(matrix, labels, path, title=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(labels), 0.8 + 0.5 * len(labels)))
    im = ax.imshow(np.asarray(matrix), cmap="viridis")
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    for i in range(len(labels)):
        for j in range(len(labels)):
            ax.text(j, i, f"{matrix[i][j]:.1f}", ha="center", va="center", fontsize=6, color="w")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def render_grids(grids, path, titles=None):
    plt = _pyplot()
    n = len(grids)
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.4), squeeze=False)
    for k, (ax, g) in enumerate(zip(axes[0], grids)):
        ax.imshow(np.asarray(g), origin="lower", aspect="auto", cmap="magma", vmin=0, vmax=1)
        ax.set_xticks([])
        ax.set_yticks([])
        if titles:
            ax.set_title(titles[k], fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def render_curve(x, series: dict, path, ylabel=""):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, y in series.items():
        ax.plot(x, y, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)
