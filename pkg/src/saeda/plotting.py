"""Static figures: class-coloured embedding scatter and confusion heatmap."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


class PlotInputError(ValueError):
    pass


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise PlotInputError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def load_plot_input(path):
    """Return ("embedding", (xy, labels)) or ("confusion", (matrix, names))."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if not isinstance(doc, dict) or doc.get("confusion") is None:
            raise PlotInputError(f"{path}: report has no confusion matrix")
        m = np.asarray(doc["confusion"], dtype=np.int64)
        return "confusion", (m, doc.get("class_names") or [str(k) for k in range(len(m))])
    header, rows = _read_csv(path)
    if header == ["x", "y", "label"]:
        if not rows:
            raise PlotInputError(f"{path}: embedding has no rows")
        xy = np.array([[float(r[0]), float(r[1])] for r in rows])
        return "embedding", (xy, [r[2] for r in rows])
    if header and header[0] == "true\\pred":
        names = header[1:]
        m = np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64)
        if m.shape != (len(names), len(names)):
            raise PlotInputError(f"{path}: confusion matrix is not square")
        return "confusion", (m, names)
    raise PlotInputError(f"{path}: unrecognised columns {header}")


def plot_embedding(xy, labels, out_path, title="Target feature embedding"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4.5))
    names = list(dict.fromkeys(labels))
    labels = np.asarray(labels)
    cmap = plt.get_cmap("tab10" if len(names) <= 10 else "tab20")
    for i, name in enumerate(names):
        pts = xy[labels == name]
        ax.scatter(pts[:, 0], pts[:, 1], s=8, color=cmap(i % cmap.N), label=name)
    ax.set_title(title)
    ax.legend(fontsize=7, markerscale=2)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return names


def plot_confusion(matrix, names, out_path, title="Confusion matrix"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(names)
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * n, 0.8 + 0.6 * n))
    ax.imshow(matrix, cmap="Blues")
    ax.set_xticks(range(n), names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(n), names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    top = matrix.max() if matrix.size else 0
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(matrix[i, j]), ha="center", va="center", fontsize=7,
                    color="white" if matrix[i, j] > top / 2 else "black")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
