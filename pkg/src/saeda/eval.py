"""Evaluation: accuracy/confusion, R^2/MSE, the class-alignment diagnostic and
a deterministic 2-D embedding of bottleneck features."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .losses import mse_loss
from .model import AdaptationModel, encode


class MetricError(ValueError):
    pass


@dataclass
class EvalReport:
    task: str
    num_samples: int
    accuracy: float | None = None
    confusion: list | None = None
    r_squared: float | None = None
    mse: float | None = None
    matched_discrepancy: float | None = None
    mismatched_discrepancy: float | None = None
    class_names: list | None = None
    embedding: np.ndarray | None = field(default=None, repr=False)
    embedding_labels: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        keys = ("task", "num_samples", "accuracy", "confusion", "r_squared", "mse",
                "matched_discrepancy", "mismatched_discrepancy", "class_names")
        return {k: getattr(self, k) for k in keys}


def classification_metrics(y_true, y_pred, num_classes):
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise MetricError("y_true and y_pred differ in length")
    if y_true.size == 0:
        raise MetricError("no samples")
    for name, y in (("y_true", y_true), ("y_pred", y_pred)):
        if y.min() < 0 or y.max() >= num_classes:
            raise MetricError(f"{name} has labels outside [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    return float(np.trace(confusion)) / y_true.size, confusion


def r_squared(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise MetricError("y_true and y_pred differ in length")
    if y_true.size < 2:
        raise MetricError("R^2 needs at least two samples")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("R^2 is undefined for constant y_true")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def _class_centroids(feats, labels, classes):
    out = []
    for k in classes:
        rows = feats[labels == k]
        if len(rows) == 0:
            raise MetricError(f"class {k} has no samples")
        out.append(rows.mean(axis=0))
    return np.asarray(out, dtype=np.float64)


def centroid_discrepancy(src_feats, src_labels, tgt_feats, tgt_labels):
    """(matched, mismatched) mean squared centroid distances across domains."""
    classes = np.union1d(np.unique(src_labels), np.unique(tgt_labels))
    if len(classes) < 2:
        raise MetricError("need at least two classes")
    cs = _class_centroids(np.asarray(src_feats, np.float64), np.asarray(src_labels), classes)
    ct = _class_centroids(np.asarray(tgt_feats, np.float64), np.asarray(tgt_labels), classes)
    d = ((cs[:, None, :] - ct[None, :, :]) ** 2).sum(axis=2)
    off = ~np.eye(len(classes), dtype=bool)
    return float(np.mean(np.diag(d))), float(np.mean(d[off]))


def alignment_diagnostic(model: AdaptationModel, source: Dataset, target: Dataset):
    """Matched vs mismatched class-centroid discrepancy between the two encoders."""
    if source.labels is None or target.labels is None:
        raise MetricError("alignment diagnostic needs labeled datasets")
    fs = encode(model.source_ae, source.samples)
    ft = encode(model.target_ae, target.samples)
    return centroid_discrepancy(fs, source.labels, ft, target.labels)


def project_2d(feats) -> np.ndarray:
    """Project rows onto their top-2 principal directions.

    Sign convention: each direction's first non-zero loading is positive.
    """
    x = np.asarray(feats, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise MetricError("embedding needs at least 3 samples")
    x = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    basis = np.zeros((x.shape[1], 2))
    basis[:, : min(2, len(vt))] = vt[:2].T
    for j in range(2):
        nz = np.flatnonzero(np.abs(basis[:, j]) > 1e-12)
        if len(nz) and basis[nz[0], j] < 0:
            basis[:, j] *= -1
    return x @ basis


def export_embedding(model: AdaptationModel, dataset: Dataset, method: str = "linear-2d") -> np.ndarray:
    if method != "linear-2d":
        raise MetricError(f"unknown embedding method {method!r}")
    return project_2d(encode(model.target_ae, dataset.samples))


def cluster_separation(coords, labels) -> float:
    """Mean between-centroid distance over mean within-class spread."""
    coords, labels = np.asarray(coords, np.float64), np.asarray(labels)
    classes = np.unique(labels)
    cents = _class_centroids(coords, labels, classes)
    between = np.mean([np.linalg.norm(cents[i] - cents[j])
                       for i in range(len(classes)) for j in range(i + 1, len(classes))])
    within = np.mean([np.linalg.norm(coords[labels == k] - cents[i], axis=1).mean()
                      for i, k in enumerate(classes)])
    return float(between / max(within, 1e-12))


# -- artifacts --------------------------------------------------------------------------------


def write_embedding_csv(path, coords, labels, class_names=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for (x, y), lab in zip(coords, labels):
            name = class_names[int(lab)] if class_names else int(lab)
            w.writerow([repr(float(x)), repr(float(y)), name])


def write_confusion_csv(path, confusion, class_names=None) -> None:
    confusion = np.asarray(confusion)
    names = class_names or [str(k) for k in range(len(confusion))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, confusion):
            w.writerow([name, *[int(v) for v in row]])


def write_report(out_dir, report: EvalReport) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    if report.confusion is not None:
        write_confusion_csv(out / "confusion.csv", report.confusion, report.class_names)
    if report.embedding is not None:
        write_embedding_csv(out / "embedding.csv", report.embedding, report.embedding_labels, report.class_names)


def regression_metrics(y_true, y_pred):
    return r_squared(y_true, y_pred), mse_loss(y_true, y_pred)
