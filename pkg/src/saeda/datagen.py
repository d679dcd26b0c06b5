"""Synthetic paired-modality datasets and their on-disk container.

Every class owns a latent vector.  A sample is that latent plus per-sample
jitter, pushed through one of two fixed renderers (the "source" and the
"target" modality) that differ in output shape, mixing and squashing
nonlinearity, followed by additive Gaussian noise and clipping to [0, 1].
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import storage

# Sandpaper grit -> surface roughness (micrometres).
SANDPAPER_GRITS = (120, 240, 320, 500, 1000)
SANDPAPER_ROUGHNESS_UM = (59.5, 30.0, 23.1, 15.1, 9.2)


class Split(str, enum.Enum):
    SOURCE = "source"
    TARGET_LABELED = "target_labeled"
    TARGET_UNLABELED = "target_unlabeled"


class Task(str, enum.Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class DatasetConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    num_classes: int = 4
    samples_per_class_source: int = 500
    samples_per_class_target_labeled: int = 10
    samples_per_class_target_unlabeled: int = 250
    source_shape: tuple = (32, 32, 1)
    target_shape: tuple = (16, 24, 1)
    noise_sigma_source: float = 0.02
    noise_sigma_target: float = 0.15
    latent_dim: int = 8
    latent_jitter: float = 0.35
    class_separation: float = 1.5
    task: Task = Task.CLASSIFICATION
    seed: int = 0
    roughness_schedule: tuple = SANDPAPER_ROUGHNESS_UM

    def __post_init__(self):
        self.source_shape = tuple(int(s) for s in self.source_shape)
        self.target_shape = tuple(int(s) for s in self.target_shape)
        self.roughness_schedule = tuple(float(r) for r in self.roughness_schedule)
        self.task = Task(self.task)
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 2:
            raise DatasetConfigError("num_classes must be >= 2")
        for name in ("samples_per_class_source", "samples_per_class_target_labeled",
                     "samples_per_class_target_unlabeled", "latent_dim"):
            if getattr(self, name) < 1:
                raise DatasetConfigError(f"{name} must be >= 1")
        for name in ("source_shape", "target_shape"):
            shape = getattr(self, name)
            if len(shape) != 3 or min(shape) < 1:
                raise DatasetConfigError(f"{name} must be (height, width, channels) with entries >= 1")
        for name in ("noise_sigma_source", "noise_sigma_target", "latent_jitter", "class_separation"):
            if getattr(self, name) < 0:
                raise DatasetConfigError(f"{name} must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise DatasetConfigError("seed must be a 64-bit unsigned integer")
        if self.task is Task.REGRESSION and self.num_classes > len(self.roughness_schedule):
            raise DatasetConfigError(
                f"regression mode has {len(self.roughness_schedule)} schedule slots, "
                f"got num_classes={self.num_classes}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        d["source_shape"] = list(self.source_shape)
        d["target_shape"] = list(self.target_shape)
        d["roughness_schedule"] = list(self.roughness_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        return cls(**d)


@dataclass(eq=False)
class Dataset:
    samples: np.ndarray  # (N, h, w, c) float32 in [0, 1]
    split: Split
    labels: np.ndarray | None = None  # int64 class ids
    targets: np.ndarray | None = None  # float64 regression targets
    class_names: list[str] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.split = Split(self.split)
        if self.samples.ndim != 4:
            raise ValueError(f"samples must be (N, h, w, c), got shape {self.samples.shape}")
        n = len(self.samples)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError("labels length must equal number of samples")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape != (n,):
                raise ValueError("targets length must equal number of samples")
        if self.class_names is not None:
            self.class_names = [str(c) for c in self.class_names]

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.split == other.split
            and self.class_names == other.class_names
            and same(self.samples, other.samples)
            and same(self.labels, other.labels)
            and same(self.targets, other.targets)
        )

    @property
    def shape(self) -> tuple:
        return tuple(self.samples.shape[1:])

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            samples=self.samples[index],
            split=self.split,
            labels=None if self.labels is None else self.labels[index],
            targets=None if self.targets is None else self.targets[index],
            class_names=self.class_names,
        )

    def class_counts(self, num_classes: int | None = None) -> np.ndarray:
        if self.labels is None:
            raise ValueError("dataset is unlabeled")
        return np.bincount(self.labels, minlength=num_classes or 0)


# -- renderers ---------------------------------------------------------------


def _bump_fields(rng, latent_dim, shape, bumps=3):
    """Smooth random spatial fields: sums of signed Gaussian bumps."""
    h, w, c = shape
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    fields = np.zeros((latent_dim, h, w, c))
    for j in range(latent_dim):
        for ch in range(c):
            for _ in range(bumps):
                cy, cx = rng.uniform(0.1, 0.9, size=2)
                width = rng.uniform(0.12, 0.3)
                sign = rng.choice([-1.0, 1.0])
                fields[j, :, :, ch] += sign * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
    return _orthonormalize(fields)


def _orthonormalize(fields):
    """Make the flattened fields orthogonal with unit per-pixel RMS."""
    flat = fields.reshape(len(fields), -1)
    q, r = np.linalg.qr(flat.T)
    q = q * np.sign(np.diag(r))
    return (q.T * np.sqrt(flat.shape[1])).reshape(fields.shape)


def _wave_fields(rng, latent_dim, shape):
    """Smooth random spatial fields: low-frequency plane waves."""
    h, w, c = shape
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    fields = np.zeros((latent_dim, h, w, c))
    for j in range(latent_dim):
        for ch in range(c):
            ky, kx = rng.uniform(-2.5, 2.5, size=2) * np.pi
            phase = rng.uniform(0, 2 * np.pi)
            fields[j, :, :, ch] = np.sin(ky * yy + kx * xx + phase)
    return _orthonormalize(fields)


class _SourceRenderer:
    """Latent -> logistic(gain * linear field combination)."""

    def __init__(self, rng, latent_dim, shape):
        self.shape = shape
        self.fields = _bump_fields(rng, latent_dim, shape).reshape(latent_dim, -1)
        self.gain = 1.0 / np.sqrt(latent_dim)

    def __call__(self, u):
        s = self.gain * (u @ self.fields)
        return (1.0 / (1.0 + np.exp(-2.0 * s))).reshape((len(u),) + self.shape)


class _TargetRenderer:
    """Latent -> mixed through tanh -> softsign(field combination)."""

    def __init__(self, rng, latent_dim, shape):
        self.shape = shape
        q, _ = np.linalg.qr(rng.normal(size=(latent_dim, latent_dim)))
        self.mixing = q
        self.fields = _wave_fields(rng, latent_dim, shape).reshape(latent_dim, -1)
        self.gain = 1.5 / np.sqrt(latent_dim)

    def __call__(self, u):
        v = np.tanh(u @ self.mixing)
        s = 2.0 * (v @ self.fields) * self.gain
        return (0.5 + 0.5 * s / (1.0 + np.abs(s))).reshape((len(u),) + self.shape)


def _class_latents(rng, config):
    """Equidistant class latents: scaled random orthonormal directions.

    With more classes than latent dimensions the directions fall back to
    normalized Gaussian draws.
    """
    c, dim = config.num_classes, config.latent_dim
    g = rng.standard_normal((max(dim, c), c))
    if c <= dim:
        q, _ = np.linalg.qr(g[:dim])
        dirs = q.T
    else:
        dirs = g[:dim].T / np.linalg.norm(g[:dim].T, axis=1, keepdims=True)
    return config.class_separation * dirs


_SPLIT_STREAM = {Split.SOURCE: 10, Split.TARGET_LABELED: 11, Split.TARGET_UNLABELED: 12}


def _render_split(config, split, renderer, latents, per_class, sigma):
    n = per_class * config.num_classes
    labels = np.repeat(np.arange(config.num_classes), per_class)
    jitter = np.empty((n, config.latent_dim))
    noise = np.empty((n, int(np.prod(renderer.shape))))
    stream = _SPLIT_STREAM[split]
    # Per-sample generators keyed by (seed, split, index): order-independent.
    for i in range(n):
        rng = np.random.default_rng([config.seed, stream, i])
        jitter[i] = rng.standard_normal(config.latent_dim)
        noise[i] = rng.standard_normal(noise.shape[1])
    u = latents[labels] + config.latent_jitter * jitter
    x = renderer(u) + sigma * noise.reshape((n,) + renderer.shape)
    return np.clip(x, 0.0, 1.0).astype(np.float32), labels


def generate_paired(config: DatasetConfig):
    """Build (source, target_labeled, target_unlabeled, target_unlabeled_truth).

    The truth is a dict with ``labels`` and, for regression, ``targets``; the
    unlabeled split itself carries neither.
    """
    config.validate()
    latents = _class_latents(np.random.default_rng([config.seed, 0]), config)
    src_renderer = _SourceRenderer(np.random.default_rng([config.seed, 1]), config.latent_dim, config.source_shape)
    tgt_renderer = _TargetRenderer(np.random.default_rng([config.seed, 2]), config.latent_dim, config.target_shape)

    regression = config.task is Task.REGRESSION
    if regression:
        schedule = np.asarray(config.roughness_schedule[: config.num_classes])
        names = [f"grit_{g}" for g in SANDPAPER_GRITS[: config.num_classes]]
        if len(config.roughness_schedule) != len(SANDPAPER_GRITS):
            names = [f"slot_{k}" for k in range(config.num_classes)]
    else:
        names = [f"class_{k}" for k in range(config.num_classes)]

    out = []
    for split, renderer, per_class, sigma in (
        (Split.SOURCE, src_renderer, config.samples_per_class_source, config.noise_sigma_source),
        (Split.TARGET_LABELED, tgt_renderer, config.samples_per_class_target_labeled, config.noise_sigma_target),
        (Split.TARGET_UNLABELED, tgt_renderer, config.samples_per_class_target_unlabeled, config.noise_sigma_target),
    ):
        x, y = _render_split(config, split, renderer, latents, per_class, sigma)
        targets = schedule[y] if regression else None
        out.append(Dataset(samples=x, split=split, labels=y, targets=targets, class_names=names))

    source, labeled, unlabeled = out
    truth = {"labels": unlabeled.labels.tolist(),
             "targets": None if unlabeled.targets is None else unlabeled.targets.tolist()}
    unlabeled = Dataset(samples=unlabeled.samples, split=Split.TARGET_UNLABELED, class_names=names)
    return source, labeled, unlabeled, truth


# -- persistence ---------------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    manifest = {
        "split": dataset.split.value,
        "num_samples": len(dataset),
        "shape": list(dataset.shape),
        "labels": None if dataset.labels is None else dataset.labels.tolist(),
        "targets": None if dataset.targets is None else dataset.targets.tolist(),
        "class_names": dataset.class_names,
    }
    storage.write_container(path, manifest, {"samples": dataset.samples})


def load_dataset(path) -> Dataset:
    manifest = storage.read_manifest(path)
    n = int(manifest["num_samples"])
    shape = tuple(manifest["shape"])
    declared = tuple(manifest["blocks"]["samples"]["shape"]) if "samples" in manifest.get("blocks", {}) else None
    if declared != (n,) + shape:
        raise storage.ShapeMismatchError(
            f"samples block shape {declared} disagrees with num_samples={n}, shape={list(shape)}"
        )
    samples = storage.read_block(path, manifest, "samples")
    for key in ("labels", "targets"):
        if manifest.get(key) is not None and len(manifest[key]) != n:
            raise storage.ShapeMismatchError(f"{key} has {len(manifest[key])} entries, expected {n}")
    return Dataset(
        samples=samples,
        split=manifest["split"],
        labels=manifest.get("labels"),
        targets=manifest.get("targets"),
        class_names=manifest.get("class_names"),
    )


def save_truth(truth: dict, path) -> None:
    import json

    Path(path).write_text(json.dumps(truth, indent=2))
