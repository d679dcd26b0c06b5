"""Staged training: simultaneous auto-encoders, source head, target fine-tune.

Stage 1 trains both auto-encoders in one graph on L_s + L_r + beta * cws-MMD
over class-aligned batch pairs.  Stage 2 freezes the source encoder and fits
the head on source bottlenecks.  Stage 3 freezes the target encoder and
fine-tunes the head on the labeled target set.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import losses
from .datagen import Dataset, Task
from .losses import LossConfig
from .model import (
    AdaptationModel,
    AutoencoderSpec,
    HeadKind,
    HeadSpec,
    build_adaptation_model,
    load_model,
    save_model,
    to_nchw,
)

log = logging.getLogger(__name__)

STAGES = (1, 2, 3)


class PipelineError(RuntimeError):
    pass


class StageOrderError(PipelineError):
    pass


class DivergenceError(PipelineError):
    pass


class BatchingError(ValueError):
    pass


class CheckpointError(PipelineError):
    pass


@dataclass
class TrainingConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    learning_rate: float = 1e-4
    batch_size: int = 32
    # One cap for all stages, or [stage1, stage2, stage3].
    max_epochs_per_stage: int | list = 200
    min_rel_improvement: float = 1e-4
    patience: int = 5
    seed: int = 0
    bottleneck_size: int = 100
    classifier_layers: int = 2
    hidden_width: int = 64
    holdout_fraction: float = 0.1
    cws_grad: str = "both"
    skip_stage3: bool = False
    task: Task = Task.CLASSIFICATION

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        self.task = Task(self.task)
        if self.learning_rate <= 0 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("learning_rate, batch_size and patience must be positive")
        if self.classifier_layers < 1 or self.bottleneck_size < 1:
            raise ValueError("classifier_layers and bottleneck_size must be >= 1")
        if self.cws_grad not in ("both", "target-only"):
            raise ValueError("cws_grad must be 'both' or 'target-only'")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        caps = self.max_epochs_per_stage
        caps = list(caps) if isinstance(caps, (list, tuple)) else [caps] * 3
        if len(caps) != 3 or any(int(c) < 0 for c in caps):
            raise ValueError("max_epochs_per_stage must be a non-negative int or three of them")

    def max_epochs(self, stage: int) -> int:
        caps = self.max_epochs_per_stage
        return int(caps[stage - 1] if isinstance(caps, (list, tuple)) else caps)

    def head_spec(self, num_classes: int) -> HeadSpec:
        hidden = [self.hidden_width] * (self.classifier_layers - 1)
        if self.task is Task.REGRESSION:
            return HeadSpec(HeadKind.LINEAR_REGRESSOR, 1, hidden)
        return HeadSpec(HeadKind.SOFTMAX_CLASSIFIER, num_classes, hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)


@dataclass
class StageReport:
    stage: int
    epochs: int = 0
    final_loss: float = float("nan")
    history: list = field(default_factory=list)
    converged: bool = False
    seconds: float = 0.0


# -- data preparation -------------------------------------------------------------------


def _rng(seed, *stream):
    seed = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return np.random.default_rng([int(s) for s in seed] + [int(s) for s in stream])


def class_balance_resample(a: Dataset, b: Dataset, seed=0):
    """Upsample the smaller side of every class so both datasets match per class."""
    if a.labels is None or b.labels is None:
        raise BatchingError("class balancing needs labeled datasets")
    classes_a, classes_b = set(np.unique(a.labels)), set(np.unique(b.labels))
    if classes_a != classes_b:
        raise BatchingError(f"class sets differ: {sorted(classes_a ^ classes_b)} present on one side only")
    rng = _rng(seed, 101)
    idx_a, idx_b = [], []
    for k in sorted(classes_a):
        ia, ib = np.flatnonzero(a.labels == k), np.flatnonzero(b.labels == k)
        n = max(len(ia), len(ib))
        if len(ia) < n:
            ia = np.concatenate([ia, rng.choice(ia, n - len(ia), replace=True)])
        if len(ib) < n:
            ib = np.concatenate([ib, rng.choice(ib, n - len(ib), replace=True)])
        idx_a.append(ia)
        idx_b.append(ib)
    return a.subset(np.concatenate(idx_a)), b.subset(np.concatenate(idx_b))


def sort_by_class(d: Dataset) -> Dataset:
    if d.labels is None:
        raise BatchingError("cannot sort an unlabeled dataset")
    return d.subset(np.argsort(d.labels, kind="stable"))


def aligned_batch_indices(ys, yt, batch_size, seed=0, num_classes=None):
    """Index pairs for class-aligned batches.

    Each class's source and target indices are shuffled independently and
    paired by position; every class is then spread evenly over the batches, so
    each batch pair carries the same label multiset and contains every class.
    If some class is too small to reach every batch, fewer (larger) batches
    are emitted.
    """
    ys, yt = np.asarray(ys), np.asarray(yt)
    classes = np.arange(num_classes) if num_classes is not None else np.unique(ys)
    if batch_size < len(classes):
        raise BatchingError(f"batch_size {batch_size} is smaller than the number of classes {len(classes)}")
    per_class = []
    for k in classes:
        ia, ib = np.flatnonzero(ys == k), np.flatnonzero(yt == k)
        if len(ia) != len(ib) or len(ia) == 0:
            raise BatchingError(f"class {k}: {len(ia)} source vs {len(ib)} target samples; balance them first")
        per_class.append((_rng(seed, 201, int(k)).permutation(ia), _rng(seed, 202, int(k)).permutation(ib)))
    total = sum(len(ia) for ia, _ in per_class)
    n_batches = min(-(-total // batch_size), min(len(ia) for ia, _ in per_class))
    splits = [(np.array_split(ia, n_batches), np.array_split(ib, n_batches)) for ia, ib in per_class]
    return [
        (np.concatenate([sa[i] for sa, _ in splits]), np.concatenate([sb[i] for _, sb in splits]))
        for i in range(n_batches)
    ]


def make_aligned_batches(source: Dataset, target: Dataset, batch_size: int, seed=0):
    """Yield (source batch, target batch) Dataset pairs with matching labels."""
    for ia, ib in aligned_batch_indices(source.labels, target.labels, batch_size, seed):
        yield source.subset(ia), target.subset(ib)


def _prefetch(fn, items):
    """Map ``fn`` over ``items`` in order, optionally on SAEDA_THREADS workers."""
    threads = int(os.environ.get("SAEDA_THREADS", "1") or 1)
    if threads <= 1:
        yield from map(fn, items)
        return
    with ThreadPoolExecutor(threads) as pool:
        yield from pool.map(fn, items)


def stratified_holdout(labels, fraction, seed, stream):
    """Split indices into (train, holdout); every class keeps >= 1 training sample."""
    rng = _rng(seed, stream)
    train, hold = [], []
    for k in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == k))
        n_hold = min(int(np.floor(fraction * len(idx))), len(idx) - 1)
        hold.append(idx[:n_hold])
        train.append(idx[n_hold:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(hold))


# -- convergence ----------------------------------------------------------------------------


class _Convergence:
    def __init__(self, min_rel, patience):
        self.min_rel, self.patience = min_rel, patience
        self.prev = None
        self.stalled = 0

    def update(self, loss) -> bool:
        if self.prev is not None:
            rel = (self.prev - loss) / max(abs(self.prev), 1e-12)
            self.stalled = self.stalled + 1 if rel < self.min_rel else 0
        self.prev = loss
        return self.stalled >= self.patience


def _check_finite(value, stage):
    if not np.isfinite(value):
        raise DivergenceError(f"stage {stage}: loss became non-finite ({value})")


# -- stage 1 ----------------------------------------------------------------------------------


def _prepare_pairs(source, target_labeled, seed):
    a, b = class_balance_resample(source, target_labeled, seed)
    return sort_by_class(a), sort_by_class(b)


def train_stage1_autoencoders(model: AdaptationModel, source: Dataset, target_labeled: Dataset,
                              cfg: TrainingConfig, logger=None) -> StageReport:
    num_classes = model_num_classes(source, target_labeled)
    src, tgt = _prepare_pairs(source, target_labeled, cfg.seed)
    xs_all = to_nchw(src.samples).contiguous(memory_format=torch.channels_last)
    xt_all = to_nchw(tgt.samples).contiguous(memory_format=torch.channels_last)
    ys_all = torch.from_numpy(src.labels)
    yt_all = torch.from_numpy(tgt.labels)
    params = list(model.source_ae.parameters()) + list(model.target_ae.parameters())
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    eps, beta = cfg.loss.epsilon, cfg.loss.beta
    model.to(memory_format=torch.channels_last)
    model.train()
    report = StageReport(stage=1)
    conv = _Convergence(cfg.min_rel_improvement, cfg.patience)
    start = time.perf_counter()
    head_before = [p.detach().clone() for p in model.head.parameters()]

    def fetch(pair):
        ia, ib = (torch.from_numpy(i) for i in pair)
        return xs_all[ia], ys_all[ia], xt_all[ib], yt_all[ib]

    for epoch in range(cfg.max_epochs(1)):
        t0 = time.perf_counter()
        sums = np.zeros(4)
        batches = aligned_batch_indices(src.labels, tgt.labels, cfg.batch_size, (cfg.seed, epoch), num_classes)
        for xs, ys, xt, yt in _prefetch(fetch, batches):
            zs, ps, zt, pt = model.forward_pair(xs, xt)
            l_s = losses.torch_bce(xs, ps, eps)
            l_r = losses.torch_bce(xt, pt, eps)
            zs_m = zs.detach() if cfg.cws_grad == "target-only" else zs
            cws = losses.torch_cws_mmd(zs_m, ys, zt, yt, num_classes)
            total = l_s + l_r + beta * cws
            _check_finite(total.item(), 1)
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            sums += [total.item(), l_s.item(), l_r.item(), cws.item()]
        sums /= len(batches)
        parts = {"source_reconstruction": sums[1], "target_reconstruction": sums[2], "cws_mmd": sums[3],
                 "target_total": sums[2] + beta * sums[3]}
        report.history.append(float(sums[0]))
        report.epochs = epoch + 1
        if logger:
            logger(stage=1, epoch=epoch, loss=float(sums[0]), parts=parts, seconds=time.perf_counter() - t0)
        if conv.update(float(sums[0])):
            report.converged = True
            break
    model.to(memory_format=torch.contiguous_format)
    model.eval()
    assert all(torch.equal(a, b) for a, b in zip(head_before, model.head.parameters()))
    _finish(report, start)
    model.stages_done = {1}
    return report


def train_source_autoencoder(model: AdaptationModel, source: Dataset, target_labeled: Dataset,
                             cfg: TrainingConfig) -> StageReport:
    """Source-only baseline stage 1: the source auto-encoder on L_s alone.

    Uses the same batch stream as stage 1, so with beta = 0 it reproduces the
    source side of a joint run exactly.
    """
    num_classes = model_num_classes(source, target_labeled)
    src, tgt = _prepare_pairs(source, target_labeled, cfg.seed)
    xs_all = to_nchw(src.samples).contiguous(memory_format=torch.channels_last)
    opt = torch.optim.Adam(model.source_ae.parameters(), lr=cfg.learning_rate)
    model.to(memory_format=torch.channels_last)
    model.train()
    report = StageReport(stage=1)
    conv = _Convergence(cfg.min_rel_improvement, cfg.patience)
    start = time.perf_counter()
    for epoch in range(cfg.max_epochs(1)):
        batches = aligned_batch_indices(src.labels, tgt.labels, cfg.batch_size, (cfg.seed, epoch), num_classes)
        total = 0.0
        for ia, _ in batches:
            xs = xs_all[torch.from_numpy(ia)]
            _, ps = model.source_ae(xs)
            l_s = losses.torch_bce(xs, ps, cfg.loss.epsilon)
            _check_finite(l_s.item(), 1)
            opt.zero_grad(set_to_none=True)
            l_s.backward()
            opt.step()
            total += l_s.item()
        report.history.append(total / len(batches))
        report.epochs = epoch + 1
        if conv.update(report.history[-1]):
            report.converged = True
            break
    model.to(memory_format=torch.contiguous_format)
    model.eval()
    _finish(report, start)
    model.stages_done = {1}
    return report


def _finish(report, start):
    report.seconds = time.perf_counter() - start
    if report.history:
        report.final_loss = report.history[-1]


def model_num_classes(*datasets) -> int:
    names = next((d.class_names for d in datasets if d.class_names), None)
    top = max(int(d.labels.max()) for d in datasets if d.labels is not None and len(d.labels)) + 1
    return max(len(names), top) if names else top


# -- head stages ------------------------------------------------------------------------------


@torch.no_grad()
def _features(encoder, samples, chunk=512):
    encoder.eval()
    out = [encoder(to_nchw(samples[i:i + chunk])) for i in range(0, len(samples), chunk)]
    return torch.cat(out)


def _head_targets(model, d: Dataset):
    if model.kind is HeadKind.LINEAR_REGRESSOR:
        if d.targets is None:
            raise PipelineError("regression training needs scalar targets")
        return torch.from_numpy(((d.targets - model.target_mean) / model.target_scale).astype(np.float32))
    if d.labels is None:
        raise PipelineError("classifier training needs labels")
    return torch.from_numpy(d.labels)


def _head_loss(model, out, y, eps):
    if model.kind is HeadKind.LINEAR_REGRESSOR:
        return losses.torch_mse(y, out)
    return losses.torch_categorical_cross_entropy(y, out, eps)


def _fit_head(model, feats, y, train_idx, hold_idx, cfg, stage, logger):
    opt = torch.optim.Adam(model.head.parameters(), lr=cfg.learning_rate)
    report = StageReport(stage=stage)
    conv = _Convergence(cfg.min_rel_improvement, cfg.patience)
    start = time.perf_counter()
    monitor = hold_idx if len(hold_idx) else train_idx
    eps = cfg.loss.epsilon
    model.head.train()
    for epoch in range(cfg.max_epochs(stage)):
        t0 = time.perf_counter()
        order = train_idx[_rng(cfg.seed, 300 + stage, epoch).permutation(len(train_idx))]
        train_loss = 0.0
        chunks = np.array_split(order, max(1, -(-len(order) // cfg.batch_size)))
        for idx in chunks:
            idx = torch.from_numpy(idx)
            loss = _head_loss(model, model.head(feats[idx]), y[idx], eps)
            _check_finite(loss.item(), stage)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            train_loss += loss.item() * len(idx)
        with torch.no_grad():
            m = torch.from_numpy(monitor)
            test_loss = _head_loss(model, model.head(feats[m]), y[m], eps).item()
        _check_finite(test_loss, stage)
        report.history.append(test_loss)
        report.epochs = epoch + 1
        if logger:
            logger(stage=stage, epoch=epoch, loss=test_loss,
                   parts={"train": train_loss / len(order), "holdout": test_loss}, seconds=time.perf_counter() - t0)
        if conv.update(test_loss):
            report.converged = True
            break
    model.head.eval()
    _finish(report, start)
    return report


def _set_target_scaling(model, source: Dataset):
    if model.kind is HeadKind.LINEAR_REGRESSOR:
        if source.targets is None:
            raise PipelineError("regression training needs scalar targets")
        model.target_mean = float(np.mean(source.targets))
        model.target_scale = float(np.std(source.targets)) or 1.0


def train_stage2_classifier(model: AdaptationModel, source: Dataset, cfg: TrainingConfig, logger=None) -> StageReport:
    if 1 not in model.stages_done:
        raise StageOrderError("stage 2 requires a completed stage 1")
    model.reset_head(_head_seed(cfg.seed))
    _set_target_scaling(model, source)
    feats = _features(model.source_ae.encoder, source.samples)
    train_idx, hold_idx = stratified_holdout(source.labels, cfg.holdout_fraction, cfg.seed, 2)
    report = _fit_head(model, feats, _head_targets(model, source), train_idx, hold_idx, cfg, 2, logger)
    model.stages_done = {1, 2}
    return report


def train_stage3_finetune(model: AdaptationModel, target_labeled: Dataset, cfg: TrainingConfig,
                          logger=None) -> StageReport:
    if not {1, 2} <= model.stages_done:
        raise StageOrderError("stage 3 requires completed stages 1 and 2")
    if target_labeled.labels is None:
        raise PipelineError("stage 3 needs labeled target data")
    counts = target_labeled.class_counts(len(target_labeled.class_names or []) or None)
    if len(counts) == 0 or counts.min() < 1 or len(counts) < model_num_classes(target_labeled):
        raise PipelineError(f"labeled target set needs >= 1 sample per class, got counts {counts.tolist()}")
    feats = _features(model.target_ae.encoder, target_labeled.samples)
    train_idx, hold_idx = stratified_holdout(target_labeled.labels, cfg.holdout_fraction, cfg.seed, 3)
    report = _fit_head(model, feats, _head_targets(model, target_labeled), train_idx, hold_idx, cfg, 3, logger)
    model.stages_done = {1, 2, 3}
    return report


def _head_seed(seed):
    return int(seed) * 7 + 2


# -- prediction -------------------------------------------------------------------------------


@dataclass
class Predictions:
    values: np.ndarray  # class ids (int64) or scalars (float64)
    probabilities: np.ndarray | None = None


def _required_stages(model):
    return {1, 2} if getattr(model, "stage3_skipped", False) else {1, 2, 3}


@torch.no_grad()
def _predict_features(model, feats) -> Predictions:
    out = model.head(feats)
    if model.kind is HeadKind.LINEAR_REGRESSOR:
        vals = out.double().numpy() * model.target_scale + model.target_mean
        return Predictions(values=vals)
    probs = out.numpy()
    return Predictions(values=probs.argmax(axis=1).astype(np.int64), probabilities=probs)


def predict(model: AdaptationModel, target_unlabeled: Dataset) -> Predictions:
    missing = _required_stages(model) - model.stages_done
    if missing:
        raise StageOrderError(f"prediction needs completed stages {sorted(missing)}")
    model.eval()
    return _predict_features(model, _features(model.target_ae.encoder, target_unlabeled.samples))


def predict_source_only(model: AdaptationModel, target: Dataset) -> Predictions:
    """Apply the source encoder and head to target samples resized to the source shape."""
    if not {1, 2} <= model.stages_done:
        raise StageOrderError("source-only prediction needs stages 1 and 2")
    h, w, c = model.source_ae.spec.input_shape
    x = to_nchw(target.samples)
    if x.shape[1] != c:
        x = x.mean(dim=1, keepdim=True).expand(-1, c, -1, -1)
    x = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False).clamp(0, 1)
    model.eval()
    return _predict_features(model, _features(model.source_ae.encoder, x))


# -- full run ---------------------------------------------------------------------------------


@dataclass
class PipelineResult:
    model: AdaptationModel
    reports: list
    predictions: Predictions | None


def _param_hash(path) -> str:
    return hashlib.sha256((Path(path) / "parameters.f32").read_bytes()).hexdigest()


class _JsonlLogger:
    def __init__(self, path):
        self.path = path

    def __call__(self, **record):
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def build_model_for(source: Dataset, target: Dataset, cfg: TrainingConfig) -> AdaptationModel:
    num_classes = model_num_classes(source, target)
    model = build_adaptation_model(
        AutoencoderSpec(source.shape, cfg.bottleneck_size),
        AutoencoderSpec(target.shape, cfg.bottleneck_size),
        cfg.head_spec(num_classes),
        seed=cfg.seed,
    )
    return model


def run_full_pipeline(source: Dataset, target_labeled: Dataset, target_unlabeled: Dataset | None,
                      cfg: TrainingConfig, output_dir=None, resume: int | str | None = None,
                      stop_after: int | None = None) -> PipelineResult:
    """Run stages 1-3 and predict, checkpointing to ``output_dir/stage{k}/``.

    ``resume`` names the first stage to run; the previous stage's checkpoint
    is loaded and its hash checked against ``checkpoints.json``.
    ``stop_after`` halts after the given stage (used to simulate interruption).
    """
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    logger = _JsonlLogger(out / "training_log.jsonl" if out is not None else None)
    index_path = out / "checkpoints.json" if out is not None else None
    index = json.loads(index_path.read_text()) if index_path is not None and index_path.exists() else {}

    first = 1
    if resume is not None:
        first = int(str(resume).removeprefix("stage"))
        if first not in STAGES:
            raise CheckpointError(f"unknown resume stage {resume!r}")
    if first > 1:
        if out is None:
            raise CheckpointError("resuming needs an output directory")
        prev = f"stage{first - 1}"
        ckpt = out / prev
        if prev not in index:
            raise CheckpointError(f"no recorded checkpoint for {prev}")
        if _param_hash(ckpt) != index[prev]["sha256"]:
            raise CheckpointError(f"checkpoint {ckpt} does not match its recorded hash")
        model = load_model(ckpt, expected_kind=cfg.head_spec(2).kind)
        if not set(range(1, first)) <= model.stages_done:
            raise StageOrderError(f"checkpoint {prev} has stages {sorted(model.stages_done)}")
    else:
        model = build_model_for(source, target_labeled, cfg)

    def checkpoint(stage):
        if out is None:
            return
        path = out / f"stage{stage}"
        save_model(model, path)
        index[f"stage{stage}"] = {"sha256": _param_hash(path)}
        index_path.write_text(json.dumps(index, indent=2, sort_keys=True))

    reports = []
    runners = {
        1: lambda: train_stage1_autoencoders(model, source, target_labeled, cfg, logger),
        2: lambda: train_stage2_classifier(model, source, cfg, logger),
        3: lambda: train_stage3_finetune(model, target_labeled, cfg, logger),
    }
    for stage in STAGES[first - 1:]:
        if stage == 3 and cfg.skip_stage3:
            model.stage3_skipped = True
            continue
        log.info("stage %d starting", stage)
        reports.append(runners[stage]())
        log.info("stage %d: %d epochs, loss %.5g, converged=%s", stage, reports[-1].epochs,
                 reports[-1].final_loss, reports[-1].converged)
        checkpoint(stage)
        if stop_after == stage:
            return PipelineResult(model, reports, None)

    preds = predict(model, target_unlabeled) if target_unlabeled is not None else None
    return PipelineResult(model, reports, preds)
