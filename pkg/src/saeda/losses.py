"""Training objectives: reconstruction BCE, centroid MMD, class-wise MMD,
the composite target loss, categorical cross-entropy and MSE.

The NumPy functions are the reference API and each has an analytic gradient
companion.  ``torch_bce`` and ``torch_cws_mmd`` wrap the same kernels as
autograd functions for use in training.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import kernels


class LossInputError(ValueError):
    pass


class MissingClassError(LossInputError):
    """A class has no samples in one of the two batches."""


@dataclass
class LossConfig:
    beta: float = 0.25
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.epsilon < 1e-3:
            raise ValueError("epsilon must lie in (0, 1e-3)")


def _as_matrix(a, name):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise LossInputError(f"{name} must be a 2-D feature matrix")
    if a.shape[0] == 0:
        raise LossInputError(f"{name} is empty")
    return a


def _as_rows(a):
    a = np.asarray(a, dtype=np.float64)
    return np.ascontiguousarray(a.reshape(a.shape[0], -1) if a.ndim > 1 else a.reshape(1, -1))


def _check_pair(a, b):
    a, b = _as_matrix(a, "source features"), _as_matrix(b, "target features")
    if a.shape[1] != b.shape[1]:
        raise LossInputError(f"feature width mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def _check_labels(y, n, num_classes, name):
    y = np.ascontiguousarray(y, dtype=np.int64)
    if y.shape != (n,):
        raise LossInputError(f"{name} must have one label per row")
    if n and (y.min() < 0 or y.max() >= num_classes):
        raise LossInputError(f"{name} contains ids outside [0, {num_classes})")
    return y


# -- reconstruction --------------------------------------------------------------


def reconstruction_bce_grad(x, p, epsilon=1e-7):
    """Return (loss, dloss/dp) for the per-sample summed BCE, batch-averaged."""
    x, p = np.asarray(x, dtype=np.float64), np.asarray(p, dtype=np.float64)
    if x.shape != p.shape:
        raise LossInputError(f"shape mismatch: {x.shape} vs {p.shape}")
    value, gp = kernels.bce(_as_rows(x), _as_rows(p), float(epsilon))
    return value, gp.reshape(p.shape)


def reconstruction_bce(x, p, epsilon=1e-7) -> float:
    return reconstruction_bce_grad(x, p, epsilon)[0]


# -- discrepancy -------------------------------------------------------------------


def mmd_loss_grad(xs_hat, xt_hat):
    a, b = _check_pair(xs_hat, xt_hat)
    return kernels.centroid_sqdist(a, b)


def mmd_loss(xs_hat, xt_hat) -> float:
    """Squared distance between the two feature centroids."""
    return mmd_loss_grad(xs_hat, xt_hat)[0]


def cws_mmd_loss_grad(xs_hat, ys, xt_hat, yt, num_classes):
    a, b = _check_pair(xs_hat, xt_hat)
    ys = _check_labels(ys, a.shape[0], num_classes, "source labels")
    yt = _check_labels(yt, b.shape[0], num_classes, "target labels")
    value, ga, gb, missing = kernels.classwise_centroid_sqdist(a, ys, b, yt, int(num_classes))
    if missing >= 0:
        raise MissingClassError(f"class {missing} is missing from the source or target batch")
    return value, ga, gb


def cws_mmd_loss(xs_hat, ys, xt_hat, yt, num_classes) -> float:
    """Class-wise MMD: centroid MMD per class, averaged over all classes."""
    return cws_mmd_loss_grad(xs_hat, ys, xt_hat, yt, num_classes)[0]


# -- composite ----------------------------------------------------------------------


def target_composite_loss(x_t, p_t, xs_hat, ys, xt_hat, yt, cfg: LossConfig = LossConfig(), num_classes=None):
    """Target objective: reconstruction + beta * class-wise MMD.

    Returns ``(total, {"reconstruction": ..., "cws_mmd": ...})``.
    """
    total, parts, _ = target_composite_loss_grad(x_t, p_t, xs_hat, ys, xt_hat, yt, cfg, num_classes)
    return total, parts


def target_composite_loss_grad(x_t, p_t, xs_hat, ys, xt_hat, yt, cfg: LossConfig = LossConfig(), num_classes=None):
    """As ``target_composite_loss`` plus gradients w.r.t. (p_t, xs_hat, xt_hat)."""
    if num_classes is None:
        num_classes = int(max(np.max(ys), np.max(yt))) + 1
    rec, g_p = reconstruction_bce_grad(x_t, p_t, cfg.epsilon)
    cws, g_s, g_t = cws_mmd_loss_grad(xs_hat, ys, xt_hat, yt, num_classes)
    total = rec + cfg.beta * cws
    grads = (g_p, cfg.beta * g_s, cfg.beta * g_t)
    return total, {"reconstruction": rec, "cws_mmd": cws}, grads


# -- supervised heads -------------------------------------------------------------------


def categorical_cross_entropy(y_true, y_prob, epsilon=1e-7) -> float:
    y_prob = np.asarray(y_prob, dtype=np.float64)
    if y_prob.ndim != 2:
        raise LossInputError("y_prob must be (N, C)")
    y_true = _check_labels(y_true, y_prob.shape[0], y_prob.shape[1], "y_true")
    if np.any(y_prob < 0) or not np.allclose(y_prob.sum(axis=1), 1.0, rtol=0, atol=1e-6):
        raise LossInputError("every probability row must be non-negative and sum to 1")
    p = np.clip(y_prob[np.arange(len(y_true)), y_true], epsilon, 1.0)
    return float(-np.mean(np.log(p)))


def mse_loss(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise LossInputError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if y_true.size == 0:
        raise LossInputError("empty input")
    r = y_pred - y_true
    return float(np.mean(r * r))


# -- torch bindings -------------------------------------------------------------------------


class _BCE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, p, epsilon):
        value, gp = kernels.bce(
            _as_rows(x.detach().cpu().numpy()), _as_rows(p.detach().cpu().numpy()), float(epsilon)
        )
        ctx.save_for_backward(torch.from_numpy(gp.reshape(p.shape)).to(p.dtype))
        return p.new_tensor(value)

    @staticmethod
    def backward(ctx, grad_out):
        (gp,) = ctx.saved_tensors
        return None, grad_out * gp, None


class _CwsMMD(torch.autograd.Function):
    @staticmethod
    def forward(ctx, zs, ys, zt, yt, num_classes):
        value, ga, gb = cws_mmd_loss_grad(
            zs.detach().cpu().numpy(), ys.cpu().numpy(), zt.detach().cpu().numpy(), yt.cpu().numpy(), num_classes
        )
        ctx.save_for_backward(torch.from_numpy(ga).to(zs.dtype), torch.from_numpy(gb).to(zt.dtype))
        return zs.new_tensor(value)

    @staticmethod
    def backward(ctx, grad_out):
        ga, gb = ctx.saved_tensors
        return grad_out * ga, None, grad_out * gb, None, None


def torch_bce(x: torch.Tensor, p: torch.Tensor, epsilon: float = 1e-7) -> torch.Tensor:
    return _BCE.apply(x, p, epsilon)


def torch_cws_mmd(zs, ys, zt, yt, num_classes: int) -> torch.Tensor:
    return _CwsMMD.apply(zs, ys, zt, yt, num_classes)


def torch_categorical_cross_entropy(y_true: torch.Tensor, probs: torch.Tensor, epsilon: float = 1e-7):
    p = probs.gather(1, y_true.view(-1, 1)).clamp(min=epsilon)
    return -torch.log(p).mean()


def torch_mse(y_true: torch.Tensor, y_pred: torch.Tensor):
    return ((y_pred.view(-1) - y_true.view(-1)) ** 2).mean()
