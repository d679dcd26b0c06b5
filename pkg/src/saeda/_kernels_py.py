"""Pure-NumPy loss kernels; the fallback when the compiled module is absent.

Each kernel returns the loss value together with its analytic gradient(s).
Inputs are float64 C-contiguous arrays.
"""
import numpy as np


def centroid_sqdist(a, b):
    """||mean(a) - mean(b)||^2 and its gradients w.r.t. a and b."""
    diff = a.mean(axis=0) - b.mean(axis=0)
    value = float(diff @ diff)
    ga = np.broadcast_to(2.0 * diff / a.shape[0], a.shape).copy()
    gb = np.broadcast_to(-2.0 * diff / b.shape[0], b.shape).copy()
    return value, ga, gb


def classwise_centroid_sqdist(a, ya, b, yb, num_classes):
    """Mean over classes of per-class centroid squared distance, with gradients.

    Returns (value, ga, gb, missing) where ``missing`` is the first class id
    absent from either side, or -1.
    """
    width = a.shape[1]
    na = np.bincount(ya, minlength=num_classes)[:num_classes]
    nb = np.bincount(yb, minlength=num_classes)[:num_classes]
    for k in range(num_classes):
        if na[k] == 0 or nb[k] == 0:
            return 0.0, None, None, k
    sa = np.zeros((num_classes, width))
    sb = np.zeros((num_classes, width))
    np.add.at(sa, ya, a)
    np.add.at(sb, yb, b)
    diff = sa / na[:, None] - sb / nb[:, None]
    value = float(np.sum(diff * diff)) / num_classes
    ga = (2.0 / num_classes) * diff[ya] / na[ya][:, None]
    gb = (-2.0 / num_classes) * diff[yb] / nb[yb][:, None]
    return value, ga, gb, -1


def bce(x, p, eps):
    """Per-sample summed binary cross-entropy, averaged over rows (axis 0).

    ``x`` and ``p`` are (N, D).  Probabilities are clamped to [eps, 1 - eps];
    the gradient w.r.t. ``p`` is zero where the clamp is active.
    """
    n = x.shape[0]
    pc = np.clip(p, eps, 1.0 - eps)
    value = float(-np.sum(x * np.log(pc) + (1.0 - x) * np.log1p(-pc))) / n
    inside = (p >= eps) & (p <= 1.0 - eps)
    gp = np.where(inside, (-(x / pc) + (1.0 - x) / (1.0 - pc)) / n, 0.0)
    return value, gp
