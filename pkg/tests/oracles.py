"""Naive loop-based reference implementations used as independent oracles."""
import math


def bce(x, p, eps=1e-7):
    rows = [list(map(float, r)) for r in x.reshape(len(x), -1)]
    probs = [list(map(float, r)) for r in p.reshape(len(p), -1)]
    total = 0.0
    for xr, pr in zip(rows, probs):
        s = 0.0
        for xv, pv in zip(xr, pr):
            pv = min(max(pv, eps), 1 - eps)
            s += xv * math.log(pv) + (1 - xv) * math.log(1 - pv)
        total -= s
    return total / len(rows)


def _centroid(rows):
    width = len(rows[0])
    c = [0.0] * width
    for r in rows:
        for j in range(width):
            c[j] += float(r[j])
    return [v / len(rows) for v in c]


def mmd(a, b):
    ca, cb = _centroid(list(a)), _centroid(list(b))
    return sum((u - v) ** 2 for u, v in zip(ca, cb))


def cws_mmd(a, ya, b, yb, num_classes):
    total = 0.0
    for k in range(num_classes):
        ra = [row for row, y in zip(a, ya) if y == k]
        rb = [row for row, y in zip(b, yb) if y == k]
        total += mmd(ra, rb)
    return total / num_classes


def cce(y_true, probs, eps=1e-7):
    s = 0.0
    for y, row in zip(y_true, probs):
        s -= math.log(max(float(row[y]), eps))
    return s / len(y_true)


def mse(y_true, y_pred):
    return sum((float(a) - float(b)) ** 2 for a, b in zip(y_true, y_pred)) / len(y_true)


def r_squared(y_true, y_pred):
    mean = sum(map(float, y_true)) / len(y_true)
    ss_res = sum((float(a) - float(b)) ** 2 for a, b in zip(y_true, y_pred))
    ss_tot = sum((float(a) - mean) ** 2 for a in y_true)
    return 1 - ss_res / ss_tot


def central_difference(f, x, step=1e-4):
    """Gradient of scalar f at array x by central differences."""
    g = x.copy()
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g
