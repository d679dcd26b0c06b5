"""Time the compiled loss kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the comparison runs regardless of
SAEDA_PURE_PYTHON. Results also include the agreement between backends.
"""
import argparse
import timeit

import numpy as np

from saeda import _kernels_py as py

try:
    from saeda import _kernels as cy
except ImportError:  # extension not built
    cy = None

CASES = {
    # name: (batch, width)
    "stage-1 batch": (32, 100),
    "full dataset": (2000, 100),
}


def inputs(n, b, classes=4, seed=0):
    rng = np.random.default_rng(seed)
    a, c = rng.normal(size=(n, b)), rng.normal(size=(n, b))
    ya = np.arange(n, dtype=np.int64) % classes
    x = rng.uniform(size=(n, 1024))
    p = rng.uniform(0.01, 0.99, size=(n, 1024))
    return a, ya, c, ya.copy(), x, p


def calls(mod, a, ya, c, yc, x, p):
    return {
        "centroid_sqdist": lambda: mod.centroid_sqdist(a, c),
        "classwise_centroid_sqdist": lambda: mod.classwise_centroid_sqdist(a, ya, c, yc, 4),
        "bce": lambda: mod.bce(x, p, 1e-7),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    if cy is None:
        print("compiled extension not available; build with `pip install --no-build-isolation -e .`")
    print(f"{'case':<15}{'kernel':<28}{'python us':>11}{'compiled us':>13}{'speedup':>9}{'max |diff|':>12}")
    for case, (n, b) in CASES.items():
        data = inputs(n, b)
        py_calls = calls(py, *data)
        cy_calls = calls(cy, *data) if cy else {}
        for name, fn in py_calls.items():
            t_py = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e6
            if name in cy_calls:
                t_cy = min(timeit.repeat(cy_calls[name], number=1, repeat=args.repeat)) * 1e6
                diff = max(float(np.max(np.abs(np.asarray(u, float) - np.asarray(v, float))))
                           for u, v in zip(fn(), cy_calls[name]()))
                print(f"{case:<15}{name:<28}{t_py:>11.1f}{t_cy:>13.1f}{t_py / t_cy:>8.2f}x{diff:>12.2e}")
            else:
                print(f"{case:<15}{name:<28}{t_py:>11.1f}{'-':>13}{'-':>9}{'-':>12}")


if __name__ == "__main__":
    main()
