"""Independent reference computations used by the tests.

Everything here is plain Python / numpy float64 arithmetic and never calls
into the package under test.
"""
import math
from collections import defaultdict

import numpy as np


def soft_similarity_ref(h_hat, h_tilde, eps=1e-8):
    total = 0.0
    for a, b in zip(h_hat, h_tilde):
        num = 0.0
        den = 0.0
        for x, y in zip(a, b):
            num += x * y
            den += x + y - x * y
        total += num / max(den, eps)
    return total / len(h_hat)


def regression_loss_ref(pred_hat, pred_tilde, labels):
    n = 0
    s_hat = 0.0
    s_tilde = 0.0
    for ph, pt, y in zip(pred_hat, pred_tilde, labels):
        for a, b, c in zip(ph, pt, y):
            s_hat += (a - c) ** 2
            s_tilde += (b - c) ** 2
            n += 1
    return s_hat / n + s_tilde / n


def adversarial_loss_ref(d_s, d_t):
    return sum(math.log(p) for p in d_s) / len(d_s) + sum(math.log(1.0 - p) for p in d_t) / len(d_t)


def central_difference(fn, x, step=1e-5):
    """Gradient of scalar fn at float64 array x by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        fp = fn(x)
        x[i] = orig - step
        fm = fn(x)
        x[i] = orig
        grad[i] = (fp - fm) / (2 * step)
    return grad


def grid_groupby_ref(predictions, labels, extents, cell):
    """Per-cell mean squared error by explicit dictionary grouping."""
    nx = max(1, math.ceil(extents[0] / cell - 1e-9))
    ny = max(1, math.ceil(extents[1] / cell - 1e-9))
    sums = defaultdict(float)
    counts = defaultdict(int)
    for p, y in zip(predictions, labels):
        cx = min(max(int(math.floor(y[0] / cell)), 0), nx - 1)
        cy = min(max(int(math.floor(y[1] / cell)), 0), ny - 1)
        err = ((p[0] - y[0]) ** 2 + (p[1] - y[1]) ** 2) / 2.0
        sums[cx, cy] += err
        counts[cx, cy] += 1
    mse = np.full((nx, ny), np.nan)
    cnt = np.zeros((nx, ny), dtype=int)
    for k, c in counts.items():
        mse[k] = sums[k] / c
        cnt[k] = c
    return mse, cnt


def rel_err(a, b, floor=1e-12):
    return abs(a - b) / max(abs(b), floor)
