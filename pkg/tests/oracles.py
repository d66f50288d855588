"""Independent oracles the tests check the package against.

Everything here is deliberately written the slow, obvious way (exhaustive
enumeration, dense convolution, plain subgradient descent, double loops) and
shares no code with the implementation paths it verifies.
"""

import numpy as np
from numba import njit


def brute_force_min_cut(n_pixels, edge_u, edge_v, caps, source, sink):
    """Minimum s/t cut value by enumerating all 2^n pixel-side assignments."""
    best = np.inf
    edges = list(zip(edge_u, edge_v, caps))
    for bits in range(1 << n_pixels):
        side = [(bits >> p) & 1 for p in range(n_pixels)]  # 1 = source side

        def on_source(node):
            if node == source:
                return True
            if node == sink:
                return False
            return side[node] == 1

        value = sum(c for u, v, c in edges if on_source(u) and not on_source(v))
        best = min(best, value)
    return best


def brute_force_min_cut_fast(n_pixels, edge_u, edge_v, caps, source, sink):
    """Same exhaustive enumeration, vectorized over all 2^n assignments."""
    subsets = np.arange(1 << n_pixels, dtype=np.int64)

    def side(node):  # 1 = source side
        if node == source:
            return np.ones_like(subsets)
        if node == sink:
            return np.zeros_like(subsets)
        return (subsets >> node) & 1

    total = np.zeros(len(subsets), dtype=np.float64)
    for u, v, c in zip(edge_u, edge_v, caps):
        total += c * (side(u) * (1 - side(v)))
    return float(total.min())


def reflect_index(i, n):
    """Mirror (reflect-101) index mapping for any i, matching mirrored borders."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def dense_blur_oracle(img, kernel):
    """Direct O(n^2) 2-D convolution with the separable kernel's outer product."""
    k2 = np.outer(kernel, kernel)
    radius = len(kernel) // 2
    h, w = img.shape
    out = np.zeros_like(img, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    yy = reflect_index(y + dy, h)
                    xx = reflect_index(x + dx, w)
                    acc += k2[dy + radius, dx + radius] * img[yy, xx]
            out[y, x] = acc
    return out


def confusion_count_oracle(gt, pred):
    """3x3 confusion counts by a plain double loop."""
    cm = np.zeros((3, 3), dtype=np.int64)
    for y in range(gt.shape[0]):
        for x in range(gt.shape[1]):
            cm[gt[y, x], pred[y, x]] += 1
    return cm


@njit(cache=True)
def _subgradient_steps(X, y, c, iters, step0, w0, b0):
    n, d = X.shape
    w = w0.copy()
    b = b0
    best_w = w.copy()
    best_b = b
    best_f = 1e300
    for t in range(iters):
        f = 0.5 * (w * w).sum()
        gw = w.copy()
        gb = 0.0
        for i in range(n):
            margin = y[i] * ((X[i] * w).sum() + b)
            if margin < 1.0:
                f += c * (1.0 - margin)
                for j in range(d):
                    gw[j] -= c * y[i] * X[i, j]
                gb -= c * y[i]
        if f < best_f:
            best_f = f
            best_w = w.copy()
            best_b = b
        gn = np.sqrt((gw * gw).sum() + gb * gb)
        if gn < 1e-12:
            break
        s = step0 / np.sqrt(1.0 + t)
        for j in range(d):
            w[j] -= s * gw[j] / gn
        b -= s * gb / gn
    return best_w, best_b, best_f


def subgradient_svm(X, y, c, rounds=8, iters_per=15_000, step0=8.0):
    """Long-run subgradient descent on 0.5*||w||^2 + C*sum(hinge), restarting
    from the best iterate at geometrically decreasing step scales."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.zeros(X.shape[1])
    b = 0.0
    best_f = np.inf
    step = step0
    for _ in range(rounds):
        w2, b2, f2 = _subgradient_steps(X, y, c, iters_per, step, w.copy(), b)
        if f2 < best_f:
            w, b, best_f = w2, b2, f2
        step /= 4.0
    return w, b, best_f


def iou_scalar_oracle(cm):
    """Re-derive per-class IoU and mIoU from raw counts, scalar arithmetic only."""
    ious = []
    for c in range(3):
        tp = int(cm[c][c])
        fp = sum(int(cm[r][c]) for r in range(3)) - tp
        fn = sum(int(cm[c][r]) for r in range(3)) - tp
        ious.append(tp / (tp + fp + fn) if tp + fp + fn > 0 else None)
    supported = [v for v in ious if v is not None]
    return ious, sum(supported) / len(supported)
