"""Stage 3: per-image linear SVM that re-thresholds the frame in a
14-dimensional color/position feature space and prunes GrabCut output.

The trained model minimizes 0.5*||w||^2 + C * sum(hinge) with an exact
(unregularized) bias, solved on the dual with SMO and second-order working-set
selection.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .imaging import (
    LEFT,
    RIGHT,
    WHITE_POINT,
    ColorFrame,
    rgb_to_hsv_image,
    srgb_to_xyz_image,
    xyz_to_lab_image,
)

FEATURE_DIM = 14


@dataclass(frozen=True)
class SvmModel:
    w: np.ndarray
    b: float
    c: float

    def decision(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.w + self.b

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.where(self.decision(features) >= 0, 1, -1)


def feature_image(frame: ColorFrame) -> np.ndarray:
    """(H, W, 14) feature raster: RGB, HSV, XYZ, Lab and image coordinates,
    each channel affinely scaled to [0, 1]."""
    rgb = frame.pixels.astype(np.float64)
    hsv = rgb_to_hsv_image(rgb)
    xyz = srgb_to_xyz_image(rgb)
    lab = xyz_to_lab_image(xyz)
    h, w = rgb.shape[:2]
    xs = np.arange(w, dtype=np.float64) / (w - 1) if w > 1 else np.zeros(w)
    ys = np.arange(h, dtype=np.float64) / (h - 1) if h > 1 else np.zeros(h)
    xx, yy = np.meshgrid(xs, ys)
    return np.concatenate(
        [
            rgb / 255.0,
            hsv / np.array([180.0, 255.0, 255.0]),
            xyz / WHITE_POINT,
            np.stack(
                [lab[..., 0] / 100.0, (lab[..., 1] + 128.0) / 255.0, (lab[..., 2] + 128.0) / 255.0],
                axis=-1,
            ),
            xx[..., None],
            yy[..., None],
        ],
        axis=-1,
    )


def extract_features(frame: ColorFrame, x: int, y: int) -> np.ndarray:
    """Feature vector of one pixel; (x, y) must be inside the frame."""
    if not (0 <= x < frame.width and 0 <= y < frame.height):
        raise IndexError(f"pixel ({x}, {y}) outside {frame.width}x{frame.height} frame")
    rgb = frame.pixels[y, x].astype(np.float64)
    hsv = rgb_to_hsv_image(rgb)
    xyz = srgb_to_xyz_image(rgb)
    lab = xyz_to_lab_image(xyz)
    coord_x = x / (frame.width - 1) if frame.width > 1 else 0.0
    coord_y = y / (frame.height - 1) if frame.height > 1 else 0.0
    return np.concatenate(
        [
            rgb / 255.0,
            hsv / np.array([180.0, 255.0, 255.0]),
            xyz / WHITE_POINT,
            [lab[0] / 100.0, (lab[1] + 128.0) / 255.0, (lab[2] + 128.0) / 255.0],
            [coord_x, coord_y],
        ]
    )


def svm_objective(model: SvmModel, features: np.ndarray, labels: np.ndarray) -> float:
    """0.5*||w||^2 + C * sum(hinge) at the model's parameters."""
    margins = labels * model.decision(features)
    return 0.5 * float(model.w @ model.w) + model.c * float(np.maximum(0.0, 1.0 - margins).sum())


def train_svm(
    features: np.ndarray,
    labels: np.ndarray,
    c: float = 900.0,
    tol: float = 1e-6,
    max_iter: int = 200_000,
) -> SvmModel:
    """SMO on the SVM dual (box constraints plus the bias equality constraint).

    Stops when the maximal KKT violation drops below tol; raises on
    single-class input.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (n, d) with one label per row")
    if c <= 0:
        raise ValueError("C must be positive")
    if not ((y == 1).any() and (y == -1).any()):
        raise ValueError("both classes (+1/-1) must be present")

    n = len(X)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5*a'Qa - e'a at a=0
    kdiag = np.einsum("ij,ij->i", X, X)
    eps = 1e-12
    pos, neg = y > 0, y < 0

    m_val = M_val = 0.0
    for _ in range(max_iter):
        yg = y * grad
        up = (pos & (alpha < c - eps)) | (neg & (alpha > eps))
        low = (neg & (alpha < c - eps)) | (pos & (alpha > eps))
        neg_yg = -yg
        up_vals = np.where(up, neg_yg, -np.inf)
        low_vals = np.where(low, neg_yg, np.inf)
        i = int(up_vals.argmax())
        m_val = up_vals[i]
        M_val = float(low_vals.min())
        if m_val - M_val <= tol:
            break

        ki = X @ X[i]
        # second-order selection of j: largest guaranteed objective decrease
        bt = m_val - neg_yg
        at = np.maximum(kdiag[i] + kdiag - 2.0 * ki, 1e-12)
        gain = np.where(low & (bt > eps), bt * bt / at, -np.inf)
        j = int(gain.argmax())
        if not np.isfinite(gain[j]):
            break

        s = y[i] * y[j]
        kij = ki[j]
        eta = max(kdiag[i] + kdiag[j] - 2.0 * kij, 1e-12)
        delta_j = y[j] * (yg[i] - yg[j]) / eta
        if s < 0:
            lo, hi = max(0.0, alpha[j] - alpha[i]), min(c, c + alpha[j] - alpha[i])
        else:
            lo, hi = max(0.0, alpha[i] + alpha[j] - c), min(c, alpha[i] + alpha[j])
        new_j = float(np.clip(alpha[j] + delta_j, lo, hi))
        d_j = new_j - alpha[j]
        if abs(d_j) < 1e-15:
            break
        d_i = -s * d_j
        kj = X @ X[j]
        grad += (y * y[i]) * ki * d_i + (y * y[j]) * kj * d_j
        alpha[i] += d_i
        alpha[j] = new_j
    else:
        warnings.warn(f"SMO hit the iteration cap ({max_iter}); model may be inexact", stacklevel=2)

    w = X.T @ (alpha * y)
    b = (m_val + M_val) / 2.0
    return SvmModel(w=w, b=float(b), c=float(c))


def _subsample(idx: np.ndarray, cap: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if cap is None or len(idx) <= cap:
        return idx
    return rng.choice(idx, size=cap, replace=False)


def refine_labels(
    frame: ColorFrame,
    left_mask: np.ndarray,
    right_mask: np.ndarray,
    c: float = 900.0,
    neg_cap: Optional[int] = 50_000,
    pos_cap: Optional[int] = 50_000,
    seed: int = 0,
    tol: float = 1e-4,
    max_iter: int = 50_000,
) -> np.ndarray:
    """Per-hand SVM pruning of the GrabCut masks into a final label mask.

    For each hand, positives are that hand's mask pixels and negatives a
    uniform sample of everything else (the other glove included); the hand
    keeps exactly those of its pixels the trained model still classifies
    positive, so the output is always a subset of the input masks. Pixels
    claimed by both hands go to the larger decision value.
    """
    h, w = left_mask.shape
    feats = feature_image(frame).reshape(-1, FEATURE_DIM)
    label = np.zeros(h * w, dtype=np.uint8)
    decision = np.full(h * w, -np.inf)

    for hand, mask in ((LEFT, left_mask), (RIGHT, right_mask)):
        flat = mask.ravel()
        pos_idx = np.flatnonzero(flat)
        if pos_idx.size == 0:
            continue
        neg_idx = np.flatnonzero(~flat)
        rng = np.random.default_rng(np.random.SeedSequence([seed, hand]))
        if neg_idx.size == 0:
            # the mask covers the whole image; nothing to train against
            keep_idx, keep_dec = pos_idx, np.zeros(pos_idx.size)
        else:
            train_pos = _subsample(pos_idx, pos_cap, rng)
            train_neg = _subsample(neg_idx, neg_cap, rng)
            X = np.concatenate([feats[train_pos], feats[train_neg]])
            yv = np.concatenate([np.ones(len(train_pos)), -np.ones(len(train_neg))])
            model = train_svm(X, yv, c=c, tol=tol, max_iter=max_iter)
            dec = model.decision(feats[pos_idx])
            keep = dec >= 0
            keep_idx, keep_dec = pos_idx[keep], dec[keep]
        better = keep_dec > decision[keep_idx]
        target = keep_idx[better]
        label[target] = hand
        decision[target] = keep_dec[better]

    return label.reshape(h, w)
