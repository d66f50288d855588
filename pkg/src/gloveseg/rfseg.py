"""Real-time depth segmenter: a Random Forest over depth-differential features.

Features follow f(x) = d(x + u/d(x)) - d(x + v/d(x)) with offsets u, v stored
in pixel-meters, so the probe displacement in pixels is offset * 1000 / d_mm.
Probes that leave the image or hit invalid depth read a large background
constant, which makes absolute depth visible to the trees.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .imaging import DepthFrame

MAGIC = b"GSRF"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    offset_radius: float = 200.0  # pixel-meters
    bg_depth: float = 10_000.0  # millimeters; beyond any SR300-class return


@dataclass(frozen=True)
class TrainConfig:
    trees: int = 3
    max_depth: int = 22
    pixels_per_class: int = 200  # per image
    candidates_per_node: int = 32
    thresholds_per_candidate: int = 20
    min_samples: int = 16
    bootstrap: bool = True
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)


@dataclass
class Tree:
    """Flat node arrays; children (-1, -1) marks a leaf."""

    offset_u: np.ndarray  # (n, 2) float32, pixel-meters
    offset_v: np.ndarray
    threshold: np.ndarray  # (n,) float32, millimeters
    children: np.ndarray  # (n, 2) int32
    dist: np.ndarray  # (n, 3) float32, rows sum to 1 at leaves

    @property
    def n_nodes(self) -> int:
        return len(self.threshold)

    def depth(self) -> int:
        def walk(node: int, d: int) -> int:
            if self.children[node, 0] < 0:
                return d
            return max(walk(self.children[node, 0], d + 1), walk(self.children[node, 1], d + 1))

        return walk(0, 0)


@dataclass
class ForestModel:
    trees: list[Tree]
    features: FeatureConfig = field(default_factory=FeatureConfig)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def _probe(values: np.ndarray, x: int, y: int, off: tuple[float, float], d: float, bg: float) -> float:
    px = x + int(np.floor(off[0] * 1000.0 / d + 0.5))
    py = y + int(np.floor(off[1] * 1000.0 / d + 0.5))
    h, w = values.shape
    if 0 <= px < w and 0 <= py < h:
        v = float(values[py, px])
        return v if v > 0 else bg
    return bg


def depth_feature(
    depth: DepthFrame,
    x: int,
    y: int,
    u: tuple[float, float],
    v: tuple[float, float],
    bg: float = FeatureConfig.bg_depth,
) -> float:
    """Depth differential d(x + u/d(x)) - d(x + v/d(x)); requires d(x) > 0."""
    d = float(depth.values[y, x])
    if d <= 0:
        raise ValueError(f"depth_feature requires valid depth at the center pixel ({x}, {y})")
    return _probe(depth.values, x, y, u, d, bg) - _probe(depth.values, x, y, v, d, bg)


def _features_batch(
    stack: np.ndarray,
    frame_idx: np.ndarray,
    ys: np.ndarray,
    xs: np.ndarray,
    depths: np.ndarray,
    off_u: np.ndarray,
    off_v: np.ndarray,
    bg: float,
) -> np.ndarray:
    """Vectorized feature evaluation over training samples for one (u, v)."""
    h, w = stack.shape[1:]
    out = np.empty((2, len(xs)), dtype=np.float64)
    scale = 1000.0 / depths
    for row, off in enumerate((off_u, off_v)):
        px = xs + np.floor(off[0] * scale + 0.5).astype(np.int64)
        py = ys + np.floor(off[1] * scale + 0.5).astype(np.int64)
        inb = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        vals = np.full(len(xs), bg, dtype=np.float64)
        vals[inb] = stack[frame_idx[inb], py[inb], px[inb]]
        vals[vals <= 0] = bg
        out[row] = vals
    return out[0] - out[1]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def entropy_bits(counts: np.ndarray) -> float:
    """Shannon entropy (base 2) of a class-count vector."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def information_gain(parent: np.ndarray, left: np.ndarray, right: np.ndarray) -> float:
    parent = np.asarray(parent, dtype=np.float64)
    n = parent.sum()
    nl, nr = left.sum(), right.sum()
    return entropy_bits(parent) - (nl * entropy_bits(left) + nr * entropy_bits(right)) / n


def _best_split(
    feats: np.ndarray,
    labels: np.ndarray,
    thresholds_per_candidate: int,
) -> tuple[float, float]:
    """Best (gain, threshold) for one candidate feature column; split is f < t."""
    lo, hi = feats.min(), feats.max()
    if lo == hi:
        return -1.0, 0.0
    qs = np.linspace(0.0, 1.0, thresholds_per_candidate + 2)[1:-1]
    thresholds = np.unique(np.quantile(feats, qs))
    edges = np.concatenate([[-np.inf], thresholds, [np.inf]])
    counts = np.stack(
        [np.histogram(feats[labels == c], bins=edges)[0] for c in range(3)], axis=1
    ).astype(np.float64)
    below = counts.cumsum(axis=0)[:-1]  # class counts with f < t, per threshold
    parent = counts.sum(axis=0)
    above = parent - below
    n = parent.sum()

    def h(rows: np.ndarray) -> np.ndarray:
        tot = rows.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = np.where(rows > 0, rows / np.maximum(tot, 1e-300), 1.0)
            ent = -(np.where(rows > 0, rows / np.maximum(tot, 1e-300) * np.log2(p), 0.0)).sum(axis=1)
        return np.where(tot[:, 0] > 0, ent, 0.0)

    nl = below.sum(axis=1)
    nr = above.sum(axis=1)
    gains = entropy_bits(parent) - (nl * h(below) + nr * h(above)) / n
    best = int(gains.argmax())
    return float(gains[best]), float(thresholds[best])


def _grow_tree(
    stack: np.ndarray,
    frame_idx: np.ndarray,
    ys: np.ndarray,
    xs: np.ndarray,
    depths: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Tree:
    r = cfg.features.offset_radius
    bg = cfg.features.bg_depth
    offset_u: list = []
    offset_v: list = []
    threshold: list = []
    children: list = []
    dist: list = []

    def new_node() -> int:
        offset_u.append((0.0, 0.0))
        offset_v.append((0.0, 0.0))
        threshold.append(0.0)
        children.append([-1, -1])
        dist.append((0.0, 0.0, 0.0))
        return len(threshold) - 1

    root = new_node()
    stack_nodes = [(root, np.arange(len(labels)), 0)]
    while stack_nodes:
        node, idx, depth_level = stack_nodes.pop()
        node_labels = labels[idx]
        counts = np.bincount(node_labels, minlength=3).astype(np.float64)
        pure = (counts > 0).sum() <= 1
        if depth_level >= cfg.max_depth or len(idx) < cfg.min_samples or pure:
            dist[node] = tuple(counts / counts.sum())
            continue
        best = (0.0, None, None, 0.0, None)  # gain, u, v, thr, feats
        for cand in range(cfg.candidates_per_node):
            off_u = rng.uniform(-r, r, size=2)
            # alternate two-probe features with center-referenced ones
            # (v = 0 probes read the pixel itself, which inference gets free)
            off_v = rng.uniform(-r, r, size=2) if cand % 2 == 0 else np.zeros(2)
            feats = _features_batch(stack, frame_idx[idx], ys[idx], xs[idx], depths[idx], off_u, off_v, bg)
            gain, thr = _best_split(feats, node_labels, cfg.thresholds_per_candidate)
            if gain > best[0]:
                best = (gain, off_u, off_v, thr, feats)
        gain, off_u, off_v, thr, feats = best
        if off_u is None or gain <= 1e-12:
            dist[node] = tuple(counts / counts.sum())
            continue
        go_left = feats < thr
        if not go_left.any() or go_left.all():
            dist[node] = tuple(counts / counts.sum())
            continue
        left = new_node()
        right = new_node()
        offset_u[node] = tuple(off_u)
        offset_v[node] = tuple(off_v)
        threshold[node] = thr
        children[node] = [left, right]
        stack_nodes.append((left, idx[go_left], depth_level + 1))
        stack_nodes.append((right, idx[~go_left], depth_level + 1))

    return Tree(
        offset_u=np.asarray(offset_u, dtype=np.float32),
        offset_v=np.asarray(offset_v, dtype=np.float32),
        threshold=np.asarray(threshold, dtype=np.float32),
        children=np.asarray(children, dtype=np.int32),
        dist=np.asarray(dist, dtype=np.float32),
    )


def train_forest(
    frames: Sequence[tuple[DepthFrame, np.ndarray]],
    cfg: TrainConfig = TrainConfig(),
) -> ForestModel:
    """Train a forest on (depth, label) pairs.

    Per tree: a bootstrap sample of frames, then class-balanced valid-depth
    pixel sampling per image (the class-frequency correction), then greedy
    splits maximizing Shannon information gain.
    """
    if not frames:
        raise ValueError("no training frames")
    shape = frames[0][0].values.shape
    for d, m in frames:
        if d.values.shape != shape or m.shape != shape:
            raise ValueError("all training frames must share one resolution")
    stack = np.stack([d.values for d, _ in frames]).astype(np.float32)
    label_stack = np.stack([np.asarray(m, dtype=np.uint8) for _, m in frames])

    present = set()
    for f in range(len(frames)):
        valid = stack[f] > 0
        present |= set(np.unique(label_stack[f][valid]).tolist())
    missing = {0, 1, 2} - present
    if missing:
        raise ValueError(f"training pixels missing class(es) {sorted(missing)}")

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.trees)
    trees = []
    sample_counts = []
    for t in range(cfg.trees):
        rng = np.random.default_rng(seeds[t])
        frame_choice = (
            rng.integers(0, len(frames), size=len(frames))
            if cfg.bootstrap
            else np.arange(len(frames))
        )
        f_idx, ys, xs, lab = [], [], [], []
        for f in frame_choice:
            valid = stack[f] > 0
            for c in range(3):
                cy, cx = np.nonzero(valid & (label_stack[f] == c))
                if cy.size == 0:
                    continue
                take = min(cy.size, cfg.pixels_per_class)
                pick = rng.choice(cy.size, size=take, replace=False)
                f_idx.append(np.full(take, f, dtype=np.int64))
                ys.append(cy[pick].astype(np.int64))
                xs.append(cx[pick].astype(np.int64))
                lab.append(np.full(take, c, dtype=np.int64))
        f_idx = np.concatenate(f_idx)
        ys = np.concatenate(ys)
        xs = np.concatenate(xs)
        lab = np.concatenate(lab)
        if len(set(np.unique(lab).tolist())) < 3:
            raise ValueError("a tree's bootstrap sample lost a class; add more frames")
        depths = stack[f_idx, ys, xs].astype(np.float64)
        trees.append(_grow_tree(stack, f_idx, ys, xs, depths, lab, cfg, rng))
        sample_counts.append(int(len(lab)))

    metadata = {
        "n_frames": len(frames),
        "samples_per_tree": sample_counts,
        "seed": cfg.seed,
        "max_depth": cfg.max_depth,
    }
    return ForestModel(trees=trees, features=cfg.features, metadata=metadata)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@njit(cache=True)
def _predict_kernel(depth, roots, offs_u0, offs_u1, offs_v0, offs_v1, thr, child_l, child_r, dist, bg):
    h, w = depth.shape
    ntrees = roots.size
    out = np.zeros((h, w), dtype=np.uint8)
    probs = np.zeros((h, w, 3), dtype=np.float32)
    for y in range(h):
        for x in range(w):
            d = depth[y, x]
            if d <= 0:
                probs[y, x, 0] = 1.0
                continue
            s = 1000.0 / d
            p0 = 0.0
            p1 = 0.0
            p2 = 0.0
            for t in range(ntrees):
                node = roots[t]
                while child_l[node] >= 0:
                    px = x + int(np.floor(offs_u0[node] * s + 0.5))
                    py = y + int(np.floor(offs_u1[node] * s + 0.5))
                    if 0 <= px < w and 0 <= py < h:
                        du = depth[py, px]
                        if du <= 0:
                            du = bg
                    else:
                        du = bg
                    px = x + int(np.floor(offs_v0[node] * s + 0.5))
                    py = y + int(np.floor(offs_v1[node] * s + 0.5))
                    if 0 <= px < w and 0 <= py < h:
                        dv = depth[py, px]
                        if dv <= 0:
                            dv = bg
                    else:
                        dv = bg
                    if du - dv < thr[node]:
                        node = child_l[node]
                    else:
                        node = child_r[node]
                p0 += dist[node, 0]
                p1 += dist[node, 1]
                p2 += dist[node, 2]
            lab = 0
            best = p0
            if p1 > best:
                lab = 1
                best = p1
            if p2 > best:
                lab = 2
                best = p2
            out[y, x] = lab
            probs[y, x, 0] = p0 / ntrees
            probs[y, x, 1] = p1 / ntrees
            probs[y, x, 2] = p2 / ntrees
    return out, probs


@njit(cache=True, fastmath=True)
def _predict_labels_3(depth, roots, u0, u1, v0, v1, thr, cl, cr, dist, bg):
    """Label-only fast path for the standard 3-tree forest.

    The three traversals are interleaved so their probe loads overlap instead
    of forming one long dependent chain; bounds checks use the unsigned-wrap
    trick. This is the real-time path, so it stays branch-light.
    """
    h, w = depth.shape
    uh = np.uint32(h)
    uw = np.uint32(w)
    half = np.float32(0.5)
    zero = np.float32(0.0)
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            d = depth[y, x]
            if d <= 0:
                continue
            s = np.float32(1000.0) / d
            n0 = roots[0]
            n1 = roots[1]
            n2 = roots[2]
            a0 = cl[n0] >= 0
            a1 = cl[n1] >= 0
            a2 = cl[n2] >= 0
            while a0 or a1 or a2:
                if a0:
                    px = np.uint32(x + int(np.floor(u0[n0] * s + half)))
                    py = np.uint32(y + int(np.floor(u1[n0] * s + half)))
                    du = depth[py, px] if (px < uw and py < uh) else zero
                    if du <= 0:
                        du = bg
                    if v0[n0] == zero and v1[n0] == zero:
                        dv = d  # center-referenced probe: the pixel itself
                    else:
                        px = np.uint32(x + int(np.floor(v0[n0] * s + half)))
                        py = np.uint32(y + int(np.floor(v1[n0] * s + half)))
                        dv = depth[py, px] if (px < uw and py < uh) else zero
                        if dv <= 0:
                            dv = bg
                    n0 = cl[n0] if du - dv < thr[n0] else cr[n0]
                    a0 = cl[n0] >= 0
                if a1:
                    px = np.uint32(x + int(np.floor(u0[n1] * s + half)))
                    py = np.uint32(y + int(np.floor(u1[n1] * s + half)))
                    du = depth[py, px] if (px < uw and py < uh) else zero
                    if du <= 0:
                        du = bg
                    if v0[n1] == zero and v1[n1] == zero:
                        dv = d  # center-referenced probe: the pixel itself
                    else:
                        px = np.uint32(x + int(np.floor(v0[n1] * s + half)))
                        py = np.uint32(y + int(np.floor(v1[n1] * s + half)))
                        dv = depth[py, px] if (px < uw and py < uh) else zero
                        if dv <= 0:
                            dv = bg
                    n1 = cl[n1] if du - dv < thr[n1] else cr[n1]
                    a1 = cl[n1] >= 0
                if a2:
                    px = np.uint32(x + int(np.floor(u0[n2] * s + half)))
                    py = np.uint32(y + int(np.floor(u1[n2] * s + half)))
                    du = depth[py, px] if (px < uw and py < uh) else zero
                    if du <= 0:
                        du = bg
                    if v0[n2] == zero and v1[n2] == zero:
                        dv = d  # center-referenced probe: the pixel itself
                    else:
                        px = np.uint32(x + int(np.floor(v0[n2] * s + half)))
                        py = np.uint32(y + int(np.floor(v1[n2] * s + half)))
                        dv = depth[py, px] if (px < uw and py < uh) else zero
                        if dv <= 0:
                            dv = bg
                    n2 = cl[n2] if du - dv < thr[n2] else cr[n2]
                    a2 = cl[n2] >= 0
            p0 = dist[n0, 0] + dist[n1, 0] + dist[n2, 0]
            p1 = dist[n0, 1] + dist[n1, 1] + dist[n2, 1]
            p2 = dist[n0, 2] + dist[n1, 2] + dist[n2, 2]
            lab = 0
            best = p0
            if p1 > best:
                lab = 1
                best = p1
            if p2 > best:
                lab = 2
            out[y, x] = lab
    return out


def _flatten(model: ForestModel):
    roots = []
    offset = 0
    parts = {k: [] for k in ("u0", "u1", "v0", "v1", "thr", "cl", "cr", "dist")}
    for tree in model.trees:
        roots.append(offset)
        shift = np.where(tree.children >= 0, tree.children + offset, -1)
        parts["u0"].append(tree.offset_u[:, 0])
        parts["u1"].append(tree.offset_u[:, 1])
        parts["v0"].append(tree.offset_v[:, 0])
        parts["v1"].append(tree.offset_v[:, 1])
        parts["thr"].append(tree.threshold)
        parts["cl"].append(shift[:, 0].astype(np.int32))
        parts["cr"].append(shift[:, 1].astype(np.int32))
        parts["dist"].append(tree.dist)
        offset += tree.n_nodes
    return (
        np.asarray(roots, dtype=np.int32),
        np.concatenate(parts["u0"]).astype(np.float32),
        np.concatenate(parts["u1"]).astype(np.float32),
        np.concatenate(parts["v0"]).astype(np.float32),
        np.concatenate(parts["v1"]).astype(np.float32),
        np.concatenate(parts["thr"]).astype(np.float32),
        np.concatenate(parts["cl"]),
        np.concatenate(parts["cr"]),
        np.concatenate(parts["dist"]).reshape(-1, 3).astype(np.float32),
    )


def predict_mask(
    model: ForestModel,
    depth: DepthFrame,
    return_probs: bool = False,
):
    """Per-pixel argmax of the averaged leaf distributions (ties -> lowest
    label); invalid-depth pixels are background."""
    flat = getattr(model, "_flat_cache", None)
    if flat is None:
        flat = _flatten(model)
        model._flat_cache = flat
    roots, u0, u1, v0, v1, thr, cl, cr, dist = flat
    values = depth.values.astype(np.float32)
    bg = np.float32(model.features.bg_depth)
    if not return_probs and len(model.trees) == 3:
        return _predict_labels_3(values, roots, u0, u1, v0, v1, thr, cl, cr, dist, bg)
    labels, probs = _predict_kernel(values, roots, u0, u1, v0, v1, thr, cl, cr, dist, bg)
    if return_probs:
        return labels, probs
    return labels


# ---------------------------------------------------------------------------
# serialization ("GSRF" container, little-endian; layout in the README)
# ---------------------------------------------------------------------------


def save_forest(model: ForestModel, path) -> None:
    header = json.dumps(
        {
            "n_trees": len(model.trees),
            "offset_radius": model.features.offset_radius,
            "bg_depth": model.features.bg_depth,
            "metadata": model.metadata,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for tree in model.trees:
            fh.write(struct.pack("<I", tree.n_nodes))
            fh.write(tree.offset_u.astype("<f4").tobytes())
            fh.write(tree.offset_v.astype("<f4").tobytes())
            fh.write(tree.threshold.astype("<f4").tobytes())
            fh.write(tree.children.astype("<i4").tobytes())
            fh.write(tree.dist.astype("<f4").tobytes())


def load_forest(path) -> ForestModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a forest model file (bad magic)")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    pos = 12
    header = json.loads(raw[pos:pos + header_len].decode("utf-8"))
    pos += header_len
    trees = []
    for _ in range(header["n_trees"]):
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4

        def take(dtype, count, shape):
            nonlocal pos
            arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
            pos += arr.nbytes
            return arr

        offset_u = take("<f4", n * 2, (n, 2))
        offset_v = take("<f4", n * 2, (n, 2))
        threshold = take("<f4", n, (n,))
        children = take("<i4", n * 2, (n, 2))
        dist = take("<f4", n * 3, (n, 3))
        trees.append(Tree(offset_u, offset_v, threshold, children, dist))
    features = FeatureConfig(offset_radius=header["offset_radius"], bg_depth=header["bg_depth"])
    return ForestModel(trees=trees, features=features, metadata=header.get("metadata", {}))
