"""Metrics, augmentation, dataset filtering and the synthetic RGBD oracle.

The confusion matrix is corpus-accumulated (one 3x3 matrix over the whole test
set) before IoUs are derived, so every class keeps support even when single
frames miss a hand.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .imaging import (
    LEFT,
    RIGHT,
    ColorFrame,
    DepthFrame,
    DimensionMismatchError,
    FrameEntry,
    SequenceManifest,
    hsv_to_rgb_image,
    save_color,
    save_depth,
    save_label,
    save_manifest,
)

N_CLASSES = 3


def empty_confusion() -> np.ndarray:
    return np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)


def accumulate(cm: np.ndarray, gt: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Add per-pixel joint (gt, pred) counts; rows are ground truth."""
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise DimensionMismatchError(f"gt {gt.shape} vs pred {pred.shape}")
    joint = np.bincount(
        (gt.astype(np.int64) * N_CLASSES + pred.astype(np.int64)).ravel(),
        minlength=N_CLASSES * N_CLASSES,
    ).reshape(N_CLASSES, N_CLASSES)
    return np.asarray(cm, dtype=np.int64) + joint


@dataclass
class EvalReport:
    per_class_iou: list[Optional[float]]
    miou: float
    support: list[int]
    total_pixels: int
    confusion: list[list[int]]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        names = ("background", "left", "right")
        lines = [f"{'class':<12} {'IoU':>8} {'support':>10}"]
        for name, iou, sup in zip(names, self.per_class_iou, self.support):
            shown = f"{iou:.4f}" if iou is not None else "n/a"
            lines.append(f"{name:<12} {shown:>8} {sup:>10}")
        lines.append(f"{'mIoU':<12} {self.miou:>8.4f} {self.total_pixels:>10}")
        return "\n".join(lines)


def iou_report(cm: np.ndarray) -> EvalReport:
    """Per-class IoU = TP / (TP + FP + FN); mIoU averages supported classes."""
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ValueError("cannot evaluate an empty confusion matrix")
    ious: list[Optional[float]] = []
    vals = []
    for c in range(N_CLASSES):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        denom = tp + fp + fn
        if denom == 0:
            ious.append(None)
        else:
            iou = float(tp / denom)
            ious.append(iou)
            vals.append(iou)
    return EvalReport(
        per_class_iou=ious,
        miou=float(np.mean(vals)),
        support=[int(s) for s in cm.sum(axis=1)],
        total_pixels=total,
        confusion=cm.tolist(),
    )


# ---------------------------------------------------------------------------
# augmentation / normalization / weights
# ---------------------------------------------------------------------------

MAX_TRANSLATE = 0.2
MAX_LOG_SCALE = math.log(1.2)


@dataclass(frozen=True)
class AugmentSpec:
    """One concrete augmentation draw; seed records where it came from."""

    flip: bool = False
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        if abs(self.tx) > MAX_TRANSLATE + 1e-12 or abs(self.ty) > MAX_TRANSLATE + 1e-12:
            raise ValueError(f"translation must stay within +-{MAX_TRANSLATE} of the size")
        if abs(math.log(self.scale)) > MAX_LOG_SCALE + 1e-12:
            raise ValueError("scale must stay within +-20% (log scale)")


def sample_augment_spec(rng: np.random.Generator, seed: Optional[int] = None) -> AugmentSpec:
    return AugmentSpec(
        flip=bool(rng.integers(2)),
        tx=float(rng.uniform(-MAX_TRANSLATE, MAX_TRANSLATE)),
        ty=float(rng.uniform(-MAX_TRANSLATE, MAX_TRANSLATE)),
        scale=float(np.exp(rng.uniform(-MAX_LOG_SCALE, MAX_LOG_SCALE))),
        seed=seed,
    )


def _swap_hands(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[mask == LEFT] = RIGHT
    out[mask == RIGHT] = LEFT
    return out


def _nn_scale(raster: np.ndarray, scale: float) -> np.ndarray:
    h, w = raster.shape
    out = np.zeros_like(raster)
    ys = np.arange(h)
    xs = np.arange(w)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    src_y = np.floor(cy + (ys - cy) / scale + 0.5).astype(np.int64)
    src_x = np.floor(cx + (xs - cx) / scale + 0.5).astype(np.int64)
    oky = (src_y >= 0) & (src_y < h)
    okx = (src_x >= 0) & (src_x < w)
    out[np.ix_(oky, okx)] = raster[np.ix_(src_y[oky], src_x[okx])]
    return out


def _shift(raster: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(raster)
    h, w = raster.shape
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = raster[src_y, src_x]
    return out


def augment(depth: np.ndarray, mask: np.ndarray, spec: AugmentSpec) -> tuple[np.ndarray, np.ndarray]:
    """Apply flip, then nearest-neighbor scale about the center, then an
    integer-pixel translation; exposed regions read invalid depth/background.

    A horizontal flip mirrors both rasters and swaps the left/right labels.
    """
    depth = np.asarray(depth)
    mask = np.asarray(mask)
    if depth.shape != mask.shape:
        raise DimensionMismatchError(f"depth {depth.shape} vs mask {mask.shape}")
    if spec.flip:
        depth = depth[:, ::-1]
        mask = _swap_hands(mask[:, ::-1])
    else:
        depth = depth.copy()
        mask = mask.copy()
    if spec.scale != 1.0:
        depth = _nn_scale(depth, spec.scale)
        mask = _nn_scale(mask, spec.scale)
    dx = round(spec.tx * depth.shape[1])
    dy = round(spec.ty * depth.shape[0])
    if dx or dy:
        depth = _shift(depth, dx, dy)
        mask = _shift(mask, dx, dy)
    return depth, mask


def normalize_depth(depth: DepthFrame) -> np.ndarray:
    """Scale valid depths to unit mean; invalid pixels stay exactly 0."""
    values = depth.values.astype(np.float64)
    valid = values > 0
    if not valid.any():
        raise ValueError("cannot normalize a frame with no valid depth")
    mean = values[valid].mean()
    out = np.zeros_like(values)
    out[valid] = values[valid] / mean
    return out


def class_weights(masks: Iterable[np.ndarray]) -> np.ndarray:
    """Median-frequency balancing: weight_c = median(freq) / freq_c."""
    counts = np.zeros(N_CLASSES, dtype=np.int64)
    for mask in masks:
        counts += np.bincount(np.asarray(mask, dtype=np.int64).ravel(), minlength=N_CLASSES)
    if (counts == 0).any():
        missing = [i for i, c in enumerate(counts) if c == 0]
        raise ValueError(f"class(es) {missing} absent from the dataset")
    freq = counts / counts.sum()
    return np.median(freq) / freq


# ---------------------------------------------------------------------------
# review decisions and dataset filtering
# ---------------------------------------------------------------------------

VERDICTS = ("accept", "reject")


@dataclass(frozen=True)
class ReviewDecision:
    sequence_id: str
    start: int
    end: int  # inclusive
    verdict: str
    reviewer: str = ""
    timestamp: str = ""

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"decision range start {self.start} > end {self.end}")
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ReviewDecision":
        doc = json.loads(line)
        return cls(
            sequence_id=doc["sequence_id"],
            start=int(doc["start"]),
            end=int(doc["end"]),
            verdict=doc["verdict"],
            reviewer=doc.get("reviewer", ""),
            timestamp=doc.get("timestamp", ""),
        )


def load_decisions(path) -> list[ReviewDecision]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            out.append(ReviewDecision.from_json(line))
    return out


def append_decision(path, decision: ReviewDecision) -> None:
    """Durable append: the line is flushed and fsynced before returning."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(decision.to_json() + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def filter_dataset(manifest: SequenceManifest, decisions: Sequence[ReviewDecision]) -> SequenceManifest:
    """Drop every frame covered by a reject range; reject beats accept."""
    if not manifest.frames:
        return manifest
    max_index = manifest.frames[-1].index
    rejected: set[int] = set()
    for d in decisions:
        if d.sequence_id != manifest.sequence_id:
            continue
        if d.start < 0 or d.end > max_index:
            raise ValueError(
                f"decision [{d.start}, {d.end}] outside sequence {manifest.sequence_id!r} (max index {max_index})"
            )
        if d.verdict == "reject":
            rejected.update(range(d.start, d.end + 1))
    kept = [f for f in manifest.frames if f.index not in rejected]
    return SequenceManifest(
        sequence_id=manifest.sequence_id,
        frames=kept,
        subject_id=manifest.subject_id,
        camera=manifest.camera,
        root=manifest.root,
    )


# ---------------------------------------------------------------------------
# synthetic RGBD scenes (the testing oracle)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    width: int = 640
    height: int = 480
    color_noise: float = 5.0
    depth_noise: float = 4.0  # millimeters
    invalid_prob: float = 0.0
    # hue bands match the default glove thresholds with headroom for noise
    left_hue: tuple[float, float] = (6.0, 12.0)
    right_hue: tuple[float, float] = (36.0, 62.0)
    left_depth: tuple[float, float] = (450.0, 650.0)
    right_depth: tuple[float, float] = (750.0, 950.0)
    background_depth: tuple[float, float] = (1400.0, 2400.0)


def synth_scene(seed: int, params: SynthParams = SynthParams()) -> tuple[DepthFrame, ColorFrame, np.ndarray]:
    """Render two elliptical "gloves" over a textured background.

    Left is the red-orange, nearer, rounder blob; right is the green-yellow,
    farther, elongated one (the depth bands and shapes keep the hands
    depth-distinguishable). The label mask is the exact ellipse support, so it
    stays ground truth at any noise level. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    h, w = params.height, params.width

    # background: coarse low-saturation color texture + sloped noisy depth
    cell = max(4, min(h, w) // 12)
    gh, gw = h // cell + 2, w // cell + 2
    base_v = rng.uniform(60, 150, size=(gh, gw))
    base_h = rng.uniform(90, 150, size=(gh, gw))
    base_s = rng.uniform(0, 25, size=(gh, gw))
    yy, xx = np.mgrid[0:h, 0:w]
    cy_idx, cx_idx = yy // cell, xx // cell
    hsv = np.stack([base_h[cy_idx, cx_idx], base_s[cy_idx, cx_idx], base_v[cy_idx, cx_idx]], axis=-1)

    bg_near, bg_far = params.background_depth
    slope = rng.uniform(-0.15, 0.15)
    depth = rng.uniform(bg_near, bg_far) + slope * (yy - h / 2) + rng.uniform(-40, 40, size=(gh, gw))[cy_idx, cx_idx]
    depth = np.clip(depth, bg_near, bg_far + 200)

    mask = np.zeros((h, w), dtype=np.uint8)

    def add_glove(label, cx_frac, hue_band, depth_band, elong):
        rx = rng.uniform(0.09, 0.13) * w
        ry = rx * rng.uniform(*elong)
        cx = cx_frac * w + rng.uniform(-0.06, 0.06) * w
        cy = rng.uniform(0.35, 0.65) * h
        q = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
        inside = q < 1.0
        mask[inside] = label
        d0 = rng.uniform(*depth_band)
        dome = rng.uniform(30, 70)
        depth[inside] = d0 - dome * np.sqrt(np.clip(1.0 - q[inside], 0.0, 1.0))
        hue = rng.uniform(*hue_band)
        hsv[inside, 0] = hue + rng.normal(0, 0.8, size=int(inside.sum()))
        hsv[inside, 1] = rng.uniform(185, 245) if label == LEFT else rng.uniform(110, 185)
        hsv[inside, 2] = rng.uniform(150, 220)

    add_glove(LEFT, 0.27, params.left_hue, params.left_depth, (0.85, 1.15))
    add_glove(RIGHT, 0.73, params.right_hue, params.right_depth, (1.3, 1.8))

    rgb = hsv_to_rgb_image(np.clip(hsv, 0, [180, 255, 255]))
    if params.color_noise > 0:
        rgb = rgb + rng.normal(0, params.color_noise, size=rgb.shape)
    color = ColorFrame(np.clip(np.rint(rgb), 0, 255).astype(np.uint8))

    if params.depth_noise > 0:
        depth = depth + rng.normal(0, params.depth_noise, size=depth.shape)
    if params.invalid_prob > 0:
        depth[rng.random(depth.shape) < params.invalid_prob] = 0
    depth_frame = DepthFrame(np.clip(np.rint(depth), 0, 65535).astype(np.uint16))
    return depth_frame, color, mask


def synth_corpus(
    out_dir,
    count: int,
    seed: int,
    params: SynthParams = SynthParams(),
    sequence_id: str = "synth",
) -> SequenceManifest:
    """Write a synthetic sequence (depth/color/label PNGs plus manifest.json)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        depth, color, mask = synth_scene(seed + i, params)
        names = (f"{i:05d}_depth.png", f"{i:05d}_color.png", f"{i:05d}_label.png")
        save_depth(depth, out_dir / names[0])
        save_color(color, out_dir / names[1])
        save_label(mask, out_dir / names[2])
        entries.append(FrameEntry(index=i, depth_path=names[0], color_path=names[1], label_path=names[2]))
    manifest = SequenceManifest(sequence_id=sequence_id, frames=entries, subject_id="synthetic", camera="synthetic", root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
