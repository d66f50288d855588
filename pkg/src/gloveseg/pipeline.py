"""The three-stage annotation pipeline and batch sequence processing.

Per frame: HSV threshold on the smoothed image (stage 1), per-hand GrabCut
seeded by the enlarged bounding rectangles (stage 2), per-image linear SVM
pruning (stage 3). Batch annotation is skip-and-log: one bad frame never
aborts a run.
"""

from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .colorseg import (
    DEFAULT_LEFT_RANGE,
    DEFAULT_RIGHT_RANGE,
    HsvRange,
    blurred_hsv,
    remove_small_components,
    seed_rect,
    threshold_hsv_prepared,
)
from .grabcut import GrabCutConfig, grabcut_refine_full, resolve_overlap
from .imaging import (
    LEFT,
    RIGHT,
    ColorFrame,
    FrameEntry,
    SequenceManifest,
    load_frame_pair,
    save_label,
    save_manifest,
)
from .svmrefine import refine_labels


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the three-stage pipeline, serializable to one JSON file."""

    left_range: HsvRange = DEFAULT_LEFT_RANGE
    right_range: HsvRange = DEFAULT_RIGHT_RANGE
    blur_sigma: float = 30.0
    min_component_area: int = 64
    grabcut: GrabCutConfig = field(default_factory=GrabCutConfig)
    svm_c: float = 900.0
    svm_neg_cap: Optional[int] = 50_000
    svm_pos_cap: Optional[int] = 50_000
    svm_tol: float = 1e-4
    svm_max_iter: int = 50_000
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "left_range": {"lo": list(self.left_range.lo), "hi": list(self.left_range.hi)},
            "right_range": {"lo": list(self.right_range.lo), "hi": list(self.right_range.hi)},
            "blur_sigma": self.blur_sigma,
            "min_component_area": self.min_component_area,
            "grabcut": {
                "components": self.grabcut.components,
                "gamma": self.grabcut.gamma,
                "iterations": self.grabcut.iterations,
                "cov_reg": self.grabcut.cov_reg,
                "em_iters": self.grabcut.em_iters,
                "em_refit_iters": self.grabcut.em_refit_iters,
                "gmm_sample_cap": self.grabcut.gmm_sample_cap,
            },
            "svm": {
                "c": self.svm_c,
                "neg_cap": self.svm_neg_cap,
                "pos_cap": self.svm_pos_cap,
                "tol": self.svm_tol,
                "max_iter": self.svm_max_iter,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        base = cls()
        left = doc.get("left_range")
        right = doc.get("right_range")
        gc = doc.get("grabcut", {})
        svm = doc.get("svm", {})
        return cls(
            left_range=HsvRange(tuple(left["lo"]), tuple(left["hi"]), label=LEFT) if left else base.left_range,
            right_range=HsvRange(tuple(right["lo"]), tuple(right["hi"]), label=RIGHT) if right else base.right_range,
            blur_sigma=float(doc.get("blur_sigma", base.blur_sigma)),
            min_component_area=int(doc.get("min_component_area", base.min_component_area)),
            grabcut=GrabCutConfig(
                components=int(gc.get("components", base.grabcut.components)),
                gamma=float(gc.get("gamma", base.grabcut.gamma)),
                iterations=int(gc.get("iterations", base.grabcut.iterations)),
                cov_reg=float(gc.get("cov_reg", base.grabcut.cov_reg)),
                em_iters=int(gc.get("em_iters", base.grabcut.em_iters)),
                em_refit_iters=int(gc.get("em_refit_iters", base.grabcut.em_refit_iters)),
                gmm_sample_cap=gc.get("gmm_sample_cap", base.grabcut.gmm_sample_cap),
            ),
            svm_c=float(svm.get("c", base.svm_c)),
            svm_neg_cap=svm.get("neg_cap", base.svm_neg_cap),
            svm_pos_cap=svm.get("pos_cap", base.svm_pos_cap),
            svm_tol=float(svm.get("tol", base.svm_tol)),
            svm_max_iter=int(svm.get("max_iter", base.svm_max_iter)),
            seed=int(doc.get("seed", base.seed)),
        )


def load_config(path) -> PipelineConfig:
    return PipelineConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


def _hand_seed(base_seed: int, frame_index: int, hand: int) -> int:
    return int(np.random.SeedSequence([base_seed, frame_index, hand]).generate_state(1)[0])


@dataclass
class AnnotationResult:
    label: np.ndarray
    stage1: np.ndarray  # label mask after thresholding + speckle cleanup
    stage2: np.ndarray  # label mask after GrabCut + overlap resolution
    notes: list[str] = field(default_factory=list)

    @property
    def hands_found(self) -> dict[str, bool]:
        return {"left": bool((self.label == LEFT).any()), "right": bool((self.label == RIGHT).any())}


def _to_label(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    out = np.zeros(left.shape, dtype=np.uint8)
    out[right] = RIGHT
    out[left] = LEFT
    return out


def annotate_frame(color: ColorFrame, config: PipelineConfig, frame_index: int = 0) -> AnnotationResult:
    """Run all three stages on one color frame; deterministic per config seed."""
    notes: list[str] = []
    hsv = blurred_hsv(color, config.blur_sigma)
    rough = {}
    rects = {}
    for hand, rng_cfg in ((LEFT, config.left_range), (RIGHT, config.right_range)):
        mask = threshold_hsv_prepared(hsv, rng_cfg)
        mask = remove_small_components(mask, config.min_component_area)
        rough[hand] = mask
        rects[hand] = seed_rect(mask)
        if rects[hand] is None:
            notes.append(f"no pixels matched the {'left' if hand == LEFT else 'right'} range")
    stage1 = _to_label(rough[LEFT], rough[RIGHT])

    refined = {}
    models = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for hand in (LEFT, RIGHT):
            if rects[hand] is None:
                refined[hand] = np.zeros_like(rough[hand])
                models[hand] = None
                continue
            result = grabcut_refine_full(
                color, rough[hand], rects[hand], config.grabcut,
                seed=_hand_seed(config.seed, frame_index, hand),
            )
            refined[hand] = result.mask
            models[hand] = result.fg_gmm
    left2, right2 = resolve_overlap(
        color.pixels.astype(np.float64), refined[LEFT], refined[RIGHT], models[LEFT], models[RIGHT]
    )
    stage2 = _to_label(left2, right2)

    label = refine_labels(
        color, left2, right2,
        c=config.svm_c, neg_cap=config.svm_neg_cap, pos_cap=config.svm_pos_cap,
        seed=_hand_seed(config.seed, frame_index, 3), tol=config.svm_tol, max_iter=config.svm_max_iter,
    )
    return AnnotationResult(label=label, stage1=stage1, stage2=stage2, notes=notes)


# ---------------------------------------------------------------------------
# batch annotation
# ---------------------------------------------------------------------------


def _annotate_one(args) -> dict:
    manifest, entry, config, out_dir, stage_masks, force = args
    out_dir = Path(out_dir)
    label_path = out_dir / f"{entry.index:05d}_label.png"
    record = {"index": entry.index, "label": label_path.name, "status": "ok", "notes": []}
    if label_path.exists() and not force:
        record["status"] = "skipped"
        record["notes"] = ["label exists; rerun with force to overwrite"]
        return record
    try:
        depth, color = load_frame_pair(manifest, entry)
        result = annotate_frame(color, config, frame_index=entry.index)
        save_label(result.label, label_path)
        if stage_masks:
            save_label(result.stage1, out_dir / f"{entry.index:05d}_stage1.png")
            save_label(result.stage2, out_dir / f"{entry.index:05d}_stage2.png")
        record["notes"] = result.notes
        record["hands"] = result.hands_found
    except Exception as exc:  # skip-and-log: a bad frame must not kill the run
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def annotate_sequence(
    manifest: SequenceManifest,
    config: PipelineConfig,
    out_dir,
    stage_masks: bool = False,
    force: bool = False,
    jobs: int = 1,
) -> tuple[SequenceManifest, dict]:
    """Annotate every frame, writing one label PNG per frame plus a labeled
    manifest and a diagnostics document under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(manifest, e, config, str(out_dir), stage_masks, force) for e in manifest.frames]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_annotate_one, tasks))
    else:
        records = [_annotate_one(t) for t in tasks]

    records.sort(key=lambda r: r["index"])
    by_index = {r["index"]: r for r in records}
    entries = []
    for e in manifest.frames:
        rec = by_index[e.index]
        label_rel = rec["label"] if rec["status"] in ("ok", "skipped") else None
        depth_rel = os.path.relpath(manifest.resolve(e.depth_path), out_dir)
        color_rel = os.path.relpath(manifest.resolve(e.color_path), out_dir)
        entries.append(FrameEntry(e.index, depth_rel, color_rel, label_rel))
    labeled = SequenceManifest(
        sequence_id=manifest.sequence_id,
        frames=entries,
        subject_id=manifest.subject_id,
        camera=manifest.camera,
        root=out_dir,
    )
    save_manifest(labeled, out_dir / "manifest.json")

    counts = {
        "ok": sum(r["status"] == "ok" for r in records),
        "failed": sum(r["status"] == "failed" for r in records),
        "skipped": sum(r["status"] == "skipped" for r in records),
    }
    diagnostics = {"sequence_id": manifest.sequence_id, "counts": counts, "frames": records, "config": config.to_dict()}
    (out_dir / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
    return labeled, diagnostics
