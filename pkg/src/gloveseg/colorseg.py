"""Stage 1: rough per-hand masks via HSV thresholding and GrabCut seed rectangles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.ndimage import label as cc_label

from .imaging import LEFT, RIGHT, ColorFrame, gaussian_blur_array, rgb_to_hsv_image


class CalibrationError(ValueError):
    """No scribble pixels were available for a glove."""


class SeedRect(NamedTuple):
    x0: int
    y0: int
    w: int
    h: int


@dataclass(frozen=True)
class HsvRange:
    """Inclusive [lo, hi] box in HSV space, tagged with the hand it selects."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    label: int = LEFT

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"HsvRange lo must be <= hi component-wise: {self.lo} vs {self.hi}")
        if self.label not in (LEFT, RIGHT):
            raise ValueError(f"range label must be LEFT or RIGHT, got {self.label}")


# Glove calibration used for the recordings this pipeline was built around:
# red-orange for the left hand, green-yellow for the right. The label<->range
# mapping is configuration, not a constant.
DEFAULT_LEFT_RANGE = HsvRange((3, 160, 100), (15, 255, 255), label=LEFT)
DEFAULT_RIGHT_RANGE = HsvRange((28, 35, 100), (70, 200, 255), label=RIGHT)


def threshold_hsv_prepared(hsv: np.ndarray, rng: HsvRange) -> np.ndarray:
    """Threshold an already blurred+converted HSV raster; boundaries inclusive."""
    lo = np.asarray(rng.lo, dtype=np.float64)
    hi = np.asarray(rng.hi, dtype=np.float64)
    return np.all((hsv >= lo) & (hsv <= hi), axis=-1)


def blurred_hsv(frame: ColorFrame, sigma: float) -> np.ndarray:
    """Smooth the color frame and convert to HSV; shared by both hands' thresholds."""
    return rgb_to_hsv_image(gaussian_blur_array(frame.pixels, sigma))


def threshold_hsv(frame: ColorFrame, rng: HsvRange, sigma: float) -> np.ndarray:
    """Boolean rough mask: blurred-image HSV inside [lo, hi] on all channels."""
    return threshold_hsv_prepared(blurred_hsv(frame, sigma), rng)


def remove_small_components(mask: np.ndarray, min_area: int = 64) -> np.ndarray:
    """Drop 8-connected components smaller than min_area pixels (sensor speckle)."""
    if min_area <= 1 or not mask.any():
        return mask.copy()
    labels, count = cc_label(mask, structure=np.ones((3, 3), dtype=np.int8))
    if count == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


def seed_rect(mask: np.ndarray) -> Optional[SeedRect]:
    """Tight bounding box of the mask, grown 10% per axis about its center.

    The enlarged interval endpoints are rounded outward (floor/ceil) and the
    box is clamped to the image; an empty mask yields None.
    """
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    h_img, w_img = mask.shape
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    # +10% per axis about the center == pushing each endpoint out by w/20
    grow_x = (x1 - x0) / 20.0
    grow_y = (y1 - y0) / 20.0
    gx0 = max(0, math.floor(x0 - grow_x))
    gx1 = min(w_img, math.ceil(x1 + grow_x))
    gy0 = max(0, math.floor(y0 - grow_y))
    gy1 = min(h_img, math.ceil(y1 + grow_y))
    return SeedRect(gx0, gy0, max(1, gx1 - gx0), max(1, gy1 - gy0))


def calibrate_ranges(
    frames: Sequence[ColorFrame],
    scribbles: Sequence[np.ndarray],
    lo_pct: float = 2.0,
    hi_pct: float = 98.0,
) -> tuple[HsvRange, HsvRange]:
    """Derive per-hand HSV ranges from scribbled glove pixels.

    scribbles are label-format masks ({0,1,2}) aligned with the frames; the
    returned ranges are the [p2, p98] percentile envelope per channel over the
    pooled scribble pixels of each hand.
    """
    if len(frames) != len(scribbles):
        raise ValueError("one scribble mask per frame is required")
    pools: dict[int, list[np.ndarray]] = {LEFT: [], RIGHT: []}
    for frame, scribble in zip(frames, scribbles):
        hsv = rgb_to_hsv_image(frame.pixels)
        for hand in (LEFT, RIGHT):
            sel = scribble == hand
            if sel.any():
                pools[hand].append(hsv[sel])
    ranges = {}
    for hand in (LEFT, RIGHT):
        if not pools[hand]:
            raise CalibrationError(f"no scribble pixels for hand label {hand}")
        pixels = np.concatenate(pools[hand], axis=0)
        lo = np.percentile(pixels, lo_pct, axis=0)
        hi = np.percentile(pixels, hi_pct, axis=0)
        ranges[hand] = HsvRange(tuple(lo.tolist()), tuple(hi.tolist()), label=hand)
    return ranges[LEFT], ranges[RIGHT]
