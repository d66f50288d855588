"""Pixel containers, color-space conversions, Gaussian smoothing and dataset I/O.

Conventions shared by every downstream stage:
  * color rasters are (H, W, 3) uint8 RGB,
  * depth rasters are (H, W) uint16 millimeters, 0 = no measurement,
  * label rasters are (H, W) uint8 with values {0 background, 1 left, 2 right},
  * HSV uses H in [0, 180] (half degrees) and S, V in [0, 255].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

BACKGROUND = 0
LEFT = 1
RIGHT = 2
LABEL_VALUES = (BACKGROUND, LEFT, RIGHT)

# sRGB -> XYZ (D65, linear-light). The white point is the matrix acting on
# (1,1,1) so that pure white lands exactly on (100, 0, 0) in Lab.
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
WHITE_POINT = SRGB_TO_XYZ @ np.ones(3)


class DimensionMismatchError(ValueError):
    """Depth and color rasters of one frame differ in size."""


class MalformedImageError(ValueError):
    """An on-disk image does not match the documented format."""


class MalformedLabelError(MalformedImageError):
    """A label image contains values outside {0, 1, 2}."""


class ManifestError(ValueError):
    """A sequence manifest violates its schema."""


class HsvPixel(NamedTuple):
    h: float
    s: float
    v: float


@dataclass(frozen=True)
class ColorFrame:
    """8-bit RGB raster, row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise MalformedImageError(f"color frame must be (H, W, 3) uint8, got {p.shape} {p.dtype}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise MalformedImageError("color frame must be at least 1x1")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DepthFrame:
    """16-bit depth raster in millimeters; 0 marks an invalid measurement."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.dtype != np.uint16:
            raise MalformedImageError(f"depth frame must be (H, W) uint16, got {v.shape} {v.dtype}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise MalformedImageError("depth frame must be at least 1x1")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


class FrameEntry(NamedTuple):
    index: int
    depth_path: str
    color_path: str
    label_path: Optional[str] = None


@dataclass
class SequenceManifest:
    """Ordered frame listing for one recorded sequence; paths are relative to root."""

    sequence_id: str
    frames: list[FrameEntry] = field(default_factory=list)
    subject_id: str = ""
    camera: str = ""
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        indices = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ManifestError(f"frame indices must be strictly increasing in {self.sequence_id!r}")

    def resolve(self, rel: str) -> Path:
        return Path(self.root) / rel

    def __len__(self) -> int:
        return len(self.frames)


# ---------------------------------------------------------------------------
# color space conversions
# ---------------------------------------------------------------------------

def rgb_to_hsv_image(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV over a (..., 3) raster (float or uint8 input).

    Hue is on [0, 180] so the whole range fits an 8-bit channel; S and V are
    on [0, 255].
    """
    arr = np.asarray(rgb, dtype=np.float64)
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    v = maxc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc > 0, 255.0 * delta / maxc, 0.0)
        hr = np.where(delta > 0, (g - b) / delta, 0.0)
        hg = np.where(delta > 0, 2.0 + (b - r) / delta, 0.0)
        hb = np.where(delta > 0, 4.0 + (r - g) / delta, 0.0)
    h = np.where(maxc == r, hr, np.where(maxc == g, hg, hb))
    h = np.where(delta > 0, h, 0.0)
    h = (h * 30.0) % 180.0  # 60 deg per sector, halved to the [0,180] scale
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb_image(hsv: np.ndarray) -> np.ndarray:
    """Inverse of rgb_to_hsv_image; returns float RGB on [0, 255]."""
    arr = np.asarray(hsv, dtype=np.float64)
    h = (arr[..., 0] * 2.0) / 60.0  # back to sector units
    s = arr[..., 1] / 255.0
    v = arr[..., 2]
    i = np.floor(h).astype(np.int64) % 6
    f = h - np.floor(h)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def rgb_to_hsv(r: int, g: int, b: int) -> HsvPixel:
    h, s, v = rgb_to_hsv_image(np.array([r, g, b], dtype=np.float64))
    return HsvPixel(float(h), float(s), float(v))


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def srgb_to_xyz_image(rgb: np.ndarray) -> np.ndarray:
    """sRGB (0..255, gamma-encoded) -> XYZ tristimulus under D65."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = _srgb_to_linear(c)
    return lin @ SRGB_TO_XYZ.T


def rgb_to_xyz(r: int, g: int, b: int) -> tuple[float, float, float]:
    x, y, z = srgb_to_xyz_image(np.array([r, g, b], dtype=np.float64))
    return float(x), float(y), float(z)


def xyz_to_lab_image(xyz: np.ndarray) -> np.ndarray:
    """XYZ -> CIE L*a*b* relative to the D65 white of SRGB_TO_XYZ."""
    ratio = np.asarray(xyz, dtype=np.float64) / WHITE_POINT
    eps = (6.0 / 29.0) ** 3
    f = np.where(ratio > eps, np.cbrt(ratio), ratio / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    l = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return np.stack([l, a, b], axis=-1)


def xyz_to_lab(x: float, y: float, z: float) -> tuple[float, float, float]:
    l, a, b = xyz_to_lab_image(np.array([x, y, z], dtype=np.float64))
    return float(l), float(a), float(b)


# ---------------------------------------------------------------------------
# Gaussian smoothing
# ---------------------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Unit-sum Gaussian taps truncated at radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def gaussian_blur_array(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian on a float (H, W) or (H, W, C) raster, mirrored borders."""
    k = gaussian_kernel(sigma)
    out = np.asarray(img, dtype=np.float64)
    out = correlate1d(out, k, axis=0, mode="mirror")
    out = correlate1d(out, k, axis=1, mode="mirror")
    return out


def gaussian_blur(frame: ColorFrame, sigma: float) -> ColorFrame:
    """Per-channel Gaussian smoothing; output has the same dimensions."""
    blurred = gaussian_blur_array(frame.pixels, sigma)
    return ColorFrame(np.clip(np.rint(blurred), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------

def load_depth(path) -> DepthFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"depth file not found: {path}")
    arr = np.asarray(Image.open(path))
    if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
        raise MalformedImageError(f"{path}: expected single-channel integer image, got {arr.dtype} {arr.shape}")
    if arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max:
        raise MalformedImageError(f"{path}: depth values outside the 16-bit range")
    return DepthFrame(arr.astype(np.uint16))


def save_depth(depth: DepthFrame, path) -> None:
    Image.fromarray(depth.values).save(Path(path), format="PNG")


def load_color(path) -> ColorFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"color file not found: {path}")
    img = Image.open(path)
    if img.mode != "RGB":
        raise MalformedImageError(f"{path}: expected an 8-bit RGB image, got mode {img.mode!r}")
    return ColorFrame(np.asarray(img, dtype=np.uint8))


def save_color(frame: ColorFrame, path) -> None:
    Image.fromarray(frame.pixels, mode="RGB").save(Path(path), format="PNG")


def validate_label(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise MalformedLabelError(f"label mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, LABEL_VALUES).all():
        bad = sorted(set(np.unique(mask)) - set(LABEL_VALUES))
        raise MalformedLabelError(f"label values outside {{0,1,2}}: {bad}")
    return mask.astype(np.uint8)


def load_label(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label file not found: {path}")
    img = Image.open(path)
    if img.mode != "L":
        raise MalformedLabelError(f"{path}: expected an 8-bit single-channel image, got mode {img.mode!r}")
    return validate_label(np.asarray(img))


def save_label(mask: np.ndarray, path) -> None:
    mask = validate_label(mask)
    Image.fromarray(mask, mode="L").save(Path(path), format="PNG")


def load_frame_pair(manifest: SequenceManifest, entry: FrameEntry) -> tuple[DepthFrame, ColorFrame]:
    """Load one (depth, color) pair, enforcing registered (equal) dimensions."""
    depth = load_depth(manifest.resolve(entry.depth_path))
    color = load_color(manifest.resolve(entry.color_path))
    if (depth.height, depth.width) != (color.height, color.width):
        raise DimensionMismatchError(
            f"frame {entry.index}: depth {depth.width}x{depth.height} vs color {color.width}x{color.height}"
        )
    return depth, color


def load_manifest(path, check_files: bool = True) -> SequenceManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: not valid JSON ({e})") from e
    for key in ("sequence_id", "frames"):
        if key not in doc:
            raise ManifestError(f"{path}: missing required key {key!r}")
    frames = []
    for raw in doc["frames"]:
        frames.append(
            FrameEntry(
                index=int(raw["index"]),
                depth_path=raw["depth"],
                color_path=raw["color"],
                label_path=raw.get("label"),
            )
        )
    manifest = SequenceManifest(
        sequence_id=doc["sequence_id"],
        frames=frames,
        subject_id=doc.get("subject_id", ""),
        camera=doc.get("camera", ""),
        root=path.parent,
    )
    if check_files:
        for entry in manifest.frames:
            for rel in (entry.depth_path, entry.color_path, entry.label_path):
                if rel is not None and not manifest.resolve(rel).exists():
                    raise ManifestError(f"{path}: missing file referenced by frame {entry.index}: {rel}")
    return manifest


def save_manifest(manifest: SequenceManifest, path) -> None:
    doc = {
        "sequence_id": manifest.sequence_id,
        "subject_id": manifest.subject_id,
        "camera": manifest.camera,
        "frames": [
            {"index": f.index, "depth": f.depth_path, "color": f.color_path, "label": f.label_path}
            for f in manifest.frames
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
