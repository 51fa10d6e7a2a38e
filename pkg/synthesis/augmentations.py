"""
synthesis/augmentations.py
==========================
Seedable image transforms.

Two groups:
  * crop transforms used right before pasting an object (rotation, scaling,
    low-probability blur, CLAHE), acting on an ObjectCrop's patch and mask
    together;
  * the sequential online pipeline: CoarseDropout, PixelDropout, Scale,
    Rotate (spatial level), then Blur, MedianBlur, ToGray, CLAHE (pixel
    level), each gated by its own probability.

Nothing here touches a global RNG; randomness always comes from an RngStream.
Dropout transforms leave boxes untouched, the pixels they hide are assumed not
to change the object extents.
"""

from __future__ import annotations

import math
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from raster.geometry import BBox
from data_collector.records import Annotation, ObjectCrop
from synthesis.config import AugmentationSpec
from synthesis.rng import RngStream

logger = logging.getLogger(__name__)

SPATIAL_KINDS = ("coarse_dropout", "pixel_dropout", "scale", "rotate")
PIXEL_KINDS = ("blur", "median_blur", "to_gray", "clahe")
DP_ORDER = SPATIAL_KINDS + PIXEL_KINDS


# ===========================================================================
#  Crop transforms
# ===========================================================================

def rotate_crop(crop: ObjectCrop, angle: float) -> ObjectCrop:
    """
    Rotate patch and mask by angle degrees (counter-clockwise) about the patch
    center on an expanded canvas, then re-tighten. Right angles are exact
    pixel permutations.
    """
    angle = float(angle) % 360.0
    if angle == 0.0:
        return crop
    if angle % 90.0 == 0.0:
        k = int(angle // 90)
        return crop.with_pixels(np.ascontiguousarray(np.rot90(crop.patch, k)),
                                np.ascontiguousarray(np.rot90(crop.mask, k)))

    h, w = crop.mask.shape
    rad = math.radians(angle)
    cos_v, sin_v = abs(math.cos(rad)), abs(math.sin(rad))
    new_w = int(math.ceil(w * cos_v + h * sin_v))
    new_h = int(math.ceil(w * sin_v + h * cos_v))

    matrix = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle, 1.0)
    matrix[0, 2] += (new_w - w) / 2.0
    matrix[1, 2] += (new_h - h) / 2.0

    patch = cv2.warpAffine(crop.patch, matrix, (new_w, new_h), flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_CONSTANT, borderValue=(0, 0, 0))
    mask = cv2.warpAffine(crop.mask.astype(np.uint8), matrix, (new_w, new_h), flags=cv2.INTER_NEAREST,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0).astype(bool)
    assert mask.any(), f"rotation by {angle} emptied crop {crop.source_id}"
    return crop.with_pixels(patch, mask)


def resize_crop(crop: ObjectCrop, width: int, height: int) -> ObjectCrop:
    if width < 1 or height < 1:
        raise ValueError(f"Crop {crop.source_id}: degenerate size {width}x{height}")
    if (width, height) == (crop.width, crop.height):
        return crop
    shrinking = width * height < crop.width * crop.height
    patch = cv2.resize(crop.patch, (width, height),
                       interpolation=cv2.INTER_AREA if shrinking else cv2.INTER_LINEAR)
    mask = cv2.resize(crop.mask.astype(np.uint8), (width, height), interpolation=cv2.INTER_NEAREST).astype(bool)
    if not mask.any():
        raise ValueError(f"Crop {crop.source_id}: mask vanished when resized to {width}x{height}")
    return crop.with_pixels(patch, mask)


def scale_crop(crop: ObjectCrop, factor: float) -> ObjectCrop:
    if factor <= 0:
        raise ValueError(f"Scale factor must be positive, got {factor}")
    if factor == 1.0:
        return crop
    return resize_crop(crop, int(round(crop.width * factor)), int(round(crop.height * factor)))


def paste_augment(crop: ObjectCrop, spec: AugmentationSpec, rng: RngStream) -> ObjectCrop:
    """Rotation, scaling, low-probability blur and CLAHE, in that order."""
    # Fixed draw count per call keeps the stream aligned whatever fires
    angle = rng.uniform(*spec.paste_rotation_range)
    factor = rng.uniform(*spec.paste_scale_range)
    blur_draw, clahe_draw = rng.random(), rng.random()
    kernel = rng.choice(spec.paste_blur_kernels)

    crop = rotate_crop(crop, angle)
    crop = scale_crop(crop, factor)
    patch = crop.patch
    if blur_draw < spec.paste_blur_probability:
        patch = cv2.GaussianBlur(patch, (kernel, kernel), 0)
    if clahe_draw < spec.paste_clahe_probability:
        patch = clahe(patch, spec.clahe_clip_limit, spec.clahe_tile_grid, spec.clahe_range)
    if patch is crop.patch:
        return crop
    return ObjectCrop(patch, crop.mask, crop.class_label, crop.source_id, crop.origin)


# ===========================================================================
#  CLAHE
# ===========================================================================

def _clahe_gray(gray: np.ndarray, clip_limit: float, tile_grid: Tuple[int, int], output_range: str) -> np.ndarray:
    height, width = gray.shape
    rows, cols = int(tile_grid[0]), int(tile_grid[1])
    tile_h, tile_w = math.ceil(height / rows), math.ceil(width / cols)
    padded = np.pad(gray, ((0, rows * tile_h - height), (0, cols * tile_w - width)), mode="symmetric")

    # Per-tile 256-bin histograms
    tiles = padded.reshape(rows, tile_h, cols, tile_w).transpose(0, 2, 1, 3).reshape(rows * cols, -1)
    offsets = (np.arange(rows * cols, dtype=np.int64) * 256)[:, None]
    hist = np.bincount((tiles.astype(np.int64) + offsets).ravel(), minlength=rows * cols * 256)
    hist = hist.reshape(rows, cols, 256).astype(np.float64)

    n = tile_h * tile_w
    limit = max(1.0, clip_limit * n / 256.0)
    clipped = np.minimum(hist, limit)
    excess = (hist - clipped).sum(axis=-1, keepdims=True)
    cdf = np.cumsum(clipped + excess / 256.0, axis=-1) / n

    if output_range == "original":
        lo, hi = float(gray.min()), float(gray.max())
    else:
        lo, hi = 0.0, 255.0
    lut = lo + np.clip(cdf, 0.0, 1.0) * (hi - lo)

    # Bilinear interpolation between the mappings of the four nearest tile centers
    fy = (np.arange(height) + 0.5) / tile_h - 0.5
    fx = (np.arange(width) + 0.5) / tile_w - 0.5
    y0 = np.clip(np.floor(fy).astype(int), 0, rows - 1)
    x0 = np.clip(np.floor(fx).astype(int), 0, cols - 1)
    y1, x1 = np.minimum(y0 + 1, rows - 1), np.minimum(x0 + 1, cols - 1)
    wy = np.clip(fy - y0, 0.0, 1.0)[:, None]
    wx = np.clip(fx - x0, 0.0, 1.0)[None, :]

    v = gray.astype(np.intp)
    top = lut[y0[:, None], x0[None, :], v] * (1 - wx) + lut[y0[:, None], x1[None, :], v] * wx
    bottom = lut[y1[:, None], x0[None, :], v] * (1 - wx) + lut[y1[:, None], x1[None, :], v] * wx
    out = top * (1 - wy) + bottom * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def clahe(img: np.ndarray, clip_limit: float = 2.0, tile_grid: Sequence[int] = (8, 8),
          output_range: str = "original") -> np.ndarray:
    """
    Contrast-limited adaptive histogram equalization. Color images are
    equalized on their luminance; the per-pixel luminance change is added
    back to every channel.
    """
    if img.ndim == 2:
        return _clahe_gray(img, clip_limit, tuple(tile_grid), output_range)
    gray = cv2.cvtColor(img, cv2.COLOR_RGB2GRAY)
    eq = _clahe_gray(gray, clip_limit, tuple(tile_grid), output_range)
    delta = eq.astype(np.int16) - gray.astype(np.int16)
    return np.clip(img.astype(np.int16) + delta[..., None], 0, 255).astype(np.uint8)


# ===========================================================================
#  Pixel-level transforms
# ===========================================================================

def to_gray(img: np.ndarray) -> np.ndarray:
    gray = cv2.cvtColor(img, cv2.COLOR_RGB2GRAY)
    return np.repeat(gray[..., None], 3, axis=2)


def pixel_transform(img: np.ndarray, kind: str, params: Optional[Dict] = None) -> np.ndarray:
    params = params or {}
    if kind == "blur":
        k = int(params.get("ksize", 3))
        return img.copy() if k <= 1 else cv2.blur(img, (k, k))
    if kind == "median_blur":
        k = int(params.get("ksize", 3))
        if k % 2 == 0:
            raise ValueError(f"Median kernel must be odd, got {k}")
        return img.copy() if k <= 1 else cv2.medianBlur(img, k)
    if kind == "to_gray":
        return to_gray(img)
    if kind == "clahe":
        return clahe(img, params.get("clip_limit", 2.0), params.get("tile_grid", (8, 8)),
                     params.get("output_range", "original"))
    raise ValueError(f"Unknown pixel transform '{kind}'")


# ===========================================================================
#  Spatial-level transforms
# ===========================================================================

def coarse_dropout_holes(height: int, width: int, count: int, size_range: Tuple[float, float],
                         rng: RngStream) -> List[BBox]:
    holes = []
    for _ in range(count):
        hole_h = max(1, min(height, int(round(rng.uniform(*size_range) * height))))
        hole_w = max(1, min(width, int(round(rng.uniform(*size_range) * width))))
        y = rng.integers(0, height - hole_h)
        x = rng.integers(0, width - hole_w)
        holes.append(BBox(x, y, x + hole_w, y + hole_h))
    return holes


def _affine_about_center(img: np.ndarray, annotations: List[Annotation], angle: float,
                         factor: float) -> Tuple[np.ndarray, List[Annotation]]:
    height, width = img.shape[:2]
    # cv2 puts pixel centers on integer coordinates; box edges live half a pixel off
    matrix = cv2.getRotationMatrix2D(((width - 1) / 2.0, (height - 1) / 2.0), angle, factor)
    out = cv2.warpAffine(img, matrix, (width, height), flags=cv2.INTER_LINEAR,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=(0, 0, 0))

    linear = matrix[:, :2]
    center = np.array([width / 2.0, height / 2.0])
    moved = []
    for ann in annotations:
        b = ann.bbox
        corners = np.array([[b.x_min, b.y_min], [b.x_max, b.y_min],
                            [b.x_min, b.y_max], [b.x_max, b.y_max]], dtype=np.float64)
        pts = (corners - center) @ linear.T + center
        box = BBox.from_float(pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max(),
                              width, height)
        if box is not None:
            moved.append(Annotation(ann.class_label, box))
    return out, moved


def spatial_transform(img: np.ndarray, annotations: List[Annotation], kind: str, params: Dict,
                      rng: Optional[RngStream] = None) -> Tuple[np.ndarray, List[Annotation]]:
    """
    Spatial-level transform of an image and its boxes.

    params: coarse_dropout {"holes": int, "hole_size": (lo, hi)};
            pixel_dropout {"rate": p}; scale {"factor": f}; rotate {"angle": deg}.
    The dropout kinds draw hole/pixel positions from rng.
    """
    height, width = img.shape[:2]
    if kind == "coarse_dropout":
        out = img.copy()
        for hole in coarse_dropout_holes(height, width, int(params["holes"]),
                                         tuple(params.get("hole_size", (0.02, 0.1))), rng):
            out[hole.y_min:hole.y_max, hole.x_min:hole.x_max] = 0
        return out, list(annotations)
    if kind == "pixel_dropout":
        out = img.copy()
        dropped = rng.generator.random((height, width)) < float(params["rate"])
        out[dropped] = 0
        return out, list(annotations)
    if kind == "scale":
        factor = float(params["factor"])
        if factor == 1.0:
            return img.copy(), list(annotations)
        return _affine_about_center(img, annotations, 0.0, factor)
    if kind == "rotate":
        angle = float(params["angle"])
        if angle % 360.0 == 0.0:
            return img.copy(), list(annotations)
        return _affine_about_center(img, annotations, angle, 1.0)
    raise ValueError(f"Unknown spatial transform '{kind}'")


# ===========================================================================
#  Sequential online pipeline
# ===========================================================================

def dp_decisions(spec: AugmentationSpec, rng: RngStream) -> Dict[str, bool]:
    """One draw per transform, in pipeline order, whether or not it fires."""
    gate = rng.child("gate")
    decisions = {}
    for kind in DP_ORDER:
        p = spec.spatial_probability if kind in SPATIAL_KINDS else spec.pixel_probability
        decisions[kind] = gate.random() < p
    return decisions


def _odd_kernel(lo: int, hi: int, rng: RngStream) -> int:
    odd = [k for k in range(lo, hi + 1) if k % 2 == 1]
    return rng.choice(odd) if odd else (lo | 1)


def _draw_params(kind: str, spec: AugmentationSpec, rng: RngStream) -> Dict:
    if kind == "coarse_dropout":
        return {"holes": rng.integers(*spec.dropout_holes), "hole_size": spec.dropout_hole_size}
    if kind == "pixel_dropout":
        return {"rate": spec.pixel_dropout_rate}
    if kind == "scale":
        return {"factor": rng.uniform(*spec.scale_range)}
    if kind == "rotate":
        return {"angle": rng.uniform(*spec.rotate_limit)}
    if kind == "blur":
        return {"ksize": rng.integers(*spec.blur_kernel_range)}
    if kind == "median_blur":
        return {"ksize": _odd_kernel(*spec.median_kernel_range, rng)}
    if kind == "clahe":
        return {"clip_limit": spec.clahe_clip_limit, "tile_grid": spec.clahe_tile_grid,
                "output_range": spec.clahe_range}
    return {}


def dp_pipeline(img: np.ndarray, annotations: List[Annotation], spec: AugmentationSpec, rng: RngStream,
                trace: Optional[List[str]] = None) -> Tuple[np.ndarray, List[Annotation]]:
    """
    Apply the spatial transforms, then the pixel transforms, each gated by its
    probability. Gate draws and parameter draws use separate child streams.
    Fired transform names are appended to trace when given.
    """
    decisions = dp_decisions(spec, rng)
    out, anns = img, list(annotations)
    for kind in DP_ORDER:
        if not decisions[kind]:
            continue
        stream = rng.child(kind)
        params = _draw_params(kind, spec, stream)
        if kind in SPATIAL_KINDS:
            out, anns = spatial_transform(out, anns, kind, params, stream)
        else:
            out = pixel_transform(out, kind, params)
        if trace is not None:
            trace.append(kind)
    if out is img:
        out = img.copy()
    return out, anns
