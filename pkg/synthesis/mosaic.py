"""
Simplified mosaic backgrounds: four source images share the canvas, split at a
random center point drawn from the central 20-80% of each dimension.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import cv2
import numpy as np

from synthesis.rng import RngStream

SPLIT_RANGE = (0.2, 0.8)


def mosaic_split_point(width: int, height: int, rng: RngStream) -> Tuple[int, int]:
    cx = int(round(rng.uniform(*SPLIT_RANGE) * width))
    cy = int(round(rng.uniform(*SPLIT_RANGE) * height))
    return min(max(cx, 1), width - 1), min(max(cy, 1), height - 1)


def _crop_and_resize(source: np.ndarray, out_w: int, out_h: int, rng: RngStream) -> np.ndarray:
    """Random crop with the quadrant's aspect ratio, resized to the quadrant."""
    src_h, src_w = source.shape[:2]
    aspect = out_w / out_h
    # Largest crop with the target aspect ratio that fits the source
    max_w = min(src_w, src_h * aspect)
    scale = rng.uniform(0.5, 1.0)
    crop_w = max(1, int(round(max_w * scale)))
    crop_h = max(1, min(src_h, int(round(crop_w / aspect))))
    x = rng.integers(0, src_w - crop_w)
    y = rng.integers(0, src_h - crop_h)
    region = source[y:y + crop_h, x:x + crop_w]
    interp = cv2.INTER_AREA if crop_w * crop_h > out_w * out_h else cv2.INTER_LINEAR
    return cv2.resize(region, (out_w, out_h), interpolation=interp)


def mosaic_background(sources: Sequence[np.ndarray], canvas_size: Tuple[int, int], rng: RngStream) -> np.ndarray:
    if len(sources) < 4:
        raise ValueError(f"Mosaic needs at least 4 background sources, got {len(sources)}")
    width, height = canvas_size
    if width < 2 or height < 2:
        raise ValueError(f"Canvas {width}x{height} is too small for a mosaic")

    picks = rng.sample_indices(len(sources), 4)
    cx, cy = mosaic_split_point(width, height, rng)
    quadrants: List[Tuple[int, int, int, int]] = [
        (0, 0, cx, cy), (cx, 0, width, cy),
        (0, cy, cx, height), (cx, cy, width, height),
    ]
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    for idx, (x0, y0, x1, y1) in zip(picks, quadrants):
        canvas[y0:y1, x0:x1] = _crop_and_resize(sources[int(idx)], x1 - x0, y1 - y0, rng)
    return canvas
