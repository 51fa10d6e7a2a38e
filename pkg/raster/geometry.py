"""
raster/geometry.py
==================
Pixel-level primitives shared by annotation, placement and validation.

Boxes use the half-open integer convention: a box (x_min, y_min, x_max, y_max)
covers columns [x_min, x_max) and rows [y_min, y_max). Masks are 2-D numpy
bool arrays indexed [row, col]. Pixels outside a mask's frame count as
background for every morphology operation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import cv2
import numpy as np

MORPH_OPS = ("erode", "dilate", "open", "close")
KERNEL_SHAPES = ("square", "disk")


class EmptyMaskError(ValueError):
    """Raised when an operation needs at least one foreground pixel."""


# ===========================================================================
#  Boxes
# ===========================================================================

@dataclass(frozen=True)
class BBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"Degenerate box: {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def translate(self, dx: int, dy: int) -> BBox:
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def inside(self, width: int, height: int) -> bool:
        """True when the box lies fully inside a width x height frame."""
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    @classmethod
    def full_frame(cls, width: int, height: int) -> BBox:
        return cls(0, 0, width, height)

    @classmethod
    def from_float(cls, x_min: float, y_min: float, x_max: float, y_max: float,
                   width: int, height: int) -> Optional[BBox]:
        """
        Round a real-valued box outward to whole pixels and clip it to the frame.
        Returns None when nothing of it is left inside the frame.
        """
        x0 = max(0, int(np.floor(x_min + 1e-6)))
        y0 = max(0, int(np.floor(y_min + 1e-6)))
        x1 = min(width, int(np.ceil(x_max - 1e-6)))
        y1 = min(height, int(np.ceil(y_max - 1e-6)))
        if x0 >= x1 or y0 >= y1:
            return None
        return cls(x0, y0, x1, y1)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two valid boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


# ===========================================================================
#  Masks
# ===========================================================================

def as_mask(array: np.ndarray) -> np.ndarray:
    """Any nonzero value is foreground."""
    array = np.asarray(array)
    if array.ndim == 3:
        array = array[..., 0]
    if array.ndim != 2:
        raise ValueError(f"Mask must be 2-D, got shape {array.shape}")
    return array.astype(bool) if array.dtype != np.bool_ else array


def foreground_count(m: np.ndarray) -> int:
    return int(np.count_nonzero(m))


def is_empty(m: np.ndarray) -> bool:
    return not m.any()


def mask_tight_bbox(m: np.ndarray) -> Optional[BBox]:
    """Smallest box holding every foreground pixel, or None for an empty mask."""
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(m.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


# ===========================================================================
#  Morphology
# ===========================================================================

@dataclass(frozen=True)
class StructuringElement:
    shape: str = "square"
    radius: int = 1

    def __post_init__(self):
        if self.shape not in KERNEL_SHAPES:
            raise ValueError(f"Unknown kernel shape '{self.shape}', expected one of {KERNEL_SHAPES}")
        if int(self.radius) < 1:
            raise ValueError(f"Kernel radius must be >= 1, got {self.radius}")

    def footprint(self) -> np.ndarray:
        """uint8 (2r+1) x (2r+1) footprint, symmetric about its center."""
        r = int(self.radius)
        if self.shape == "square":
            return np.ones((2 * r + 1, 2 * r + 1), dtype=np.uint8)
        yy, xx = np.ogrid[-r:r + 1, -r:r + 1]
        return (xx * xx + yy * yy <= r * r).astype(np.uint8)


def _erode(m_u8: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return cv2.erode(m_u8, kernel, borderType=cv2.BORDER_CONSTANT, borderValue=0)


def _dilate(m_u8: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return cv2.dilate(m_u8, kernel, borderType=cv2.BORDER_CONSTANT, borderValue=0)


def morph(m: np.ndarray, op: str, k: StructuringElement) -> np.ndarray:
    """
    Binary morphology with out-of-frame pixels treated as background.
    open = erode then dilate, close = dilate then erode.
    """
    if op not in MORPH_OPS:
        raise ValueError(f"Unknown morphology op '{op}', expected one of {MORPH_OPS}")
    kernel = k.footprint()
    m_u8 = np.ascontiguousarray(m, dtype=np.uint8)
    if op == "erode":
        out = _erode(m_u8, kernel)
    elif op == "dilate":
        out = _dilate(m_u8, kernel)
    elif op == "open":
        out = _dilate(_erode(m_u8, kernel), kernel)
    else:
        out = _erode(_dilate(m_u8, kernel), kernel)
    return out.astype(bool)


def dilate_into(occupancy: np.ndarray, obj_mask: np.ndarray, x: int, y: int,
                k: StructuringElement) -> None:
    """
    OR the dilation of obj_mask, placed with its top-left corner at (x, y),
    into occupancy in place. The dilation is computed on a padded local window
    so it may spill past the object's own box but never past the canvas.
    """
    r = int(k.radius)
    h, w = obj_mask.shape
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r:r + h, r:r + w] = obj_mask
    grown = morph(padded, "dilate", k)

    canvas_h, canvas_w = occupancy.shape
    x0, y0 = x - r, y - r
    cx0, cy0 = max(0, x0), max(0, y0)
    cx1, cy1 = min(canvas_w, x0 + grown.shape[1]), min(canvas_h, y0 + grown.shape[0])
    if cx0 >= cx1 or cy0 >= cy1:
        return
    occupancy[cy0:cy1, cx0:cx1] |= grown[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]


# ===========================================================================
#  Connected components
# ===========================================================================

class Component(NamedTuple):
    component_id: int
    pixel_count: int
    bbox: BBox


def label_components(m: np.ndarray, connectivity: int = 8) -> Tuple[np.ndarray, List[Component]]:
    """
    Label foreground components. Returns the label raster (0 = background) and
    the components sorted by pixel count descending, ties broken by the
    smaller (y_min, x_min) of the component box.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"Connectivity must be 4 or 8, got {connectivity}")
    m_u8 = np.ascontiguousarray(m, dtype=np.uint8)
    n, labels, stats, _ = cv2.connectedComponentsWithStats(m_u8, connectivity=connectivity)
    components = []
    for label in range(1, n):
        x, y, w, h, area = (int(v) for v in stats[label])
        if area == 0:
            continue
        components.append(Component(label, area, BBox(x, y, x + w, y + h)))
    components.sort(key=lambda c: (-c.pixel_count, c.bbox.y_min, c.bbox.x_min))
    return labels, components


def connected_components(m: np.ndarray, connectivity: int = 8) -> List[Component]:
    return label_components(m, connectivity)[1]


def largest_component_bbox(m: np.ndarray, connectivity: int = 8) -> BBox:
    components = connected_components(m, connectivity)
    if not components:
        raise EmptyMaskError("Mask has no foreground pixels")
    return components[0].bbox
