"""
Records passed between annotation, synthesis and export.

Rasters are (H, W, 3) uint8 RGB arrays, masks are (H, W) bool arrays.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np

from raster.geometry import BBox, mask_tight_bbox

UNKNOWN_LABEL = "unknown"
ORIGINS = ("captured", "generated")
SOURCE_TAGS = ("train_b", "train_c", "train_a", "train_s", "synthetic", "test")


def build_class_index(class_list: Sequence[str]) -> Dict[str, int]:
    """Configured classes in order, with the reserved 'unknown' class always last."""
    names = [c for c in class_list if c != UNKNOWN_LABEL]
    if len(set(names)) != len(names):
        raise ValueError("Class list contains duplicates")
    index = {name: i for i, name in enumerate(names)}
    index[UNKNOWN_LABEL] = len(names)
    return index


class Annotation(NamedTuple):
    class_label: str
    bbox: BBox


@dataclass
class ObjectCrop:
    """A tight image patch with its foreground mask; the unit of pasting."""
    patch: np.ndarray
    mask: np.ndarray
    class_label: str
    source_id: str
    origin: str = "captured"

    def __post_init__(self):
        if self.patch.shape[:2] != self.mask.shape:
            raise ValueError(f"Crop {self.source_id}: patch {self.patch.shape[:2]} "
                             f"and mask {self.mask.shape} differ")
        if not self.mask.any():
            raise ValueError(f"Crop {self.source_id}: mask is empty")
        if self.origin not in ORIGINS:
            raise ValueError(f"Crop {self.source_id}: unknown origin '{self.origin}'")

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def is_tight(self) -> bool:
        return mask_tight_bbox(self.mask) == BBox.full_frame(self.width, self.height)

    def retighten(self) -> ObjectCrop:
        """Cut patch and mask down to the mask's tight box."""
        box = mask_tight_bbox(self.mask)
        if box is None:
            raise ValueError(f"Crop {self.source_id}: mask is empty")
        if box == BBox.full_frame(self.width, self.height):
            return self
        sl = (slice(box.y_min, box.y_max), slice(box.x_min, box.x_max))
        return ObjectCrop(
            patch=np.ascontiguousarray(self.patch[sl]),
            mask=np.ascontiguousarray(self.mask[sl]),
            class_label=self.class_label,
            source_id=self.source_id,
            origin=self.origin,
        )

    def with_pixels(self, patch: np.ndarray, mask: np.ndarray) -> ObjectCrop:
        """Same identity, new pixels (re-tightened)."""
        return ObjectCrop(patch, mask, self.class_label, self.source_id, self.origin).retighten()


@dataclass
class LabeledImage:
    """A raster plus its (class, box) annotations."""
    image: np.ndarray
    annotations: List[Annotation] = field(default_factory=list)
    source: str = "synthetic"
    name: str = ""
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def problems(self, class_index: Optional[Dict[str, int]] = None) -> List[str]:
        """Invariant violations, empty when the image is consistent."""
        issues = []
        if self.source not in SOURCE_TAGS:
            issues.append(f"unknown source tag '{self.source}'")
        if self.source == "train_a" and self.annotations:
            issues.append("negative image carries annotations")
        for ann in self.annotations:
            if not ann.bbox.inside(self.width, self.height):
                issues.append(f"box {ann.bbox.as_tuple()} outside {self.width}x{self.height}")
            if class_index is not None and ann.class_label not in class_index:
                issues.append(f"label '{ann.class_label}' not in class index")
        return issues


@dataclass
class ObjectBank:
    """Pool of crops that synthesis samples from. Duplicates share pixels."""
    crops: List[ObjectCrop]
    class_index: Dict[str, int]

    def __post_init__(self):
        missing = sorted({c.class_label for c in self.crops} - set(self.class_index))
        if missing:
            raise ValueError(f"Crop labels missing from class index: {missing}")

    def __len__(self) -> int:
        return len(self.crops)

    @property
    def counts(self) -> Counter:
        return Counter(c.class_label for c in self.crops)

    def shares(self) -> Dict[str, float]:
        total = len(self.crops)
        return {label: n / total for label, n in self.counts.items()} if total else {}

    @classmethod
    def merge(cls, banks: Iterable[ObjectBank]) -> ObjectBank:
        banks = list(banks)
        if not banks:
            raise ValueError("Nothing to merge")
        index = banks[0].class_index
        for bank in banks[1:]:
            if bank.class_index != index:
                raise ValueError("Banks were loaded with different class lists")
        return cls([c for bank in banks for c in bank.crops], dict(index))
