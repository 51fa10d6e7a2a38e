"""
Detection dataset files: label export/parse, image standardization and the
images/ + labels/ directory layout.

Label lines are `<class_id> <cx> <cy> <w> <h>`, center-based, normalized by
the image dims and written with 6 decimals. An image without annotations has
a zero-byte label file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional

import cv2
import numpy as np

from raster.geometry import BBox
from data_collector.records import Annotation, LabeledImage
from data_collector.utils import list_images, read_image, write_image

logger = logging.getLogger(__name__)

LABEL_DECIMALS = 6
MIN_LONGEST_SIDE = 32
# Slack for 6-decimal rounding when checking normalized coordinates
NORM_TOLERANCE = 1e-6


class LabelLine(NamedTuple):
    class_id: int
    cx: float
    cy: float
    w: float
    h: float


# ================= Labels =================

def export_labels(img: LabeledImage, class_index: Dict[str, int]) -> str:
    lines = []
    for ann in img.annotations:
        if ann.class_label not in class_index:
            raise KeyError(f"Label '{ann.class_label}' missing from class index")
        b = ann.bbox
        cx = (b.x_min + b.x_max) / 2.0 / img.width
        cy = (b.y_min + b.y_max) / 2.0 / img.height
        w = b.width / img.width
        h = b.height / img.height
        lines.append(f"{class_index[ann.class_label]} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n")
    return "".join(lines)


def parse_labels(text: str, strict: bool = True) -> List[LabelLine]:
    """
    Parse a label file. With strict set, coordinates must be normalized and
    the box must stay inside [0, 1]; offending lines raise ValueError naming
    the line number.
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            entry = LabelLine(int(parts[0]), *(float(p) for p in parts[1:]))
        except ValueError:
            raise ValueError(f"line {lineno}: malformed numbers '{line}'")
        if strict:
            problem = _label_problem(entry)
            if problem:
                raise ValueError(f"line {lineno}: {problem}")
        entries.append(entry)
    return entries


def _label_problem(e: LabelLine) -> Optional[str]:
    if e.class_id < 0:
        return f"negative class id {e.class_id}"
    for name in ("cx", "cy", "w", "h"):
        value = getattr(e, name)
        if not -NORM_TOLERANCE <= value <= 1 + NORM_TOLERANCE:
            return f"{name}={value} outside [0, 1]"
    if e.w <= 0 or e.h <= 0:
        return "box has zero size"
    if e.cx - e.w / 2 < -NORM_TOLERANCE or e.cx + e.w / 2 > 1 + NORM_TOLERANCE:
        return "box leaves the image horizontally"
    if e.cy - e.h / 2 < -NORM_TOLERANCE or e.cy + e.h / 2 > 1 + NORM_TOLERANCE:
        return "box leaves the image vertically"
    return None


def denormalize(entry: LabelLine, width: int, height: int) -> BBox:
    """Pixel box of a label line, rounded to the nearest pixel edge."""
    x0 = int(round((entry.cx - entry.w / 2) * width))
    x1 = int(round((entry.cx + entry.w / 2) * width))
    y0 = int(round((entry.cy - entry.h / 2) * height))
    y1 = int(round((entry.cy + entry.h / 2) * height))
    x0, y0 = min(max(0, x0), width - 1), min(max(0, y0), height - 1)
    x1, y1 = min(max(x0 + 1, x1), width), min(max(y0 + 1, y1), height)
    return BBox(x0, y0, x1, y1)


# ================= Standardization =================

def _scale_box(b: BBox, sx: float, sy: float, width: int, height: int) -> BBox:
    x0 = min(int(round(b.x_min * sx)), width - 1)
    y0 = min(int(round(b.y_min * sy)), height - 1)
    x1 = min(max(x0 + 1, int(round(b.x_max * sx))), width)
    y1 = min(max(y0 + 1, int(round(b.y_max * sy))), height)
    return BBox(x0, y0, x1, y1)


def standardize_image(img: LabeledImage, longest_side: int = 1280) -> LabeledImage:
    """Resize so the longest side equals longest_side, scaling boxes along. Upscaling included."""
    if longest_side < MIN_LONGEST_SIDE:
        raise ValueError(f"longest_side must be >= {MIN_LONGEST_SIDE}, got {longest_side}")
    height, width = img.height, img.width
    if max(height, width) == longest_side:
        return img
    scale = longest_side / float(max(height, width))
    new_w = max(1, int(round(width * scale)))
    new_h = max(1, int(round(height * scale)))
    interp = cv2.INTER_AREA if scale < 1 else cv2.INTER_LINEAR
    raster = cv2.resize(img.image, (new_w, new_h), interpolation=interp)
    sx, sy = new_w / width, new_h / height
    annotations = [Annotation(a.class_label, _scale_box(a.bbox, sx, sy, new_w, new_h)) for a in img.annotations]
    return LabeledImage(raster, annotations, img.source, img.name, dict(img.meta))


# ================= Directory layout =================

@dataclass
class DatasetListing:
    """Paired and orphaned files of an images/ + labels/ dataset directory."""
    root: Path
    pairs: List[str] = field(default_factory=list)
    orphan_images: List[str] = field(default_factory=list)
    orphan_labels: List[str] = field(default_factory=list)

    def image_path(self, stem: str) -> Path:
        matches = sorted((self.root / "images").glob(f"{stem}.*"))
        return matches[0] if matches else self.root / "images" / f"{stem}.png"

    def label_path(self, stem: str) -> Path:
        return self.root / "labels" / f"{stem}.txt"

    def warnings(self) -> List[str]:
        return ([f"image without label: {s}" for s in self.orphan_images]
                + [f"label without image: {s}" for s in self.orphan_labels])


def list_dataset(dataset_dir) -> DatasetListing:
    root = Path(dataset_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"Dataset directory not found: {root}")
    images = {p.stem for p in list_images(root / "images")}
    labels_dir = root / "labels"
    labels = {p.stem for p in labels_dir.glob("*.txt")} if labels_dir.is_dir() else set()
    return DatasetListing(
        root=root,
        pairs=sorted(images & labels),
        orphan_images=sorted(images - labels),
        orphan_labels=sorted(labels - images),
    )


def read_label_file(path) -> List[LabelLine]:
    with open(path, 'r', encoding='utf-8') as f:
        return parse_labels(f.read())


def load_labeled_image(listing: DatasetListing, stem: str, class_names: Dict[int, str],
                       source: str = "synthetic") -> LabeledImage:
    """Read one image with its label file; class ids are mapped back to names."""
    image = read_image(listing.image_path(stem))
    height, width = image.shape[:2]
    annotations = []
    for entry in read_label_file(listing.label_path(stem)):
        if entry.class_id not in class_names:
            raise ValueError(f"{stem}: class id {entry.class_id} not in class index")
        annotations.append(Annotation(class_names[entry.class_id], denormalize(entry, width, height)))
    return LabeledImage(image, annotations, source=source, name=stem)


def write_labeled_image(img: LabeledImage, output_dir, stem: str, class_index: Dict[str, int],
                        grayscale: bool = False) -> None:
    output_dir = Path(output_dir)
    raster = img.image
    if grayscale:
        raster = np.repeat(cv2.cvtColor(raster, cv2.COLOR_RGB2GRAY)[..., None], 3, axis=2)
    write_image(output_dir / "images" / f"{stem}.png", raster)
    label_path = output_dir / "labels" / f"{stem}.txt"
    label_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        label_path.write_text(export_labels(img, class_index), encoding="utf-8")
    except OSError as e:
        raise OSError(f"Failed to write labels {label_path}: {e}") from e
