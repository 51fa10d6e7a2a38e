"""
Semi-automatic annotation of single-object images.

Each input image comes with candidate segmentation masks produced by an
external promptable segmentation model and a manually assigned class label.
The object mask is the biggest candidate that is not background, refined by
opening then closing; the annotation box is the tight box of the refined
mask's largest connected component.

Input contract per image id:
    <id>.png            color image
    <id>.label          single-line class name
    <id>.masks/NN.png   candidate masks (any nonzero value is foreground)
Output per image id:
    <id>.crop.png, <id>.mask.png, <id>.label and one line in crops.jsonl
"""

from __future__ import annotations

import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from raster.geometry import (
    BBox,
    StructuringElement,
    iou,
    is_empty,
    largest_component_bbox,
    mask_tight_bbox,
    morph,
)
from data_collector.records import Annotation, LabeledImage, ObjectCrop
from data_collector.utils import read_image, read_mask, save_metadata, write_image, write_mask

logger = logging.getLogger(__name__)

NO_QUALIFYING_MASK = "no qualifying mask"
EMPTY_AFTER_REFINEMENT = "empty after refinement"
EMPTY_MASK = "empty mask"
DIMENSION_MISMATCH = "dimension mismatch"

# Reasons that skip an image instead of failing the run
SOFT_REASONS = (NO_QUALIFYING_MASK, EMPTY_AFTER_REFINEMENT)


class AnnotationError(ValueError):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass
class AnnotationConfig:
    background_iou_threshold: float = 0.9
    refine_kernel: StructuringElement = field(default_factory=lambda: StructuringElement("square", 2))
    connectivity: int = 8

    def problems(self) -> List[str]:
        issues = []
        if not 0.0 < self.background_iou_threshold <= 1.0:
            issues.append("annotation.background_iou_threshold must be in (0, 1]")
        if self.connectivity not in (4, 8):
            issues.append("annotation.connectivity must be 4 or 8")
        return issues


@dataclass
class MaskCandidateSet:
    width: int
    height: int
    candidates: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        for i, m in enumerate(self.candidates):
            if m.shape != (self.height, self.width):
                raise AnnotationError(DIMENSION_MISMATCH,
                                      f"candidate {i} is {m.shape[1]}x{m.shape[0]}, "
                                      f"image is {self.width}x{self.height}")


# ================= Core operations =================

def select_object_mask(c: MaskCandidateSet, background_iou_threshold: float = 0.9) -> Optional[np.ndarray]:
    """
    Biggest candidate whose tight box does not exceed the background IoU
    threshold against the full image box. None when no candidate qualifies.
    """
    if not 0.0 < background_iou_threshold <= 1.0:
        raise ValueError(f"Threshold must be in (0, 1], got {background_iou_threshold}")
    image_box = BBox.full_frame(c.width, c.height)
    best, best_count = None, -1
    for m in c.candidates:
        box = mask_tight_bbox(m)
        if box is None or iou(box, image_box) > background_iou_threshold:
            continue
        count = int(np.count_nonzero(m))
        # Strict '>' keeps the first candidate on ties
        if count > best_count:
            best, best_count = m, count
    return best


def refine_mask(m: np.ndarray, k: StructuringElement) -> np.ndarray:
    """Opening followed by closing."""
    refined = morph(morph(m, "open", k), "close", k)
    if is_empty(refined):
        raise AnnotationError(EMPTY_AFTER_REFINEMENT)
    return refined


def derive_annotation(m: np.ndarray, class_label: str, connectivity: int = 8) -> Annotation:
    if is_empty(m):
        raise AnnotationError(EMPTY_MASK)
    return Annotation(class_label, largest_component_bbox(m, connectivity))


def annotate_single_object_image(image: np.ndarray, candidates: MaskCandidateSet, class_label: str,
                                 config: Optional[AnnotationConfig] = None, source_id: str = "",
                                 source: str = "train_b") -> Tuple[LabeledImage, ObjectCrop]:
    config = config or AnnotationConfig()
    height, width = image.shape[:2]
    if (width, height) != (candidates.width, candidates.height):
        raise AnnotationError(DIMENSION_MISMATCH,
                              f"image is {width}x{height}, candidates are {candidates.width}x{candidates.height}")

    selected = select_object_mask(candidates, config.background_iou_threshold)
    if selected is None:
        raise AnnotationError(NO_QUALIFYING_MASK)
    refined = refine_mask(selected, config.refine_kernel)
    annotation = derive_annotation(refined, class_label, config.connectivity)

    box = annotation.bbox
    sl = (slice(box.y_min, box.y_max), slice(box.x_min, box.x_max))
    crop = ObjectCrop(
        patch=np.ascontiguousarray(image[sl]),
        mask=np.ascontiguousarray(refined[sl]),
        class_label=class_label,
        source_id=source_id,
        origin="captured",
    )
    labeled = LabeledImage(image=image, annotations=[annotation], source=source, name=source_id)
    return labeled, crop


# ================= Directory batch =================

@dataclass
class AnnotationResult:
    """Outcome for one input image."""
    image_id: str
    status: str
    reason: Optional[str] = None
    entry: Optional[dict] = None

    @classmethod
    def ok(cls, image_id: str, entry: dict) -> AnnotationResult:
        return cls(image_id, "ok", entry=entry)

    @classmethod
    def skip(cls, image_id: str, reason: str) -> AnnotationResult:
        return cls(image_id, "skipped", reason=reason)

    @classmethod
    def fail(cls, image_id: str, reason: str) -> AnnotationResult:
        return cls(image_id, "failed", reason=reason)


def discover_inputs(input_dir) -> List[str]:
    """Image ids that have a sibling .label file, sorted."""
    input_dir = Path(input_dir)
    ids = []
    for p in sorted(input_dir.glob("*.png")):
        if p.name.endswith((".crop.png", ".mask.png")):
            continue
        if p.with_suffix(".label").exists():
            ids.append(p.stem)
        else:
            logger.warning(f"{p.name}: no .label file, ignored")
    return ids


def load_candidates(mask_dir, width: int, height: int) -> MaskCandidateSet:
    mask_dir = Path(mask_dir)
    paths = sorted(mask_dir.glob("*.png")) if mask_dir.is_dir() else []
    return MaskCandidateSet(width, height, [read_mask(p) for p in paths])


def read_label(path) -> str:
    with open(path, 'r', encoding='utf-8') as f:
        label = f.readline().strip()
    if not label:
        raise AnnotationError("empty label", str(path))
    return label


def annotate_one(image_id: str, input_dir, output_dir, config: AnnotationConfig,
                 source: str = "train_b") -> AnnotationResult:
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    try:
        image = read_image(input_dir / f"{image_id}.png")
        label = read_label(input_dir / f"{image_id}.label")
        height, width = image.shape[:2]
        candidates = load_candidates(input_dir / f"{image_id}.masks", width, height)
        labeled, crop = annotate_single_object_image(image, candidates, label, config,
                                                     source_id=image_id, source=source)
    except AnnotationError as e:
        if e.reason in SOFT_REASONS:
            return AnnotationResult.skip(image_id, e.reason)
        return AnnotationResult.fail(image_id, str(e))
    except OSError as e:
        return AnnotationResult.fail(image_id, str(e))

    write_image(output_dir / f"{image_id}.crop.png", crop.patch)
    write_mask(output_dir / f"{image_id}.mask.png", crop.mask)
    with open(output_dir / f"{image_id}.label", 'w', encoding='utf-8') as f:
        f.write(label + "\n")

    box = labeled.annotations[0].bbox
    entry = {
        "id": image_id,
        "class_label": label,
        "origin": crop.origin,
        "source": source,
        "source_image": str((input_dir / f"{image_id}.png").resolve()),
        "image_size": [width, height],
        "bbox": list(box.as_tuple()),
    }
    return AnnotationResult.ok(image_id, entry)


def _annotate_task(args):
    return annotate_one(*args)


def annotate_directory(input_dir, output_dir, config: Optional[AnnotationConfig] = None,
                       source: str = "train_b", jobs: int = 1) -> List[AnnotationResult]:
    """
    Annotate every image of input_dir. Results come back in sorted id order and
    crops.jsonl is rewritten in that order, whatever the worker count.
    """
    config = config or AnnotationConfig()
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not input_dir.is_dir():
        raise OSError(f"Input directory not found: {input_dir}")
    output_dir.mkdir(parents=True, exist_ok=True)
    manifest = output_dir / "crops.jsonl"
    if manifest.exists():
        manifest.unlink()

    ids = discover_inputs(input_dir)
    logger.info(f"Found {len(ids)} labeled images in {input_dir}")
    tasks = [(image_id, input_dir, output_dir, config, source) for image_id in ids]

    if jobs > 1 and len(tasks) > 1:
        with mp.get_context("spawn").Pool(jobs) as pool:
            results = list(tqdm(pool.imap(_annotate_task, tasks), total=len(tasks), desc="Annotating"))
    else:
        results = [_annotate_task(t) for t in tqdm(tasks, desc="Annotating")]

    for res in results:
        if res.status == "ok":
            save_metadata(output_dir, res.entry)
        elif res.status == "skipped":
            logger.warning(f"{res.image_id}: skipped ({res.reason})")
        else:
            logger.error(f"{res.image_id}: failed ({res.reason})")
    return results
