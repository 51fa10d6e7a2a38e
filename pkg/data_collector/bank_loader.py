"""
Loading of object banks, background sources and negative images.

A bank directory holds, per crop, `<id>.crop.png`, `<id>.mask.png` and
`<id>.label`, the layout written by the annotate step. Files are visited in
sorted order so the listing order of the file system never matters.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from raster.geometry import BBox
from data_collector.records import (
    UNKNOWN_LABEL, Annotation, LabeledImage, ObjectBank, ObjectCrop, build_class_index,
)
from data_collector.utils import list_images, load_jsonl, read_image, read_mask

logger = logging.getLogger(__name__)

CROP_SUFFIX = ".crop.png"
MASK_SUFFIX = ".mask.png"


class BankError(ValueError):
    """Bank directory is empty or unreadable."""


def _resolve_label(label: str, class_index: Dict[str, int], cast_unknown: bool) -> Optional[str]:
    if label in class_index:
        return label
    return UNKNOWN_LABEL if cast_unknown else None


def load_object_bank(path, class_list: Sequence[str], cast_unknown: bool = False, origin: str = "captured",
                     diagnostics: Optional[List[str]] = None) -> ObjectBank:
    """
    Load every crop of a bank directory.

    Crops whose mask and patch dims differ, or whose label is outside
    class_list (unless cast_unknown), are rejected; one message per rejected
    crop is logged and appended to diagnostics when given.
    """
    path = Path(path)
    if not path.is_dir():
        raise BankError(f"Bank directory not found: {path}")
    class_index = build_class_index(class_list)
    rejected = diagnostics if diagnostics is not None else []

    crops = []
    casts = 0
    for crop_path in sorted(path.glob(f"*{CROP_SUFFIX}")):
        crop_id = crop_path.name[:-len(CROP_SUFFIX)]
        mask_path = path / f"{crop_id}{MASK_SUFFIX}"
        label_path = path / f"{crop_id}.label"
        if not mask_path.exists() or not label_path.exists():
            rejected.append(f"{crop_id}: missing mask or label file")
            continue
        try:
            patch = read_image(crop_path)
            mask = read_mask(mask_path)
            raw_label = label_path.read_text(encoding="utf-8").strip()
        except OSError as e:
            raise BankError(f"Unreadable crop {crop_id} in {path}: {e}") from e

        if patch.shape[:2] != mask.shape:
            rejected.append(f"{crop_id}: patch {patch.shape[1]}x{patch.shape[0]} "
                            f"vs mask {mask.shape[1]}x{mask.shape[0]}")
            continue
        if not mask.any():
            rejected.append(f"{crop_id}: empty mask")
            continue
        label = _resolve_label(raw_label, class_index, cast_unknown)
        if label is None:
            rejected.append(f"{crop_id}: label '{raw_label}' not in class list")
            continue
        casts += label != raw_label

        crop = ObjectCrop(patch, mask, label, crop_id, origin)
        if not crop.is_tight():
            logger.debug(f"{crop_id}: crop not tight, re-tightened")
            crop = crop.retighten()
        crops.append(crop)

    for message in rejected:
        logger.warning(f"Rejected crop {message}")
    if not crops:
        raise BankError(f"No usable crops in {path}")
    if casts:
        logger.info(f"Cast {casts} crops of {path.name} to '{UNKNOWN_LABEL}'")
    bank = ObjectBank(crops, class_index)
    logger.info(f"Loaded {len(bank)} crops ({len(bank.counts)} classes) from {path}")
    return bank


def load_backgrounds(path) -> List[np.ndarray]:
    """Background source rasters, crop and mask files excluded."""
    paths = [p for p in list_images(path) if not p.name.endswith((CROP_SUFFIX, MASK_SUFFIX))]
    if not paths:
        raise BankError(f"No background images in {path}")
    return [read_image(p) for p in paths]


def iter_negatives(path) -> Iterator[LabeledImage]:
    """Plain images registered as negatives: zero annotations each."""
    for p in list_images(path):
        yield LabeledImage(read_image(p), [], source="train_a", name=p.stem)


def iter_annotated_images(bank_dir, class_index: Dict[str, int], cast_unknown: bool = False,
                          source: str = "train_b") -> Iterator[LabeledImage]:
    """
    The original single-object images of a bank, with the box derived at
    annotation time, read back through the bank's crops.jsonl.
    """
    manifest = Path(bank_dir) / "crops.jsonl"
    if not manifest.exists():
        raise BankError(f"No crops.jsonl in {bank_dir}")
    for entry in sorted(load_jsonl(manifest), key=lambda e: e.get("id", "")):
        label = _resolve_label(entry["class_label"], class_index, cast_unknown)
        if label is None:
            logger.warning(f"{entry['id']}: label '{entry['class_label']}' not in class list, skipped")
            continue
        try:
            image = read_image(entry["source_image"])
        except OSError as e:
            logger.warning(f"{entry['id']}: {e}")
            continue
        box = BBox(*entry["bbox"])
        yield LabeledImage(image, [Annotation(label, box)], source=source, name=entry["id"])
