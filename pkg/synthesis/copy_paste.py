"""
synthesis/copy_paste.py
=======================
Copy-Paste composition of crowded synthetic detection images.

Per image: draw an object count, build a mosaic background, then for every
object draw a crop from the (optionally balanced) pool, augment it, clamp its
scale into the configured area band, look for a free spot against the
occupancy mask (the union of dilated masks already pasted) and paste it by
mask. Objects without a free spot are skipped.

Everything an image contains is a function of (seed, image index) only, so
images can be rendered by any number of workers in any order.
"""

from __future__ import annotations

import math
import logging
import multiprocessing as mp
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from tqdm import tqdm

from raster.geometry import BBox, dilate_into
from data_collector.records import Annotation, LabeledImage, ObjectBank, ObjectCrop
from data_collector.dataset_io import write_labeled_image
from data_collector.utils import write_json
from synthesis.augmentations import paste_augment, resize_crop
from synthesis.config import SynthesisConfig
from synthesis.mosaic import mosaic_background
from synthesis.rng import RngStream

logger = logging.getLogger(__name__)

MAX_CLAMP_PASSES = 4


class CanvasTooSmallError(ValueError):
    """A clamped object does not fit on the canvas."""


# ================= Pool balancing =================

def balance_pool(bank: ObjectBank, threshold: float) -> ObjectBank:
    """
    Duplicate every crop of each class whose share is below threshold, by
    reference, the smallest whole number of times that lifts the class share
    to at least threshold in the grown pool. Other classes are untouched.
    """
    if len(bank) == 0:
        raise ValueError("Cannot balance an empty bank")
    counts = bank.counts
    total = len(bank)
    under = {label: n for label, n in counts.items() if n / total < threshold}
    if not under:
        return bank
    if len(under) * threshold >= 1.0:
        raise ValueError(f"{len(under)} classes cannot all reach a {threshold:.1%} share")

    copies = {label: 1 for label in under}
    while True:
        grown = total + sum((k - 1) * under[label] for label, k in copies.items())
        updated = {label: max(copies[label], math.ceil(threshold * grown / under[label] - 1e-9))
                   for label in under}
        if updated == copies:
            break
        copies = updated

    crops = list(bank.crops)
    for crop in bank.crops:
        extra = copies.get(crop.class_label, 1) - 1
        crops.extend([crop] * extra)
    for label in sorted(copies):
        logger.info(f"Oversampling '{label}': {under[label]} crops x{copies[label]} "
                    f"({under[label] / total:.2%} -> {copies[label] * under[label] / len(crops):.2%})")
    return ObjectBank(crops, dict(bank.class_index))


# ================= Scale clamp =================

def area_fraction(box: BBox, canvas_size: Tuple[int, int]) -> float:
    return box.area / float(canvas_size[0] * canvas_size[1])


def clamp_object_scale(crop: ObjectCrop, canvas_size: Tuple[int, int], min_frac: float, max_frac: float,
                       tolerance: float = 0.02) -> ObjectCrop:
    """
    Rescale a tight crop so its box covers between min_frac and max_frac of the
    canvas. Crops already inside the band are returned unchanged.
    """
    width, height = canvas_size
    canvas_area = float(width * height)
    frac = crop.width * crop.height / canvas_area
    if frac < min_frac or frac > max_frac:
        target = min_frac if frac < min_frac else max_frac
        factor = math.sqrt(target / frac)
        source = crop
        for _ in range(MAX_CLAMP_PASSES):
            crop = resize_crop(source, max(1, int(round(source.width * factor))),
                               max(1, int(round(source.height * factor))))
            frac = crop.width * crop.height / canvas_area
            if min_frac * (1 - tolerance) <= frac <= max_frac * (1 + tolerance):
                break
            # Re-tightening after resampling can shave rows; correct and retry from the source
            factor *= math.sqrt(target / frac)
    if crop.width > width or crop.height > height:
        raise CanvasTooSmallError(f"Crop {crop.source_id} is {crop.width}x{crop.height} after clamping, "
                                  f"canvas is {width}x{height}")
    return crop


# ================= Placement =================

def find_free_spot(occupancy: np.ndarray, obj_mask: np.ndarray, rng: RngStream, max_attempts: int = 100,
                   mode: str = "rejection") -> Optional[Tuple[int, int]]:
    """
    Top-left (x, y) where obj_mask's foreground misses occupancy and stays on
    the canvas, or None. 'rejection' tries up to max_attempts uniform
    positions; 'exhaustive' draws uniformly among all feasible positions.
    """
    canvas_h, canvas_w = occupancy.shape
    h, w = obj_mask.shape
    if h > canvas_h or w > canvas_w:
        return None

    if mode == "exhaustive":
        # conflict[y, x] = number of object pixels landing on occupied pixels
        conflict = cv2.filter2D(occupancy.astype(np.float32), -1, obj_mask.astype(np.float32),
                                anchor=(0, 0), borderType=cv2.BORDER_CONSTANT)
        feasible = conflict[:canvas_h - h + 1, :canvas_w - w + 1] < 0.5
        ys, xs = np.nonzero(feasible)
        if ys.size == 0:
            return None
        pick = rng.integers(0, ys.size - 1)
        return int(xs[pick]), int(ys[pick])

    for _ in range(max_attempts):
        x = rng.integers(0, canvas_w - w)
        y = rng.integers(0, canvas_h - h)
        if not np.any(occupancy[y:y + h, x:x + w] & obj_mask):
            return x, y
    return None


# ================= Image synthesis =================

def select_backgrounds(backgrounds: Sequence[np.ndarray], max_backgrounds: int, seed: int) -> List[np.ndarray]:
    """Deterministic subset of at most max_backgrounds sources (0 keeps all)."""
    if not max_backgrounds or len(backgrounds) <= max_backgrounds:
        return list(backgrounds)
    picks = sorted(int(i) for i in RngStream(seed, "backgrounds").sample_indices(len(backgrounds), max_backgrounds))
    return [backgrounds[i] for i in picks]


def sample_object_count(cfg: SynthesisConfig, image_index: int) -> int:
    """Objects requested for one image, uniform over the inclusive count range."""
    return RngStream(cfg.seed, f"image/{image_index}").child("count").integers(*cfg.object_count_range)


def synthesize_image(bank: ObjectBank, backgrounds: Sequence[np.ndarray], cfg: SynthesisConfig,
                     image_index: int, keep_masks: bool = False) -> LabeledImage:
    if len(bank) == 0:
        raise ValueError("Cannot synthesize from an empty bank")
    root = RngStream(cfg.seed, f"image/{image_index}")
    requested = sample_object_count(cfg, image_index)
    canvas = mosaic_background(backgrounds, cfg.canvas_size, root.child("mosaic"))
    occupancy = np.zeros((cfg.canvas_height, cfg.canvas_width), dtype=bool)
    lo_band = cfg.min_area_fraction * (1 - cfg.scale_tolerance)
    hi_band = cfg.max_area_fraction * (1 + cfg.scale_tolerance)

    annotations: List[Annotation] = []
    placements = []
    for j in range(requested):
        stream = root.child(f"object/{j}")
        crop = stream.choice(bank.crops)
        crop = paste_augment(crop, cfg.paste_augmentation, stream)
        crop = clamp_object_scale(crop, cfg.canvas_size, cfg.min_area_fraction, cfg.max_area_fraction,
                                  cfg.scale_tolerance)
        box = BBox(0, 0, crop.width, crop.height)
        if not lo_band <= area_fraction(box, cfg.canvas_size) <= hi_band:
            logger.debug(f"image {image_index}: {crop.source_id} left the scale band, skipped")
            continue

        spot = find_free_spot(occupancy, crop.mask, stream, cfg.max_placement_attempts, cfg.placement_mode)
        if spot is None:
            logger.debug(f"image {image_index}: no free spot for object {j}, skipped")
            continue
        x, y = spot
        region = canvas[y:y + crop.height, x:x + crop.width]
        region[crop.mask] = crop.patch[crop.mask]
        dilate_into(occupancy, crop.mask, x, y, cfg.placement_dilation)
        annotations.append(Annotation(crop.class_label, box.translate(x, y)))
        if keep_masks:
            placements.append((x, y, crop.mask))

    meta = {"requested": requested, "placed": len(annotations)}
    if keep_masks:
        meta["placements"] = placements
    return LabeledImage(image=canvas, annotations=annotations, source="synthetic",
                        name=f"image_{image_index}", meta=meta)


# ================= Dataset synthesis =================

_WORKER_STATE = {}


def _init_worker(bank, backgrounds, cfg, output_dir, run_name):
    _WORKER_STATE.update(bank=bank, backgrounds=backgrounds, cfg=cfg, output_dir=Path(output_dir),
                         run_name=run_name)


def image_stem(run_name: str, index: int) -> str:
    return f"{run_name}_{index:06d}"


def _render(index: int):
    state = _WORKER_STATE
    labeled = synthesize_image(state["bank"], state["backgrounds"], state["cfg"], index)
    write_labeled_image(labeled, state["output_dir"], image_stem(state["run_name"], index),
                        state["bank"].class_index)
    counts = Counter(a.class_label for a in labeled.annotations)
    return index, dict(counts), labeled.meta["requested"], labeled.meta["placed"]


def synthesize_dataset(bank: ObjectBank, backgrounds: Sequence[np.ndarray], cfg: SynthesisConfig,
                       n_images: int, output_dir, run_name: str = "synth", jobs: int = 1,
                       config_hash: str = "") -> Dict:
    """
    Render n_images into output_dir/images and output_dir/labels and write
    output_dir/manifest.json. Returns the manifest.
    """
    if n_images < 1:
        raise ValueError(f"n_images must be >= 1, got {n_images}")
    if len(bank) == 0:
        raise ValueError("Cannot synthesize from an empty bank")
    output_dir = Path(output_dir)
    (output_dir / "images").mkdir(parents=True, exist_ok=True)
    (output_dir / "labels").mkdir(parents=True, exist_ok=True)

    init_args = (bank, list(backgrounds), cfg, output_dir, run_name)
    indices = range(n_images)
    if jobs > 1:
        with mp.get_context("spawn").Pool(jobs, initializer=_init_worker, initargs=init_args) as pool:
            results = list(tqdm(pool.imap_unordered(_render, indices, chunksize=4), total=n_images,
                                desc="Synthesizing"))
    else:
        _init_worker(*init_args)
        results = [_render(i) for i in tqdm(indices, desc="Synthesizing")]

    paste_counts = Counter({label: 0 for label in bank.class_index})
    requested = placed = 0
    for _, counts, req, got in sorted(results, key=lambda r: r[0]):
        paste_counts.update(counts)
        requested += req
        placed += got

    manifest = {
        "run": run_name,
        "config_hash": config_hash,
        "seed": cfg.seed,
        "class_index": dict(bank.class_index),
        "per_class_paste_counts": {label: paste_counts[label] for label in sorted(paste_counts)},
        "n_images": n_images,
        "requested_objects": requested,
        "placed_objects": placed,
        "canvas": [cfg.canvas_width, cfg.canvas_height],
        "area_fraction_band": [cfg.min_area_fraction * (1 - cfg.scale_tolerance),
                               cfg.max_area_fraction * (1 + cfg.scale_tolerance)],
    }
    write_json(output_dir / "manifest.json", manifest)
    logger.info(f"Synthesized {n_images} images: {placed}/{requested} objects placed "
                f"({placed / max(1, n_images):.2f} per image)")
    return manifest
