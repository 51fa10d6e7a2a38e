"""
synthesis/export.py
===================
Training-time export of detection datasets.

augment_dataset  standardizes every image of an images/ + labels/ dataset to
                 a longest side and runs the online augmentation chain on it.
assemble_dataset writes the real annotated single-object images and the
                 negatives of a preset's composition into one dataset, next
                 to an optional synthetic run.
"""

from __future__ import annotations

import shutil
import logging
import multiprocessing as mp
from collections import Counter
from pathlib import Path
from typing import Dict, Optional

from tqdm import tqdm

from data_collector.bank_loader import BankError, iter_annotated_images, iter_negatives
from data_collector.dataset_io import (
    DatasetListing, list_dataset, load_labeled_image, standardize_image, write_labeled_image,
)
from data_collector.records import LabeledImage, build_class_index
from data_collector.utils import load_json, write_json
from synthesis.augmentations import dp_pipeline
from synthesis.config import AugmentationSpec, RunConfig
from synthesis.rng import RngStream

logger = logging.getLogger(__name__)


# ================= Online augmentation =================

def _augment_one(args):
    stem, input_dir, output_dir, spec, seed, longest_side, grayscale, apply_dp = args
    listing = DatasetListing(Path(input_dir))
    label_text = listing.label_path(stem).read_text(encoding="utf-8")
    # Class ids pass through untouched, so names are just the ids
    ids = {int(line.split()[0]) for line in label_text.splitlines() if line.strip()}
    names = {i: str(i) for i in ids}
    labeled = load_labeled_image(listing, stem, names)

    out = standardize_image(labeled, longest_side)
    before = list(out.annotations)
    fired = []
    if apply_dp:
        raster, annotations = dp_pipeline(out.image, out.annotations, spec, RngStream(seed, f"dp/{stem}"), fired)
        out = LabeledImage(raster, annotations, out.source, out.name, out.meta)

    write_labeled_image(out, output_dir, stem, {str(i): i for i in ids}, grayscale=grayscale)
    if out.width == labeled.width and out.height == labeled.height and out.annotations == before:
        # Boxes untouched (dropout or identity warps): keep the label bytes as they were
        (Path(output_dir) / "labels" / f"{stem}.txt").write_text(label_text, encoding="utf-8")
    return stem, fired


def augment_dataset(input_dir, output_dir, spec: AugmentationSpec, seed: int, longest_side: int = 1280,
                    grayscale: bool = False, apply_dp: bool = True, jobs: int = 1,
                    config_hash: str = "") -> Dict:
    """Write the augmented copy of input_dir to output_dir; returns its manifest."""
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if input_dir.resolve() == output_dir.resolve():
        raise ValueError("augment output must differ from its input")
    listing = list_dataset(input_dir)
    for warning in listing.warnings():
        logger.warning(warning)
    (output_dir / "images").mkdir(parents=True, exist_ok=True)
    (output_dir / "labels").mkdir(parents=True, exist_ok=True)

    tasks = [(stem, input_dir, output_dir, spec, seed, longest_side, grayscale, apply_dp)
             for stem in listing.pairs]
    if jobs > 1 and len(tasks) > 1:
        with mp.get_context("spawn").Pool(jobs) as pool:
            results = list(tqdm(pool.imap(_augment_one, tasks), total=len(tasks), desc="Augmenting"))
    else:
        results = [_augment_one(t) for t in tqdm(tasks, desc="Augmenting")]

    fired = Counter(kind for _, kinds in results for kind in kinds)
    source_manifest = input_dir / "manifest.json"
    manifest = {
        "source": str(input_dir),
        "config_hash": config_hash,
        "seed": seed,
        "n_images": len(results),
        "longest_side": longest_side,
        "grayscale": grayscale,
        "fired": dict(sorted(fired.items())),
    }
    if source_manifest.exists():
        manifest["class_index"] = load_json(source_manifest).get("class_index", {})
    write_json(output_dir / "manifest.json", manifest)
    logger.info(f"Augmented {len(results)} images into {output_dir}")
    return manifest


# ================= Training-set assembly =================

def _copy_synthetic(synthetic_dir: Path, output_dir: Path, class_index: Dict[str, int]) -> int:
    manifest_path = synthetic_dir / "manifest.json"
    if manifest_path.exists():
        theirs = load_json(manifest_path).get("class_index")
        if theirs is not None and theirs != class_index:
            raise ValueError(f"{synthetic_dir} was synthesized with a different class index")
    listing = list_dataset(synthetic_dir)
    for stem in listing.pairs:
        image_path = listing.image_path(stem)
        shutil.copyfile(image_path, output_dir / "images" / image_path.name)
        shutil.copyfile(listing.label_path(stem), output_dir / "labels" / f"{stem}.txt")
    return len(listing.pairs)


def assemble_dataset(cfg: RunConfig, output_dir, synthetic_dir: Optional[str] = None) -> Dict:
    """
    Real sets of cfg.real_sets (annotated single-object images and negatives)
    plus an optional synthetic run, written as one images/ + labels/ dataset.
    Returns the manifest with per-source image counts.
    """
    output_dir = Path(output_dir)
    (output_dir / "images").mkdir(parents=True, exist_ok=True)
    (output_dir / "labels").mkdir(parents=True, exist_ok=True)
    class_index = build_class_index(cfg.class_list)

    counts = Counter()
    for name in cfg.real_sets:
        path = cfg.resolve(getattr(cfg.paths, name))
        if path is None or not Path(path).is_dir():
            logger.warning(f"{name}: no directory configured or found, skipped")
            continue
        if name == "train_a":
            images = iter_negatives(path)
        else:
            images = iter_annotated_images(path, class_index, cast_unknown=cfg.cast_unknown, source=name)
        try:
            for labeled in tqdm(images, desc=f"Assembling {name}"):
                labeled = standardize_image(labeled, cfg.longest_side)
                write_labeled_image(labeled, output_dir, f"{name}_{labeled.name}", class_index,
                                    grayscale=cfg.grayscale)
                counts[name] += 1
        except BankError as e:
            logger.warning(f"{name}: {e}")

    if synthetic_dir:
        counts["synthetic"] = _copy_synthetic(Path(synthetic_dir), output_dir, class_index)

    manifest = {
        "preset": cfg.preset,
        "config_hash": cfg.config_hash(),
        "class_index": class_index,
        "counts": dict(sorted(counts.items())),
        "n_images": sum(counts.values()),
    }
    write_json(output_dir / "manifest.json", manifest)
    return manifest
