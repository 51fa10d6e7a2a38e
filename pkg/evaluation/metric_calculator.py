import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from PIL import Image

from data_collector.records import Annotation, LabeledImage, ObjectBank
from data_collector.dataset_io import (
    LabelLine, denormalize, export_labels, list_dataset, parse_labels,
)
from data_collector.utils import load_json

logger = logging.getLogger(__name__)

# Area-fraction histogram edges: 1% bins up to 30%, one overflow bin
AREA_BIN_EDGES = [round(0.01 * i, 2) for i in range(31)] + [1.0]
# Slack for 6-decimal label rounding in the scale band check
BAND_SLACK = 1e-4


@dataclass
class ClassDistribution:
    counts: Dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def share(self, label: str) -> float:
        total = self.total
        return self.counts.get(label, 0) / total if total else 0.0

    def shares(self) -> Dict[str, float]:
        return {label: self.share(label) for label in self.counts}

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {label: {"count": n, "share": self.share(label)} for label, n in sorted(self.counts.items())}


class MetricCalculator:

    @staticmethod
    def class_distribution(items: Union[ObjectBank, Iterable[LabeledImage], Iterable[str]],
                           class_names: Optional[Iterable[str]] = None) -> ClassDistribution:
        """
        Count crops of a bank, annotations of labeled images or bare labels.
        Classes named in class_names are reported even with zero count.
        """
        if isinstance(items, ObjectBank):
            labels = [c.class_label for c in items.crops]
        else:
            labels = []
            for item in items:
                if isinstance(item, LabeledImage):
                    labels.extend(a.class_label for a in item.annotations)
                else:
                    labels.append(item)
        counts = Counter({name: 0 for name in class_names or ()})
        counts.update(labels)
        return ClassDistribution(dict(counts))

    @staticmethod
    def class_names_for(dataset_dir) -> Dict[int, str]:
        """id -> name from the dataset's manifest.json, or empty when there is none."""
        manifest = Path(dataset_dir) / "manifest.json"
        if not manifest.exists():
            return {}
        index = load_json(manifest).get("class_index", {})
        return {int(i): name for name, i in index.items()}

    @staticmethod
    def dataset_stats(dataset_dir, class_names: Optional[Dict[int, str]] = None) -> Dict:
        """
        Image and annotation counts, objects per image, per-class histogram and
        area-fraction histogram of an images/ + labels/ dataset. Orphan files
        and unparsable labels are reported under "warnings".
        """
        listing = list_dataset(dataset_dir)
        if class_names is None:
            class_names = MetricCalculator.class_names_for(dataset_dir)
        warnings = listing.warnings()

        per_image = []
        per_class = Counter({name: 0 for name in class_names.values()})
        fractions = []
        for stem in listing.pairs:
            try:
                entries = parse_labels(listing.label_path(stem).read_text(encoding="utf-8"))
            except ValueError as e:
                warnings.append(f"{stem}: {e}")
                continue
            per_image.append(len(entries))
            for e in entries:
                per_class[class_names.get(e.class_id, str(e.class_id))] += 1
                fractions.append(e.w * e.h)

        counts = np.array(per_image, dtype=np.int64)
        hist, _ = np.histogram(np.array(fractions, dtype=np.float64), bins=AREA_BIN_EDGES)
        distribution = ClassDistribution(dict(per_class))
        return {
            "dataset": str(listing.root),
            "n_images": len(per_image),
            "n_annotations": int(counts.sum()),
            "objects_per_image": {
                "mean": float(counts.mean()) if counts.size else 0.0,
                "min": int(counts.min()) if counts.size else 0,
                "max": int(counts.max()) if counts.size else 0,
            },
            "per_class": distribution.to_dict(),
            "area_fraction": {
                "min": float(min(fractions)) if fractions else 0.0,
                "max": float(max(fractions)) if fractions else 0.0,
                "histogram": [{"lo": lo, "hi": hi, "count": int(n)}
                              for lo, hi, n in zip(AREA_BIN_EDGES[:-1], AREA_BIN_EDGES[1:], hist)],
            },
            "warnings": warnings,
        }

    @staticmethod
    def _round_trip_error(entry: LabelLine, width: int, height: int) -> int:
        """Largest pixel drift of a box after denormalize -> export -> parse -> denormalize."""
        box = denormalize(entry, width, height)
        img = LabeledImage(np.broadcast_to(np.zeros((1, 1, 3), dtype=np.uint8), (height, width, 3)),
                           [Annotation("x", box)], source="test")
        again = denormalize(parse_labels(export_labels(img, {"x": entry.class_id}))[0], width, height)
        return max(abs(a - b) for a, b in zip(box.as_tuple(), again.as_tuple()))

    @staticmethod
    def validate_dataset(dataset_dir,
                         scale_band: Optional[Tuple[float, float]] = None) -> Tuple[List[str], List[str]]:
        """
        Check every label file: strict parsing (normalized coordinates, box
        inside the image), known class ids, the 1-px round trip and, when a
        band is given or the manifest carries one, the area-fraction band.
        Returns (violations, warnings); violations name their file.
        """
        listing = list_dataset(dataset_dir)
        warnings = listing.warnings()
        manifest_path = Path(dataset_dir) / "manifest.json"
        manifest = load_json(manifest_path) if manifest_path.exists() else {}
        if scale_band is None and "area_fraction_band" in manifest:
            scale_band = tuple(manifest["area_fraction_band"])
        known_ids = set(manifest.get("class_index", {}).values())
        if not listing.pairs:
            warnings.append(f"no image/label pairs in {listing.root}")

        violations = []
        for stem in listing.pairs:
            label_file = listing.label_path(stem)
            try:
                entries = parse_labels(label_file.read_text(encoding="utf-8"))
            except ValueError as e:
                violations.append(f"{label_file}: {e}")
                continue
            image_path = listing.image_path(stem)
            try:
                width, height = _image_size(image_path)
            except OSError:
                violations.append(f"{image_path}: unreadable image")
                continue
            for lineno, e in enumerate(entries, 1):
                if known_ids and e.class_id not in known_ids:
                    violations.append(f"{label_file}: line {lineno}: class id {e.class_id} not in class index")
                if MetricCalculator._round_trip_error(e, width, height) > 1:
                    violations.append(f"{label_file}: line {lineno}: round trip drifts more than 1 px")
                if scale_band is not None:
                    frac = e.w * e.h
                    if not scale_band[0] - BAND_SLACK <= frac <= scale_band[1] + BAND_SLACK:
                        violations.append(f"{label_file}: line {lineno}: area fraction {frac:.4f} "
                                          f"outside [{scale_band[0]:.4f}, {scale_band[1]:.4f}]")
        return violations, warnings


def _image_size(path) -> Tuple[int, int]:
    with Image.open(path) as img:
        return img.size
