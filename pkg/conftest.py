import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from data_collector.records import ObjectBank, ObjectCrop, build_class_index
from data_collector.utils import write_image, write_mask


def disk(height, width, cx, cy, r):
    yy, xx = np.ogrid[:height, :width]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


@pytest.fixture
def disk_mask():
    return disk


@pytest.fixture
def make_crop():
    """Tight crop factory: solid rectangle or disk of one color."""
    def _make(width=40, height=30, label="bun", shape="rect", color=(200, 120, 40), source_id="c0",
              origin="captured"):
        if shape == "disk":
            r = min(width, height) // 2
            mask = disk(2 * r + 1, 2 * r + 1, r, r, r)
        else:
            mask = np.ones((height, width), dtype=bool)
        patch = np.zeros(mask.shape + (3,), dtype=np.uint8)
        patch[mask] = color
        return ObjectCrop(patch, mask, label, source_id, origin)
    return _make


@pytest.fixture
def make_bank(make_crop):
    """Bank with the given number of small crops per class."""
    def _make(counts, class_list=None, **crop_kwargs):
        crops = []
        for label, n in counts.items():
            for i in range(n):
                crops.append(make_crop(label=label, source_id=f"{label}_{i}", **crop_kwargs))
        return ObjectBank(crops, build_class_index(class_list or sorted(counts)))
    return _make


@pytest.fixture
def backgrounds():
    rng = np.random.default_rng(0)
    return [rng.integers(0, 256, size=(120, 160, 3), dtype=np.uint8) for _ in range(5)]


@pytest.fixture
def write_bank_dir():
    """Write crops in the annotate output layout."""
    def _write(folder, crops):
        folder.mkdir(parents=True, exist_ok=True)
        for crop in crops:
            write_image(folder / f"{crop.source_id}.crop.png", crop.patch)
            write_mask(folder / f"{crop.source_id}.mask.png", crop.mask)
            (folder / f"{crop.source_id}.label").write_text(crop.class_label + "\n", encoding="utf-8")
        return folder
    return _write
