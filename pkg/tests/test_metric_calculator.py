import numpy as np
import pytest

from raster.geometry import BBox
from data_collector.dataset_io import write_labeled_image
from data_collector.records import Annotation, LabeledImage, build_class_index
from data_collector.utils import write_json
from evaluation.metric_calculator import ClassDistribution, MetricCalculator

CLASS_INDEX = build_class_index(["bun", "pretzel", "roll"])


def write_dataset(folder, images, band=None):
    for i, img in enumerate(images):
        write_labeled_image(img, folder, f"img_{i:03d}", CLASS_INDEX)
    manifest = {"class_index": CLASS_INDEX}
    if band is not None:
        manifest["area_fraction_band"] = list(band)
    write_json(folder / "manifest.json", manifest)
    return folder


def image(*boxes, width=100, height=100):
    return LabeledImage(np.zeros((height, width, 3), dtype=np.uint8),
                        [Annotation(label, BBox(*box)) for label, box in boxes])


# ---------- class distribution ----------

def test_distribution_of_a_bank(make_bank):
    dist = MetricCalculator.class_distribution(make_bank({"bun": 3, "roll": 1}))
    assert dist.counts == {"bun": 3, "roll": 1}
    assert dist.share("bun") == pytest.approx(0.75)
    assert dist.total == 4


def test_distribution_of_images_and_labels():
    images = [image(("bun", (0, 0, 10, 10)), ("roll", (20, 20, 30, 30))), image(("bun", (5, 5, 9, 9)))]
    dist = MetricCalculator.class_distribution(images, class_names=["bun", "pretzel", "roll"])
    assert dist.counts == {"bun": 2, "pretzel": 0, "roll": 1}
    assert MetricCalculator.class_distribution(["a", "b", "a"]).counts == {"a": 2, "b": 1}


def test_shares_sum_to_one():
    dist = MetricCalculator.class_distribution(["a"] * 4 + ["b"] * 6)
    assert dist.share("a") == pytest.approx(0.4)
    assert sum(dist.shares().values()) == pytest.approx(1.0, abs=1e-9)


def test_empty_distribution_has_zero_shares():
    dist = ClassDistribution({"bun": 0})
    assert dist.share("bun") == 0.0
    assert dist.to_dict() == {"bun": {"count": 0, "share": 0.0}}


# ---------- dataset_stats ----------

def test_dataset_stats(tmp_path):
    images = [
        image(("bun", (0, 0, 20, 20)), ("roll", (50, 50, 60, 60))),
        image(("bun", (10, 10, 40, 40))),
        image(),
    ]
    folder = write_dataset(tmp_path / "ds", images)
    stats = MetricCalculator.dataset_stats(folder)
    assert stats["n_images"] == 3
    assert stats["n_annotations"] == 3
    assert stats["objects_per_image"] == {"mean": 1.0, "min": 0, "max": 2}
    assert stats["per_class"]["bun"]["count"] == 2
    assert stats["per_class"]["pretzel"]["count"] == 0
    assert stats["area_fraction"]["min"] == pytest.approx(0.01)
    assert stats["area_fraction"]["max"] == pytest.approx(0.09)
    assert sum(b["count"] for b in stats["area_fraction"]["histogram"]) == 3
    assert stats["warnings"] == []


def test_stats_of_empty_dataset(tmp_path):
    (tmp_path / "ds").mkdir()
    stats = MetricCalculator.dataset_stats(tmp_path / "ds")
    assert stats["n_images"] == 0
    assert stats["objects_per_image"]["mean"] == 0.0


def test_stats_without_manifest_use_numeric_ids(tmp_path):
    folder = tmp_path / "ds"
    write_labeled_image(image(("pretzel", (0, 0, 10, 10))), folder, "x", CLASS_INDEX)
    stats = MetricCalculator.dataset_stats(folder)
    assert stats["per_class"] == {"1": {"count": 1, "share": 1.0}}


def test_stats_report_orphans_and_bad_labels(tmp_path):
    folder = write_dataset(tmp_path / "ds", [image(("bun", (0, 0, 10, 10)))])
    (folder / "labels" / "ghost.txt").write_text("")
    (folder / "labels" / "img_000.txt").write_text("0 0.5 0.5\n")
    stats = MetricCalculator.dataset_stats(folder)
    assert stats["n_images"] == 0
    assert any("ghost" in w for w in stats["warnings"])
    assert any("img_000" in w for w in stats["warnings"])


# ---------- validate_dataset ----------

def test_valid_dataset_has_no_violations(tmp_path):
    folder = write_dataset(tmp_path / "ds", [image(("bun", (0, 0, 20, 20)), ("roll", (40, 40, 80, 80)))],
                           band=(0.03, 0.25))
    violations, warnings = MetricCalculator.validate_dataset(folder)
    assert violations == [] and warnings == []


def test_out_of_range_coordinate_is_a_violation(tmp_path):
    folder = write_dataset(tmp_path / "ds", [image(("bun", (0, 0, 20, 20)))])
    (folder / "labels" / "img_000.txt").write_text("0 1.200000 0.500000 0.100000 0.100000\n")
    violations, _ = MetricCalculator.validate_dataset(folder)
    assert len(violations) == 1
    assert "img_000.txt" in violations[0] and "line 1" in violations[0]


def test_band_and_class_violations(tmp_path):
    folder = write_dataset(tmp_path / "ds", [image(("bun", (0, 0, 10, 10)))], band=(0.03, 0.25))
    (folder / "labels" / "img_000.txt").write_text(
        "0 0.050000 0.050000 0.100000 0.100000\n9 0.500000 0.500000 0.200000 0.200000\n")
    violations, _ = MetricCalculator.validate_dataset(folder)
    assert len(violations) == 2
    assert "area fraction" in violations[0]
    assert "class id 9" in violations[1]


def test_explicit_band_overrides_manifest(tmp_path):
    folder = write_dataset(tmp_path / "ds", [image(("bun", (0, 0, 10, 10)))], band=(0.03, 0.25))
    violations, _ = MetricCalculator.validate_dataset(folder, scale_band=(0.0, 1.0))
    assert violations == []


def test_unreadable_image_is_a_violation(tmp_path):
    folder = write_dataset(tmp_path / "ds", [image(("bun", (0, 0, 20, 20)))])
    (folder / "images" / "img_000.png").write_bytes(b"not a png")
    violations, _ = MetricCalculator.validate_dataset(folder)
    assert len(violations) == 1
    assert "img_000.png" in violations[0] and "unreadable image" in violations[0]


def test_empty_dataset_only_warns(tmp_path):
    (tmp_path / "ds").mkdir()
    violations, warnings = MetricCalculator.validate_dataset(tmp_path / "ds")
    assert violations == []
    assert len(warnings) == 1


# ---------- plotting ----------

def test_plot_class_shares(tmp_path):
    from evaluation.visualize import plot_class_shares
    per_class = {"bun": {"count": 3, "share": 0.75}, "roll": {"count": 1, "share": 0.25}}
    out = plot_class_shares(per_class, str(tmp_path / "plots" / "shares.png"))
    assert out is not None and (tmp_path / "plots" / "shares.png").stat().st_size > 0
    assert plot_class_shares({}, str(tmp_path / "none.png")) is None
