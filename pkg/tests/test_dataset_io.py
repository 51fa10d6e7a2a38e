import numpy as np
import pytest

from raster.geometry import BBox
from data_collector.dataset_io import (
    LabelLine,
    denormalize,
    export_labels,
    list_dataset,
    load_labeled_image,
    parse_labels,
    standardize_image,
    write_labeled_image,
)
from data_collector.records import Annotation, LabeledImage
from data_collector.utils import write_image

CLASS_INDEX = {"bun": 0, "croissant": 1, "pretzel": 2, "roll": 3}


def blank(width, height, annotations=(), source="synthetic"):
    return LabeledImage(np.zeros((height, width, 3), dtype=np.uint8), list(annotations), source=source)


def random_image(rng, max_objects=8):
    width, height = int(rng.integers(32, 2000)), int(rng.integers(32, 2000))
    annotations = []
    for _ in range(int(rng.integers(0, max_objects + 1))):
        x0, y0 = int(rng.integers(0, width - 1)), int(rng.integers(0, height - 1))
        x1, y1 = int(rng.integers(x0 + 1, width + 1)), int(rng.integers(y0 + 1, height + 1))
        label = list(CLASS_INDEX)[int(rng.integers(0, len(CLASS_INDEX)))]
        annotations.append(Annotation(label, BBox(x0, y0, x1, y1)))
    return blank(width, height, annotations)


# ---------- export / parse ----------

def test_export_example():
    img = blank(100, 100, [Annotation("roll", BBox(25, 25, 75, 75))])
    assert export_labels(img, CLASS_INDEX) == "3 0.500000 0.500000 0.500000 0.500000\n"


def test_export_without_annotations_is_empty():
    assert export_labels(blank(50, 40), CLASS_INDEX) == ""
    assert parse_labels("") == []


def test_export_full_image_box():
    img = blank(64, 48, [Annotation("bun", BBox(0, 0, 64, 48))])
    assert export_labels(img, CLASS_INDEX) == "0 0.500000 0.500000 1.000000 1.000000\n"


def test_export_unknown_label_raises():
    with pytest.raises(KeyError):
        export_labels(blank(10, 10, [Annotation("bagel", BBox(0, 0, 5, 5))]), CLASS_INDEX)


@pytest.mark.parametrize("text", [
    "0 0.5 0.5 0.2\n",
    "0 0.5 0.5 0.2 0.2 0.1\n",
    "x 0.5 0.5 0.2 0.2\n",
    "0 1.2 0.5 0.2 0.2\n",
    "0 0.5 0.5 0.0 0.2\n",
    "0 0.95 0.5 0.2 0.2\n",
    "-1 0.5 0.5 0.2 0.2\n",
])
def test_parse_rejects_bad_lines(text):
    with pytest.raises(ValueError) as exc:
        parse_labels("1 0.5 0.5 0.1 0.1\n" + text)
    assert "line 2" in str(exc.value)


def test_lenient_parse_keeps_out_of_range_values():
    (entry,) = parse_labels("0 1.2 0.5 0.2 0.2\n", strict=False)
    assert entry == LabelLine(0, 1.2, 0.5, 0.2, 0.2)


def test_parse_skips_blank_lines():
    entries = parse_labels("0 0.5 0.5 0.2 0.2\n\n2 0.25 0.25 0.1 0.1\n")
    assert [e.class_id for e in entries] == [0, 2]


def test_round_trip_within_one_pixel():
    rng = np.random.default_rng(8)
    for _ in range(200):
        img = random_image(rng)
        entries = parse_labels(export_labels(img, CLASS_INDEX))
        assert len(entries) == len(img.annotations)
        for entry, ann in zip(entries, img.annotations):
            assert entry.class_id == CLASS_INDEX[ann.class_label]
            box = denormalize(entry, img.width, img.height)
            assert max(abs(a - b) for a, b in zip(box.as_tuple(), ann.bbox.as_tuple())) <= 1


# ---------- standardize_image ----------

def test_standardize_halves_large_images():
    img = blank(2560, 1920, [Annotation("bun", BBox(100, 200, 300, 600))])
    out = standardize_image(img, 1280)
    assert (out.width, out.height) == (1280, 960)
    assert out.annotations[0].bbox == BBox(50, 100, 150, 300)


def test_standardize_keeps_conforming_images():
    img = blank(1280, 720, [Annotation("bun", BBox(1, 2, 3, 4))])
    assert standardize_image(img, 1280) is img


def test_standardize_upscales_small_images():
    img = blank(640, 480, [Annotation("bun", BBox(10, 20, 30, 40))])
    out = standardize_image(img, 1280)
    assert (out.width, out.height) == (1280, 960)
    assert out.annotations[0].bbox == BBox(20, 40, 60, 80)


def test_standardize_rejects_tiny_targets():
    with pytest.raises(ValueError):
        standardize_image(blank(100, 100), 16)


def test_standardize_preserves_area_fractions():
    rng = np.random.default_rng(9)
    sizes = [(2560, 1920), (1920, 1440), (1600, 1200), (640, 480), (1024, 1024), (1440, 1920)]
    for i in range(100):
        width, height = sizes[i % len(sizes)]
        annotations = []
        for _ in range(4):
            w, h = int(rng.integers(1, width // 2)), int(rng.integers(1, height // 2))
            x0, y0 = int(rng.integers(0, width - w)), int(rng.integers(0, height - h))
            annotations.append(Annotation("bun", BBox(x0, y0, x0 + w, y0 + h)))
        img = blank(width, height, annotations)
        out = standardize_image(img, 1280)
        assert max(out.width, out.height) == 1280
        for before, after in zip(img.annotations, out.annotations):
            f_before = before.bbox.area / (img.width * img.height)
            f_after = after.bbox.area / (out.width * out.height)
            assert abs(f_before - f_after) <= 1e-3
            assert after.bbox.inside(out.width, out.height)


# ---------- directory layout ----------

def test_list_dataset_reports_orphans(tmp_path):
    pixels = np.zeros((8, 8, 3), dtype=np.uint8)
    (tmp_path / "labels").mkdir()
    for stem in ("a", "b", "c"):
        write_image(tmp_path / "images" / f"{stem}.png", pixels)
    for stem in ("a", "b", "d"):
        (tmp_path / "labels" / f"{stem}.txt").write_text("")
    listing = list_dataset(tmp_path)
    assert listing.pairs == ["a", "b"]
    assert listing.orphan_images == ["c"]
    assert listing.orphan_labels == ["d"]
    assert len(listing.warnings()) == 2


def test_list_dataset_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        list_dataset(tmp_path / "nope")


def test_write_and_load_labeled_image(tmp_path):
    img = blank(120, 80, [Annotation("pretzel", BBox(10, 10, 50, 40)), Annotation("bun", BBox(60, 0, 120, 80))])
    img.image[:] = (90, 60, 30)
    write_labeled_image(img, tmp_path, "sample", CLASS_INDEX)
    assert (tmp_path / "labels" / "sample.txt").read_text().count("\n") == 2

    names = {i: name for name, i in CLASS_INDEX.items()}
    loaded = load_labeled_image(list_dataset(tmp_path), "sample", names)
    assert loaded.annotations == img.annotations
    assert np.array_equal(loaded.image, img.image)


def test_grayscale_export_equalizes_channels(tmp_path):
    img = blank(20, 20)
    img.image[:] = np.random.default_rng(0).integers(0, 256, size=(20, 20, 3), dtype=np.uint8)
    write_labeled_image(img, tmp_path, "g", CLASS_INDEX, grayscale=True)
    loaded = load_labeled_image(list_dataset(tmp_path), "g", {})
    assert np.array_equal(loaded.image[..., 0], loaded.image[..., 1])
    assert np.array_equal(loaded.image[..., 1], loaded.image[..., 2])
    assert (tmp_path / "labels" / "g.txt").read_text() == ""
