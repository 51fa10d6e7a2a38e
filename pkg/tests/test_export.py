import numpy as np
import pytest

from raster.geometry import BBox
from data_collector.auto_annotate import annotate_directory
from data_collector.dataset_io import list_dataset, load_labeled_image, parse_labels, write_labeled_image
from data_collector.records import Annotation, LabeledImage, build_class_index
from data_collector.utils import load_json, write_image, write_json, write_mask
from synthesis.config import AugmentationSpec, SynthesisConfig, load_run_config
from synthesis.copy_paste import synthesize_dataset
from synthesis.export import assemble_dataset, augment_dataset

CLASSES = ["bun", "pretzel"]
CLASS_INDEX = build_class_index(CLASSES)


def tree(folder):
    return {p.relative_to(folder).as_posix(): p.read_bytes() for p in sorted(folder.rglob("*")) if p.is_file()}


@pytest.fixture
def small_dataset(tmp_path):
    rng = np.random.default_rng(1)
    folder = tmp_path / "ds"
    for i in range(3):
        img = LabeledImage(rng.integers(0, 256, size=(120, 160, 3), dtype=np.uint8),
                           [Annotation("bun", BBox(10, 10, 50, 40)), Annotation("pretzel", BBox(70, 30, 150, 110))])
        write_labeled_image(img, folder, f"s{i}", CLASS_INDEX)
    write_json(folder / "manifest.json", {"class_index": CLASS_INDEX})
    return folder


# ---------- augment_dataset ----------

def test_zero_probability_keeps_labels_byte_identical(small_dataset, tmp_path):
    spec = AugmentationSpec(spatial_probability=0.0, pixel_probability=0.0)
    manifest = augment_dataset(small_dataset, tmp_path / "out", spec, seed=1, longest_side=160)
    assert manifest["n_images"] == 3
    assert manifest["fired"] == {}
    assert manifest["class_index"] == CLASS_INDEX
    for stem in ("s0", "s1", "s2"):
        before = (small_dataset / "labels" / f"{stem}.txt").read_bytes()
        assert (tmp_path / "out" / "labels" / f"{stem}.txt").read_bytes() == before
        original = load_labeled_image(list_dataset(small_dataset), stem, {0: "0", 1: "1"})
        copied = load_labeled_image(list_dataset(tmp_path / "out"), stem, {0: "0", 1: "1"})
        assert np.array_equal(original.image, copied.image)


def test_augment_standardizes_size(small_dataset, tmp_path):
    spec = AugmentationSpec(spatial_probability=0.0, pixel_probability=0.0)
    augment_dataset(small_dataset, tmp_path / "out", spec, seed=1, longest_side=320)
    loaded = load_labeled_image(list_dataset(tmp_path / "out"), "s0", {0: "bun", 1: "pretzel"})
    assert loaded.image.shape == (240, 320, 3)
    assert loaded.annotations[0] == Annotation("bun", BBox(20, 20, 100, 80))


def test_augment_is_reproducible(small_dataset, tmp_path):
    spec = AugmentationSpec(spatial_probability=1.0, pixel_probability=1.0)
    first = augment_dataset(small_dataset, tmp_path / "a", spec, seed=4, longest_side=160)
    augment_dataset(small_dataset, tmp_path / "b", spec, seed=4, longest_side=160)
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert all(n == 3 for n in first["fired"].values())
    for stem in list_dataset(tmp_path / "a").pairs:
        parse_labels((tmp_path / "a" / "labels" / f"{stem}.txt").read_text())


def test_dropout_only_keeps_label_bytes(tmp_path):
    folder = tmp_path / "ds"
    (folder / "images").mkdir(parents=True)
    (folder / "labels").mkdir()
    rng = np.random.default_rng(5)
    write_image(folder / "images" / "odd.png", rng.integers(0, 256, size=(960, 1280, 3), dtype=np.uint8))
    label = "0 0.333333 0.333333 0.111111 0.111111\n"
    (folder / "labels" / "odd.txt").write_text(label)
    spec = AugmentationSpec(spatial_probability=1.0, pixel_probability=0.0, rotate_limit=(0.0, 0.0),
                            scale_range=(1.0, 1.0))
    manifest = augment_dataset(folder, tmp_path / "out", spec, seed=2, longest_side=1280)
    assert manifest["fired"] == {"coarse_dropout": 1, "pixel_dropout": 1, "rotate": 1, "scale": 1}
    assert (tmp_path / "out" / "labels" / "odd.txt").read_text() == label


def test_augment_refuses_in_place(small_dataset):
    with pytest.raises(ValueError):
        augment_dataset(small_dataset, small_dataset, AugmentationSpec(), seed=0)


def test_augment_can_skip_online_chain(small_dataset, tmp_path):
    spec = AugmentationSpec(spatial_probability=1.0, pixel_probability=1.0)
    manifest = augment_dataset(small_dataset, tmp_path / "out", spec, seed=0, longest_side=160, apply_dp=False)
    assert manifest["fired"] == {}


# ---------- assemble_dataset ----------

@pytest.fixture
def real_sets(tmp_path):
    raw = tmp_path / "raw"
    image = np.full((60, 80, 3), 120, dtype=np.uint8)
    for image_id, label, box in (("a", "bun", (10, 10, 30, 20)), ("b", "pretzel", (40, 20, 25, 25))):
        write_image(raw / f"{image_id}.png", image)
        (raw / f"{image_id}.label").write_text(label + "\n")
        mask = np.zeros((60, 80), dtype=bool)
        x, y, w, h = box
        mask[y:y + h, x:x + w] = True
        write_mask(raw / f"{image_id}.masks" / "00.png", mask)
    annotate_directory(raw, tmp_path / "banks" / "train_b")
    for name in ("n1", "n2"):
        write_image(tmp_path / "negatives" / f"{name}.png", np.zeros((40, 40, 3), dtype=np.uint8))
    return tmp_path


def run_config(root, **extra):
    overrides = {
        "root": str(root),
        "class_list": CLASSES,
        "longest_side": 160,
        "paths": {"train_b": "banks/train_b", "train_a": "negatives"},
    }
    overrides.update(extra)
    return load_run_config(overrides=overrides)


def test_assemble_real_sets(real_sets, tmp_path):
    cfg = run_config(real_sets)
    manifest = assemble_dataset(cfg, tmp_path / "train")
    assert manifest["counts"] == {"train_a": 2, "train_b": 2}
    assert manifest["n_images"] == 4
    listing = list_dataset(tmp_path / "train")
    assert listing.pairs == ["train_a_n1", "train_a_n2", "train_b_a", "train_b_b"]
    assert (tmp_path / "train" / "labels" / "train_a_n1.txt").read_text() == ""

    names = {i: name for name, i in CLASS_INDEX.items()}
    bun = load_labeled_image(listing, "train_b_a", names)
    assert bun.image.shape == (120, 160, 3)
    assert bun.annotations == [Annotation("bun", BBox(20, 20, 80, 60))]


def test_assemble_skips_missing_sets(real_sets, tmp_path):
    cfg = run_config(real_sets, real_sets=["train_a", "train_b", "train_c"])
    manifest = assemble_dataset(cfg, tmp_path / "train")
    assert "train_c" not in manifest["counts"]


def test_assemble_with_synthetic_run(real_sets, tmp_path, make_bank, backgrounds):
    bank = make_bank({"bun": 2}, class_list=CLASSES, shape="disk")
    synth = tmp_path / "synth"
    syn_cfg = SynthesisConfig(canvas_width=160, canvas_height=120, object_count_range=(1, 2), seed=2)
    synthesize_dataset(bank, backgrounds, syn_cfg, 2, synth, run_name="run")
    manifest = assemble_dataset(run_config(real_sets), tmp_path / "train", str(synth))
    assert manifest["counts"]["synthetic"] == 2
    assert "run_000001" in list_dataset(tmp_path / "train").pairs
    assert load_json(tmp_path / "train" / "manifest.json") == manifest


def test_assemble_rejects_foreign_class_index(real_sets, tmp_path):
    synth = tmp_path / "synth"
    synth.mkdir()
    write_json(synth / "manifest.json", {"class_index": {"baguette": 0}})
    with pytest.raises(ValueError):
        assemble_dataset(run_config(real_sets), tmp_path / "train", str(synth))
