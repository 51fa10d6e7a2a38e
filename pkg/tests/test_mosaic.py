import numpy as np
import pytest
from scipy import stats

from synthesis.mosaic import SPLIT_RANGE, mosaic_background, mosaic_split_point
from synthesis.rng import RngStream


def test_identical_gray_sources_give_gray_canvas():
    sources = [np.full((50, 70, 3), 128, dtype=np.uint8) for _ in range(4)]
    canvas = mosaic_background(sources, (160, 120), RngStream(0, "mosaic"))
    assert canvas.shape == (120, 160, 3)
    assert (canvas == 128).all()


def test_mosaic_is_deterministic(backgrounds):
    a = mosaic_background(backgrounds, (200, 150), RngStream(42, "image/0/mosaic"))
    b = mosaic_background(backgrounds, (200, 150), RngStream(42, "image/0/mosaic"))
    assert np.array_equal(a, b)
    c = mosaic_background(backgrounds, (200, 150), RngStream(42, "image/1/mosaic"))
    assert not np.array_equal(a, c)


def test_quadrants_come_from_four_distinct_sources():
    colors = [10, 70, 130, 190, 250]
    sources = [np.full((40, 40, 3), c, dtype=np.uint8) for c in colors]
    for i in range(20):
        canvas = mosaic_background(sources, (100, 80), RngStream(i, "mosaic"))
        assert len(np.unique(canvas[..., 0])) == 4


def test_fewer_than_four_sources_raise(backgrounds):
    with pytest.raises(ValueError):
        mosaic_background(backgrounds[:3], (100, 100), RngStream(0, "mosaic"))


def test_split_point_stays_central():
    for i in range(500):
        cx, cy = mosaic_split_point(1280, 960, RngStream(i, "split"))
        assert 0.2 * 1280 <= cx <= 0.8 * 1280
        assert 0.2 * 960 <= cy <= 0.8 * 960


@pytest.mark.slow
def test_split_point_is_uniform():
    lo, hi = SPLIT_RANGE
    xs = [mosaic_split_point(1280, 960, RngStream(seed, "split"))[0] / 1280 for seed in range(10000)]
    result = stats.kstest(xs, stats.uniform(loc=lo, scale=hi - lo).cdf)
    assert result.pvalue > 0.01
