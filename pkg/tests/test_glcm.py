import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixsearch.errors import ConfigError, DataError
from fixsearch.glcm import (GlcmConfig, assign_windows, compute_glcm, glcm_at_points,
                            glcm_contrast, glcm_feature_maps, glcm_mean, glcm_tiles,
                            point_window, window_starts)
from fixsearch.imagio import GrayImage, quantize
from oracles import glcm_counts_bruteforce, glcm_features_bruteforce

OFFSETS = [(1, 0), (0, 1), (1, 1), (-1, 1)]


def test_hand_pair_enumeration():
    g = compute_glcm(np.array([[0, 1], [0, 1]]), (1, 0), 2)
    assert g.p.tolist() == [[0.0, 1.0], [0.0, 0.0]]
    assert glcm_mean(g) == 0.0
    assert glcm_contrast(g) == 1.0


@pytest.mark.parametrize("offset", OFFSETS + [(2, -3)])
def test_constant_patch_point_mass(offset):
    g = compute_glcm(np.full((6, 6), 3), offset, 8)
    assert g.p[3, 3] == 1.0
    assert glcm_mean(g) == 3.0
    assert glcm_contrast(g) == 0.0


def test_uniform_matrix_mean():
    from fixsearch.glcm import Glcm
    g = Glcm(4, np.full((4, 4), 1 / 16), np.ones((4, 4), dtype=np.int64))
    assert glcm_mean(g) == pytest.approx(1.5, abs=1e-15)


def test_checkerboard_contrast():
    G = 16
    board = (np.indices((8, 8)).sum(axis=0) % 2) * (G - 1)
    assert glcm_contrast(compute_glcm(board, (1, 0), G)) == (G - 1) ** 2


def test_empty_domain_raises():
    with pytest.raises(DataError, match="empty co-occurrence domain"):
        compute_glcm(np.zeros((1, 3), dtype=int), (0, 1), 2)


def test_random_patches_match_bruteforce():
    rng = np.random.default_rng(7)
    for _ in range(100):
        patch = rng.integers(0, 4, size=(8, 8))
        for off in [(1, 0), (0, 1), (1, 1)]:
            g = compute_glcm(patch, off, 4)
            assert np.array_equal(g.counts, glcm_counts_bruteforce(patch, off, 4))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(3, 12), st.integers(3, 12), st.sampled_from(OFFSETS),
       st.integers(0, 2**32 - 1))
def test_invariants(levels, h, w, offset, seed):
    patch = np.random.default_rng(seed).integers(0, levels, size=(h, w))
    g = compute_glcm(patch, offset, levels)
    assert abs(g.p.sum() - 1.0) <= 1e-12
    assert (g.p >= 0).all()
    c = glcm_contrast(g)
    assert c >= 0
    assert (c == 0) == bool(np.all(g.p[~np.eye(levels, dtype=bool)] == 0))
    assert 0 <= glcm_mean(g) <= levels - 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.sampled_from(OFFSETS))
def test_gray_shift_covariance(levels, seed, offset):
    k = 3
    patch = np.random.default_rng(seed).integers(0, levels, size=(7, 9))
    g0 = compute_glcm(patch, offset, levels + k)
    g1 = compute_glcm(patch + k, offset, levels + k)
    assert glcm_mean(g1) == pytest.approx(glcm_mean(g0) + k, abs=1e-12)
    assert glcm_contrast(g1) == pytest.approx(glcm_contrast(g0), abs=1e-12)


def test_config_invariants():
    with pytest.raises(ConfigError, match="levels must be >= 2"):
        GlcmConfig(levels=1)
    with pytest.raises(ConfigError):
        GlcmConfig(window=4, offset=(4, 0))
    with pytest.raises(ConfigError):
        GlcmConfig(stride=0)


# --------------------------------------------------------------------------- #
# window geometry and maps
# --------------------------------------------------------------------------- #
def test_window_starts_cover_edge():
    assert window_starts(512, 100, 100).tolist() == [0, 100, 200, 300, 400, 412]
    assert window_starts(300, 100, 100).tolist() == [0, 100, 200]
    with pytest.raises(DataError):
        window_starts(50, 100, 100)


def test_assign_tiles_and_dense():
    starts = window_starts(300, 100, 100)
    a = assign_windows(300, starts, 100)
    assert a[0] == 0 and a[99] == 0 and a[100] == 1 and a[299] == 2
    dense = window_starts(50, 10, 1)
    d = assign_windows(50, dense, 10)
    # interior pixel c -> window starting at c - window // 2
    assert all(dense[d[c]] == c - 5 for c in range(5, 45))


def test_constant_image_maps():
    img = GrayImage(np.full((64, 64), 7.0))
    mean, contrast = glcm_feature_maps(img, GlcmConfig(levels=16, window=16))
    assert mean.shape == (64, 64)
    assert np.all(mean == 0) and np.all(contrast == 0)


def test_two_halves_plateaus():
    data = np.zeros((40, 80))
    data[:, 40:] = 10.0
    img = GrayImage(data)
    cfg = GlcmConfig(levels=8, window=20)
    mean, contrast = glcm_feature_maps(img, cfg)
    q = quantize(img, 8).data
    left = compute_glcm(q[:20, :20], (1, 0), 8)
    right = compute_glcm(q[:20, 60:], (1, 0), 8)
    assert np.all(mean[:, :40] == glcm_mean(left))
    assert np.all(mean[:, 40:] == glcm_mean(right))
    assert glcm_mean(left) != glcm_mean(right)
    assert np.all(contrast == 0)


@pytest.mark.parametrize("offset", OFFSETS)
@pytest.mark.parametrize("stride", [None, 7])
def test_tiles_match_compute_glcm(offset, stride):
    rng = np.random.default_rng(11)
    img = GrayImage(rng.normal(size=(73, 61)))
    cfg = GlcmConfig(levels=12, window=16, offset=offset, stride=stride)
    tiles = glcm_tiles(img, cfg)
    q = quantize(img, 12).data
    for i, y0 in enumerate(tiles.starts_y):
        for j, x0 in enumerate(tiles.starts_x):
            g = compute_glcm(q[y0:y0 + 16, x0:x0 + 16], offset, 12)
            assert tiles.mean[i, j] == pytest.approx(glcm_mean(g), abs=1e-12)
            assert tiles.contrast[i, j] == pytest.approx(glcm_contrast(g), abs=1e-12)


def test_feature_map_tile_assignment():
    rng = np.random.default_rng(5)
    img = GrayImage(rng.normal(size=(50, 50)))
    cfg = GlcmConfig(levels=8, window=20)
    mean, _ = glcm_feature_maps(img, cfg)
    q = quantize(img, 8).data
    # pixel (x=45, y=5) lies in the flush-right tile starting at column 30
    g = compute_glcm(q[0:20, 30:50], (1, 0), 8)
    assert mean[5, 45] == pytest.approx(glcm_mean(g), abs=1e-12)


def test_image_smaller_than_window():
    with pytest.raises(DataError):
        glcm_feature_maps(GrayImage(np.zeros((10, 10))), GlcmConfig(window=20))


# --------------------------------------------------------------------------- #
# points
# --------------------------------------------------------------------------- #
def test_points_constant_image():
    img = GrayImage(np.full((30, 30), 2.0))
    assert glcm_at_points(img, [(15, 15)], GlcmConfig(levels=8, window=10)) == [(0.0, 0.0)]


def test_points_empty():
    assert glcm_at_points(GrayImage(np.zeros((4, 4))), [], GlcmConfig(window=2)) == []


def test_interior_point_matches_dense_map():
    rng = np.random.default_rng(2)
    img = GrayImage(rng.normal(size=(60, 70)))
    cfg = GlcmConfig(levels=10, window=15, stride=1)
    mean, contrast = glcm_feature_maps(img, cfg)
    for x, y in [(30, 30), (20, 41), (50, 12)]:
        m, c = glcm_at_points(img, [(x, y)], cfg)[0]
        assert m == pytest.approx(mean[y, x], abs=1e-12)
        assert c == pytest.approx(contrast[y, x], abs=1e-12)


def test_corner_point_uses_clipped_window():
    rng = np.random.default_rng(4)
    img = GrayImage(rng.normal(size=(40, 40)))
    cfg = GlcmConfig(levels=6, window=12)
    y0, y1, x0, x1 = point_window(0, 0, img.shape, 12)
    assert (y0, y1, x0, x1) == (0, 6, 0, 6)
    q = quantize(img, 6).data
    g = compute_glcm(q[y0:y1, x0:x1], (1, 0), 6)
    assert glcm_at_points(img, [(0, 0)], cfg)[0] == (glcm_mean(g), glcm_contrast(g))


def test_point_outside_image():
    with pytest.raises(DataError):
        glcm_at_points(GrayImage(np.zeros((8, 8))), [(8, 0)], GlcmConfig(window=4))
