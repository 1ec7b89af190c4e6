import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fixsearch.errors import ConfigError, DataError, FormatError
from fixsearch.imagio import (GrayImage, cross_marker_pixels, header_path, load_feature_map,
                              load_image, normalize_u8, quantize, render_overlay,
                              save_feature_map, save_image, save_overlay)
from fixsearch.peaks import Candidate


def test_pgm8_identity(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 1, 2, 3]))
    img = load_image(path, "pgm8")
    assert (img.width, img.height) == (2, 2)
    assert img.data.ravel().tolist() == [0, 1, 2, 3]


def test_pgm_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n3 1\n255\n" + bytes([9, 8, 7]))
    assert load_image(path).data.ravel().tolist() == [9, 8, 7]


def test_pgm16_big_endian(tmp_path):
    path = tmp_path / "b.pgm"
    path.write_bytes(b"P5 2 1 65535\n" + bytes([0x01, 0x02, 0xFF, 0x00]))
    img = load_image(path)
    assert img.data.ravel().tolist() == [0x0102, 0xFF00]


@pytest.mark.parametrize("fmt,top", [("pgm8", 255), ("pgm16", 65535)])
def test_pgm_round_trip(tmp_path, fmt, top):
    rng = np.random.default_rng(3)
    img = GrayImage(rng.integers(0, top + 1, size=(7, 11)).astype(float))
    save_image(img, tmp_path / "x.pgm", fmt)
    back = load_image(tmp_path / "x.pgm", fmt)
    assert np.array_equal(back.data, img.data)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_raw_f32_round_trip_bit_identical(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("rt") / "img.raw"
    img = GrayImage(arr, pitch_mm=0.1)
    save_image(img, path)
    back = load_image(path)
    assert back.data.astype(np.float32).tobytes() == arr.astype(np.float32).tobytes()
    assert back.pitch_mm == 0.1


def test_raw_payload_size_mismatch(tmp_path):
    path = tmp_path / "bad.raw"
    path.write_bytes(np.zeros(5, dtype="<f4").tobytes())
    header_path(path).write_text(json.dumps({"width": 3, "height": 2, "pitch_mm": 1.0}))
    with pytest.raises(DataError, match="payload size mismatch"):
        load_image(path, "raw-f32")


def test_raw_nan_payload_is_data_error(tmp_path):
    path = tmp_path / "nan.raw"
    path.write_bytes(np.array([1.0, np.nan], dtype="<f4").tobytes())
    header_path(path).write_text(json.dumps({"width": 2, "height": 1}))
    with pytest.raises(DataError):
        load_image(path)


@pytest.mark.parametrize("raw", [b"P5\n2 2\n", b"P5\nx 2\n255\n\x00", b"P2\n1 1\n255\n0"])
def test_malformed_pgm_header(tmp_path, raw):
    path = tmp_path / "m.pgm"
    path.write_bytes(raw)
    with pytest.raises(FormatError):
        load_image(path, "pgm8")


def test_missing_raw_header_is_format_error(tmp_path):
    path = tmp_path / "nohdr.raw"
    path.write_bytes(np.zeros(4, dtype="<f4").tobytes())
    with pytest.raises(FormatError):
        load_image(path, "raw-f32")


def test_gray_image_rejects_nonfinite():
    with pytest.raises(DataError):
        GrayImage([[0.0, np.inf]])


# --------------------------------------------------------------------------- #
# quantize
# --------------------------------------------------------------------------- #
def test_quantize_two_point():
    assert quantize(GrayImage([[0.0, 255.0]]), 2).data.ravel().tolist() == [0, 1]


def test_quantize_constant_is_level_zero():
    assert quantize(GrayImage([[5.0, 5.0], [5.0, 5.0]]), 128).data.ravel().tolist() == [0, 0, 0, 0]


def test_quantize_hand_case():
    # floor((v - 0) * 4 / (3 + eps)) -> 0, 1, 2, 3
    assert quantize(GrayImage([[0.0, 1.0, 2.0, 3.0]]), 4).data.ravel().tolist() == [0, 1, 2, 3]


def test_quantize_rejects_one_level():
    with pytest.raises(ConfigError, match="levels must be >= 2"):
        quantize(GrayImage([[0.0, 1.0]]), 1)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-1e9, 1e9)),
       st.integers(2, 256))
def test_quantize_range_and_monotone(values, levels):
    q = quantize(GrayImage(values[None, :]), levels).data.ravel()
    assert q.min() >= 0 and q.max() <= levels - 1
    order = np.argsort(values, kind="stable")
    assert np.all(np.diff(q[order]) >= 0)


# --------------------------------------------------------------------------- #
# feature maps and overlays
# --------------------------------------------------------------------------- #
def test_feature_map_round_trip(tmp_path):
    fmap = np.random.default_rng(1).normal(size=(9, 13)).astype(np.float32)
    save_feature_map(fmap, tmp_path / "f.raw")
    back = load_feature_map(tmp_path / "f.raw")
    assert back.astype(np.float32).tobytes() == fmap.tobytes()


def test_empty_overlay_equals_normalized_image():
    img = GrayImage(np.arange(64, dtype=float).reshape(8, 8))
    assert np.array_equal(render_overlay(img, []), normalize_u8(img.data))


def test_overlay_changes_exactly_marker_pixels():
    rng = np.random.default_rng(0)
    img = GrayImage(rng.uniform(0, 100, size=(16, 16)))
    base = normalize_u8(img.data)
    out = render_overlay(img, [Candidate(5, 5, (1.0,))], radius=2)
    marker = set(cross_marker_pixels(5, 5, 2, base.shape))
    assert len(marker) == 9
    expected = {p for p in marker if base[p] != 255}
    changed = set(zip(*np.nonzero(out != base)))
    assert changed == expected
    assert all(out[p] == 255 for p in marker)


def test_overlay_png_and_pgm_written(tmp_path):
    img = GrayImage(np.eye(10))
    save_overlay(img, [Candidate(3, 4, (1.0,))], tmp_path / "o.png")
    save_overlay(img, [Candidate(3, 4, (1.0,))], tmp_path / "o.pgm")
    assert (tmp_path / "o.png").read_bytes()[:4] == b"\x89PNG"
    assert load_image(tmp_path / "o.pgm").data[4, 3] == 255


def test_overlay_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_overlay(GrayImage(np.eye(4)), [], tmp_path / "missing" / "o.pgm")
