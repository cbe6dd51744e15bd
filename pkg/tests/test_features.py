import logging
import math
import struct

import numpy as np
import pytest

from dpyr import oracle
from dpyr.core import DomainError, FeatureMap, ParameterError
from dpyr.features import (CellMeanExtractor, FeaturePyramid, Hog31Extractor, PyramidConfig, PyramidFormatError,
                           build_feature_pyramid, build_image_pyramid, export_pyramid, hog31, hog31_terms,
                           import_pyramid, load_image, read_pyramid, round_half_away)


def test_round_half_away():
    assert [round_half_away(v) for v in (0.5, 1.5, 2.5, -0.5, -2.5, 2.4999)] == [1, 2, 3, -1, -3, 2]


def test_config_validation():
    for kw in ({"levels": 0}, {"interval": 0}, {"max_dim": 0}, {"pad_y": -1}):
        with pytest.raises(ParameterError):
            PyramidConfig(**kw)


def test_unit_initial_scale():
    img = np.zeros((1713, 1713), np.uint8)
    levels = build_image_pyramid(img, PyramidConfig(1713, 3, 2))
    assert [s for _, s in levels] == [1.0, 2 ** -0.5, 0.5]
    assert levels[1][0].shape[:2] == (1211, 1211)


def test_upsampling_factor_for_voc_sized_image():
    img = np.zeros((375, 504, 3), np.uint8)
    levels = build_image_pyramid(img, PyramidConfig(1713, 7, 2))
    assert levels[0][1] == pytest.approx(1713 / 504)
    assert levels[0][1] == pytest.approx(3.4, abs=0.01)
    assert levels[0][0].shape[:2] == (round_half_away(375 * 1713 / 504), 1713)
    assert levels[6][1] == levels[0][1] / 8


def test_scale_law_is_exact():
    cfg = PyramidConfig(100, 9, 3)
    scales = [s for _, s in build_image_pyramid(np.zeros((50, 40)), cfg)]
    for i, s in enumerate(scales):
        assert s == scales[0] * 2.0 ** (-i / 3)


def test_small_levels_dropped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        levels = build_image_pyramid(np.zeros((40, 40)), PyramidConfig(40, 6, 1), min_side=8)
    assert [lv.shape[0] for lv, _ in levels] == [40, 20, 10]
    assert "dropping pyramid level 3" in caplog.text


def test_zero_sized_image():
    with pytest.raises(DomainError):
        build_image_pyramid(np.zeros((0, 5, 3)), PyramidConfig())


def test_hog_constant_image_is_zero():
    f = hog31(np.full((64, 64, 3), 93, np.uint8), 8)
    assert f.shape == (6, 6, 31)
    assert np.all(f.data == 0)


def test_hog_dimension_formula():
    assert hog31(np.zeros((64, 64, 3)), 8).shape == (6, 6, 31)
    assert hog31(np.zeros((53, 75, 3)), 8).shape == (round_half_away(53 / 8) - 2, round_half_away(75 / 8) - 2, 31)


def test_hog_too_small():
    with pytest.raises(DomainError, match="24x24"):
        hog31(np.zeros((23, 40, 3)), 8)


def _stripes():
    img = np.zeros((48, 56, 3))
    img[:, ::6] = 255
    img[:, 1::6] = 255
    return img


def test_hog_vertical_stripes_pick_horizontal_gradient_bin():
    slow = oracle.slow_hog31(_stripes(), 8)["features"]
    fast = hog31_terms(_stripes(), 8).features
    insensitive = fast[..., 18:27].sum(axis=(0, 1))
    assert np.argmax(insensitive) == 0
    assert np.argmax(slow[..., 18:27].sum(axis=(0, 1))) == 0


def test_hog_matches_slow_transcription(rng):
    for shape in [(40, 48, 3), (37, 51, 3), (24, 24, 1)]:
        img = rng.integers(0, 256, shape).astype(np.float64)
        slow = oracle.slow_hog31(img, 8)
        fast = hog31_terms(img, 8)
        np.testing.assert_allclose(fast.hist, slow["hist"], atol=1e-9, rtol=1e-12)
        np.testing.assert_allclose(fast.energy, slow["energy"], rtol=1e-12)
        np.testing.assert_allclose(fast.clipped, slow["clipped"], atol=1e-12)
        np.testing.assert_allclose(fast.features, slow["features"], atol=1e-12)


def test_hog_invariants(rng):
    img = rng.integers(0, 256, (64, 72, 3))
    t = hog31_terms(img, 8)
    assert np.all(t.features >= 0)
    assert t.clipped.max() <= 0.2 and t.clipped_folded.max() <= 0.2
    slow = oracle.slow_hog31(img, 8)
    np.testing.assert_allclose(slow["folded"], slow["hist"][1:-1, 1:-1, :9] + slow["hist"][1:-1, 1:-1, 9:])


def test_hog_grayscale_2d_input():
    img = np.tile(np.arange(32, dtype=np.float64) * 8, (32, 1))
    assert hog31(img, 8).shape == (2, 2, 31)


def test_padding_adds_zero_border(rng):
    img = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
    raw = build_feature_pyramid(img, PyramidConfig(64, 2, 1), Hog31Extractor(8))
    padded = build_feature_pyramid(img, PyramidConfig(64, 2, 1, pad_y=3, pad_x=2), Hog31Extractor(8))
    for a, b in zip(raw.levels, padded.levels):
        assert b.shape == (a.rows + 6, a.cols + 4, 31)
        np.testing.assert_array_equal(b.data[3:-3, 2:-2], a.data)
        border = np.ones(b.shape[:2], bool)
        border[3:-3, 2:-2] = False
        assert np.all(b.data[border] == 0)
    assert raw.total_cells() == padded.total_cells()


def test_cell_mean_extractor_ceil_cells():
    img = np.zeros((33, 17, 3), np.uint8)
    img[32, :, 0] = 255  # last partial row of cells
    fm = CellMeanExtractor(16)(img)
    assert fm.shape == (3, 2, 3)
    assert fm.data[2, 0, 0] == pytest.approx(1.0)
    assert fm.data[0, 0, 0] == 0


def test_1713_pyramid_geometry():
    img = np.full((1713, 1713, 3), 128, np.uint8)
    pyr = build_feature_pyramid(img, PyramidConfig(1713, 7, 2), CellMeanExtractor(16))
    assert max(pyr.levels[0].shape[:2]) == 108
    # independent count: ceil(round(1713 * 2^(-l/2)) / 16)^2 summed over levels
    expected = sum(math.ceil(round_half_away(1713 * 2 ** (-l / 2)) / 16) ** 2 for l in range(7))
    assert expected == 23086
    assert pyr.total_cells() == expected
    assert pyr.scales[6] == pyr.scales[0] / 8


def _toy_pyramid(rng, ch=4):
    levels = [FeatureMap(rng.uniform(-1, 1, (r, c, ch))) for r, c in ((9, 8), (7, 6), (5, 4))]
    return FeaturePyramid(levels, [1.5, 1.5 * 2 ** -0.5, 0.75], 16, (1, 2))


def test_pyramid_round_trip(tmp_path, rng):
    pyr = _toy_pyramid(rng)
    export_pyramid(pyr, tmp_path / "p.dpyr")
    back = import_pyramid(tmp_path / "p.dpyr")
    assert back == pyr
    for a, b in zip(back.levels, pyr.levels):
        assert a.data.tobytes() == b.data.tobytes()
    assert back.pad == (1, 2) and back.stride == 16


def test_pyramid_layout_is_little_endian(tmp_path, rng):
    pyr = _toy_pyramid(rng)
    export_pyramid(pyr, tmp_path / "p.dpyr")
    raw = (tmp_path / "p.dpyr").read_bytes()
    assert raw[:4] == b"DPYR"
    assert struct.unpack_from("<IIIII", raw, 4) == (1, 16, 1, 2, 3)
    assert struct.unpack_from("<dIII", raw, 24) == (1.5, 9, 8, 4)
    assert np.frombuffer(raw, "<f4", 9 * 8 * 4, 44).tobytes() == pyr.levels[0].data.tobytes()


def test_bad_magic(tmp_path, rng):
    export_pyramid(_toy_pyramid(rng), tmp_path / "p.dpyr")
    raw = bytearray((tmp_path / "p.dpyr").read_bytes())
    raw[:4] = b"NOPE"
    with pytest.raises(PyramidFormatError, match="bad magic") as e:
        read_pyramid(bytes(raw))
    assert e.value.offset == 0


def test_truncated_level(tmp_path, rng):
    export_pyramid(_toy_pyramid(rng), tmp_path / "p.dpyr")
    raw = (tmp_path / "p.dpyr").read_bytes()
    with pytest.raises(PyramidFormatError, match="truncated") as e:
        read_pyramid(raw[:-10])
    assert e.value.offset > 24
    with pytest.raises(PyramidFormatError, match="truncated"):
        read_pyramid(raw[:10])


def test_non_monotone_scales(tmp_path, rng):
    export_pyramid(_toy_pyramid(rng), tmp_path / "p.dpyr")
    raw = bytearray((tmp_path / "p.dpyr").read_bytes())
    second = 24 + 20 + 9 * 8 * 4 * 4
    struct.pack_into("<d", raw, second, 2.0)
    with pytest.raises(PyramidFormatError, match="non-monotone scales") as e:
        read_pyramid(bytes(raw))
    assert e.value.offset == second


def test_bad_version_and_trailing_bytes(tmp_path, rng):
    export_pyramid(_toy_pyramid(rng), tmp_path / "p.dpyr")
    raw = bytearray((tmp_path / "p.dpyr").read_bytes())
    with pytest.raises(PyramidFormatError, match="trailing"):
        read_pyramid(bytes(raw) + b"\0")
    struct.pack_into("<I", raw, 4, 2)
    with pytest.raises(PyramidFormatError, match="version"):
        read_pyramid(bytes(raw))


def test_load_image_png_and_jpeg(tmp_path):
    from PIL import Image
    arr = np.zeros((10, 12), np.uint8)
    Image.fromarray(arr).save(tmp_path / "a.png")
    Image.fromarray(arr).save(tmp_path / "a.jpg")
    for name in ("a.png", "a.jpg"):
        img = load_image(tmp_path / name)
        assert img.shape == (10, 12, 3) and img.dtype == np.uint8
