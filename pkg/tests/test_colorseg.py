import numpy as np
import pytest

from gloveseg import colorseg
from gloveseg.colorseg import (
    DEFAULT_LEFT_RANGE,
    DEFAULT_RIGHT_RANGE,
    CalibrationError,
    HsvRange,
    SeedRect,
)
from gloveseg.imaging import LEFT, RIGHT, ColorFrame, hsv_to_rgb_image


def constant_frame(rgb, shape=(20, 20)):
    return ColorFrame(np.tile(np.asarray(rgb, dtype=np.uint8), (*shape, 1)))


class TestThreshold:
    def test_default_ranges_are_the_glove_calibration(self):
        assert DEFAULT_LEFT_RANGE.lo == (3, 160, 100) and DEFAULT_LEFT_RANGE.hi == (15, 255, 255)
        assert DEFAULT_RIGHT_RANGE.lo == (28, 35, 100) and DEFAULT_RIGHT_RANGE.hi == (70, 200, 255)

    def test_black_frame_empty_mask(self):
        frame = constant_frame((0, 0, 0))
        for rng in (DEFAULT_LEFT_RANGE, DEFAULT_RIGHT_RANGE):
            assert not colorseg.threshold_hsv(frame, rng, sigma=2.0).any()

    def test_boundary_inclusive(self):
        hsv = np.zeros((4, 4, 3))
        hsv[...] = (3.0, 160.0, 100.0)  # exactly the left range minimum corner
        assert colorseg.threshold_hsv_prepared(hsv, DEFAULT_LEFT_RANGE).all()
        hsv[...] = (15.0, 255.0, 255.0)  # maximum corner
        assert colorseg.threshold_hsv_prepared(hsv, DEFAULT_LEFT_RANGE).all()
        hsv[...] = (15.0001, 255.0, 255.0)
        assert not colorseg.threshold_hsv_prepared(hsv, DEFAULT_LEFT_RANGE).any()

    def test_in_range_color_detected_after_blur(self):
        rgb = np.rint(hsv_to_rgb_image(np.array([9.0, 210.0, 180.0]))).astype(np.uint8)
        frame = constant_frame(rgb)
        assert colorseg.threshold_hsv(frame, DEFAULT_LEFT_RANGE, sigma=1.5).all()

    def test_widening_never_unsets(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            hsv = rng.uniform((0, 0, 0), (180, 255, 255), size=(12, 12, 3))
            lo = rng.uniform((0, 0, 0), (90, 128, 128))
            hi = lo + rng.uniform(0, 60, size=3)
            narrow = HsvRange(tuple(lo), tuple(np.minimum(hi, (180, 255, 255))))
            wide = HsvRange(tuple(np.maximum(lo - 10, 0)), tuple(np.minimum(hi + 10, (180, 255, 255))))
            m_narrow = colorseg.threshold_hsv_prepared(hsv, narrow)
            m_wide = colorseg.threshold_hsv_prepared(hsv, wide)
            assert (m_wide | m_narrow).sum() == m_wide.sum()

    def test_hue_disjoint_ranges_give_disjoint_masks(self):
        rng = np.random.default_rng(33)
        hsv = rng.uniform((0, 0, 0), (180, 255, 255), size=(30, 30, 3))
        left = colorseg.threshold_hsv_prepared(hsv, DEFAULT_LEFT_RANGE)
        right = colorseg.threshold_hsv_prepared(hsv, DEFAULT_RIGHT_RANGE)
        assert not (left & right).any()

    def test_range_validation(self):
        with pytest.raises(ValueError):
            HsvRange((20, 0, 0), (10, 255, 255))


class TestSeedRect:
    def test_single_pixel_grows_to_three(self):
        mask = np.zeros((100, 100), dtype=bool)
        mask[50, 50] = True
        assert colorseg.seed_rect(mask) == SeedRect(49, 49, 3, 3)

    def test_wide_box_enlargement(self):
        # 100x50 box at (10, 10): x endpoints move out by 5 exactly, the y
        # endpoints land on .5 and round outward to 7 and 63
        mask = np.zeros((200, 200), dtype=bool)
        mask[10:60, 10:110] = True
        assert colorseg.seed_rect(mask) == SeedRect(5, 7, 110, 56)

    def test_empty_mask_absent(self):
        assert colorseg.seed_rect(np.zeros((10, 10), dtype=bool)) is None

    def test_always_contains_mask(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            mask = rng.random((40, 60)) < 0.02
            rect = colorseg.seed_rect(mask)
            if rect is None:
                assert not mask.any()
                continue
            ys, xs = np.nonzero(mask)
            assert rect.x0 <= xs.min() and xs.max() < rect.x0 + rect.w
            assert rect.y0 <= ys.min() and ys.max() < rect.y0 + rect.h
            assert rect.x0 >= 0 and rect.y0 >= 0
            assert rect.x0 + rect.w <= 60 and rect.y0 + rect.h <= 40

    def test_clamped_at_border(self):
        mask = np.zeros((10, 10), dtype=bool)
        mask[0, 0] = True
        rect = colorseg.seed_rect(mask)
        assert rect.x0 == 0 and rect.y0 == 0 and rect.w >= 1 and rect.h >= 1


class TestComponentCleanup:
    def test_speckle_removed_blob_kept(self):
        mask = np.zeros((30, 30), dtype=bool)
        mask[5:15, 5:15] = True  # 100 px blob
        mask[25, 25] = True  # speckle
        cleaned = colorseg.remove_small_components(mask, min_area=64)
        assert cleaned[10, 10] and not cleaned[25, 25]
        assert cleaned.sum() == 100

    def test_noop_below_threshold_one(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 2] = True
        assert np.array_equal(colorseg.remove_small_components(mask, min_area=1), mask)


class TestCalibration:
    def test_degenerate_single_value(self):
        rgb = np.rint(hsv_to_rgb_image(np.array([10.0, 200.0, 180.0]))).astype(np.uint8)
        frame = constant_frame(rgb, shape=(8, 8))
        scribble = np.zeros((8, 8), dtype=np.uint8)
        scribble[:4] = LEFT
        scribble[4:] = RIGHT
        left, right = colorseg.calibrate_ranges([frame], [scribble])
        assert np.allclose(left.lo, left.hi)
        assert np.allclose(right.lo, right.hi)

    def test_uniform_hue_band_covered(self):
        rng = np.random.default_rng(13)
        hues = rng.uniform(30, 60, size=(40, 40))
        hsv = np.stack([hues, np.full_like(hues, 220.0), np.full_like(hues, 180.0)], axis=-1)
        frame = ColorFrame(np.rint(hsv_to_rgb_image(hsv)).astype(np.uint8))
        scribble = np.full((40, 40), LEFT, dtype=np.uint8)
        scribble[:1, :] = RIGHT  # keep the other hand calibratable
        left, _ = colorseg.calibrate_ranges([frame], [scribble])
        assert left.lo[0] >= 29.0 and left.hi[0] <= 61.0  # quantization slack
        # count-inclusion oracle over the scribble pixels themselves
        from gloveseg.imaging import rgb_to_hsv_image

        pix = rgb_to_hsv_image(frame.pixels[scribble == LEFT])
        inside = np.all((pix >= left.lo) & (pix <= left.hi), axis=-1)
        assert inside.mean() >= 0.96

    def test_no_scribbles_is_an_error(self):
        frame = constant_frame((10, 10, 10))
        with pytest.raises(CalibrationError):
            colorseg.calibrate_ranges([frame], [np.zeros((20, 20), dtype=np.uint8)])
