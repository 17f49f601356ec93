import math

import numpy as np
import pytest

from linefield.geometry import Homography
from linefield.raster import (
    GrayImage,
    ImageIOError,
    gradient,
    level_line_field,
    load_image,
    save_image,
    warp_image,
)


def test_pgm_round_trip(tmp_path):
    img = GrayImage.constant(16, 16, 128.0)
    path = tmp_path / "c.pgm"
    save_image(img, path)
    again = load_image(path)
    assert np.array_equal(img.data, again.data)


def test_pgm_round_trip_random(tmp_path, rng):
    img = GrayImage(rng.integers(0, 256, (23, 31)).astype(float))
    path = tmp_path / "r.pgm"
    save_image(img, path)
    assert np.array_equal(load_image(path).data, img.data)


def test_png_rgb_luma(tmp_path):
    from PIL import Image

    arr = np.zeros((4, 4, 3), np.uint8)
    arr[..., 0] = 255  # pure red
    Image.fromarray(arr, "RGB").save(tmp_path / "red.png")
    img = load_image(tmp_path / "red.png")
    assert img.data[0, 0] == pytest.approx(0.299 * 255, abs=0.01)


def test_png_gray_round_trip(tmp_path):
    img = GrayImage(np.arange(64, dtype=float).reshape(8, 8))
    save_image(img, tmp_path / "g.png")
    assert np.array_equal(load_image(tmp_path / "g.png").data, img.data)


def test_truncated_pgm_errors(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n16 16\n255\n" + b"\x00" * 10)
    with pytest.raises(ImageIOError):
        load_image(path)


def test_bad_maxval_errors(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + b"\x00" * 8)
    with pytest.raises(ImageIOError):
        load_image(path)


def test_missing_file_errors(tmp_path):
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "nope.pgm")


def test_unsupported_format_errors(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"GIF89a.....")
    with pytest.raises(ImageIOError):
        load_image(path)


class TestGradient:
    def test_constant_image(self):
        gx, gy, valid = gradient(GrayImage.constant(8, 8, 77.0))
        assert np.all(gx[valid] == 0) and np.all(gy[valid] == 0)

    def test_vertical_step_edge(self):
        data = np.zeros((8, 8))
        data[:, 4:] = 255.0
        gx, gy, valid = gradient(GrayImage(data))
        # 2x2 difference peaks on the column straddling the step
        assert np.all(gx[:-1, 3] == 255.0)
        assert np.all(gy[valid] == 0.0)

    def test_horizontal_ramp(self):
        data = np.tile(np.arange(10, dtype=float), (6, 1))
        gx, gy, valid = gradient(GrayImage(data))
        assert np.all(gx[valid] == 1.0)
        assert np.all(gy[valid] == 0.0)

    def test_too_small_image(self):
        with pytest.raises(ValueError):
            gradient(GrayImage.constant(1, 5, 0.0))

    def test_shift_invariance(self, rng):
        base = rng.integers(0, 200, (12, 12)).astype(float)
        g1 = gradient(GrayImage(base))
        g2 = gradient(GrayImage(base + 55.0))
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


class TestLevelLineField:
    def test_vertical_step_angle(self):
        data = np.zeros((8, 8))
        data[:, 4:] = 255.0
        llf = level_line_field(GrayImage(data), 5.0)
        ang = llf.angle[llf.valid]
        assert np.allclose(np.abs(ang), math.pi / 2)

    def test_constant_has_no_valid_pixels(self):
        llf = level_line_field(GrayImage.constant(8, 8, 4.0), 1.0)
        assert llf.valid.sum() == 0

    def test_diagonal_ramp(self):
        ys, xs = np.mgrid[0:12, 0:12]
        llf = level_line_field(GrayImage((xs + ys).astype(float)), 0.5)
        ang = llf.angle[llf.valid]
        # gradient (1,1) -> level line at 3pi/4 (or -pi/4 mod pi)
        mod = np.mod(ang, math.pi)
        assert np.allclose(mod, 3 * math.pi / 4)

    def test_angle_orthogonal_to_gradient(self, rng):
        img = GrayImage(rng.uniform(0, 255, (32, 32)))
        gx, gy, _ = gradient(img)
        llf = level_line_field(img, 2.0)
        m = llf.valid
        dots = np.cos(llf.angle[m]) * gx[m] + np.sin(llf.angle[m]) * gy[m]
        assert np.max(np.abs(dots)) < 1e-9

    def test_angle_range(self, rng):
        img = GrayImage(rng.uniform(0, 255, (16, 16)))
        llf = level_line_field(img, 1.0)
        a = llf.angle[llf.valid]
        assert np.all(a > -math.pi) and np.all(a <= math.pi)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            level_line_field(GrayImage.constant(4, 4, 0.0), -1.0)


class TestWarpImage:
    def test_identity(self, rng):
        img = GrayImage(rng.uniform(0, 255, (20, 20)))
        out = warp_image(img, Homography.identity())
        assert np.allclose(out.data, img.data, atol=1e-9)

    def test_translation_shifts_content(self):
        data = np.zeros((16, 16))
        data[8, 8] = 255.0
        out = warp_image(GrayImage(data), Homography.translation(3, 2))
        assert out.data[10, 11] == pytest.approx(255.0)


def test_gray_image_validation():
    with pytest.raises(ValueError):
        GrayImage(np.full((4, 4), 300.0))
    with pytest.raises(ValueError):
        GrayImage(np.zeros((4, 4, 3)))
