import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from selftune.imaging import (
    ImageFormatError,
    extract_patches,
    load_image,
    mse,
    psnr,
    quantize,
    reassemble,
    save_image,
)


def write_pgm(path, width, height, maxval, payload: bytes, comment=False):
    header = b"P5\n"
    if comment:
        header += b"# made by a test\n"
    header += f"{width} {height}\n{maxval}\n".encode()
    path.write_bytes(header + payload)
    return path


class TestLoadSave:
    def test_8bit_pgm_scaling(self, tmp_path):
        p = write_pgm(tmp_path / "a.pgm", 2, 2, 255, bytes([0, 255, 128, 64]))
        img = load_image(p)
        np.testing.assert_allclose(img, [[0, 1], [128 / 255, 64 / 255]])
        assert img[1, 0] == pytest.approx(0.50196, abs=1e-5)
        assert img[1, 1] == pytest.approx(0.25098, abs=1e-5)

    def test_header_comment_is_skipped(self, tmp_path):
        p = write_pgm(tmp_path / "c.pgm", 2, 1, 255, bytes([10, 20]), comment=True)
        np.testing.assert_allclose(load_image(p), [[10 / 255, 20 / 255]])

    def test_16bit_pgm(self, tmp_path):
        payload = np.array([0, 65535, 1000], dtype=">u2").tobytes()
        p = write_pgm(tmp_path / "b.pgm", 3, 1, 65535, payload)
        np.testing.assert_allclose(load_image(p), [[0, 1, 1000 / 65535]])

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.pgm"
        p.write_bytes(b"")
        with pytest.raises(ImageFormatError, match="truncated header"):
            load_image(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n")
        with pytest.raises(ImageFormatError, match="truncated header"):
            load_image(p)

    def test_truncated_pixels(self, tmp_path):
        p = write_pgm(tmp_path / "t.pgm", 4, 4, 255, bytes(5))
        with pytest.raises(ImageFormatError, match="truncated pixel data"):
            load_image(p)

    def test_color_ppm_rejected_by_name(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ImageFormatError, match="P6"):
            load_image(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_image(tmp_path / "nope.pgm")

    def test_png_grayscale(self, tmp_path):
        from PIL import Image

        arr = np.arange(180 * 180, dtype=np.uint32).reshape(180, 180) % 256
        Image.fromarray(arr.astype(np.uint8), mode="L").save(tmp_path / "g.png")
        img = load_image(tmp_path / "g.png")
        assert img.shape == (180, 180)
        np.testing.assert_allclose(img, arr / 255.0)

    def test_png_16bit(self, tmp_path):
        from PIL import Image

        arr = np.array([[0, 30000], [65535, 12]], dtype=np.uint16)
        Image.fromarray(arr).save(tmp_path / "g16.png")
        np.testing.assert_allclose(load_image(tmp_path / "g16.png"), arr / 65535.0)

    def test_png_color_rejected_by_name(self, tmp_path):
        from PIL import Image

        Image.new("RGB", (4, 4)).save(tmp_path / "rgb.png")
        with pytest.raises(ImageFormatError, match="RGB"):
            load_image(tmp_path / "rgb.png")

    def test_constant_half_quantizes_to_128(self, tmp_path):
        save_image(np.full((3, 5), 0.5), tmp_path / "h.pgm")
        raw = (tmp_path / "h.pgm").read_bytes()
        assert raw.startswith(b"P5\n5 3\n255\n")
        assert set(raw[len(b"P5\n5 3\n255\n"):]) == {128}

    def test_overshoot_is_clamped(self):
        assert quantize(np.array([[1.2, -0.3]])).tolist() == [[255, 0]]

    def test_roundtrip_within_half_step(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.uniform(-0.2, 1.2, size=(17, 23))
        save_image(img, tmp_path / "r.pgm")
        back = load_image(tmp_path / "r.pgm")
        assert np.abs(back - np.clip(img, 0, 1)).max() <= 1 / 510 + 1e-12

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            save_image(np.zeros((2, 2)), tmp_path / "missing" / "dir" / "x.pgm")


class TestMetrics:
    def test_mse_examples(self):
        a = np.random.default_rng(0).random((4, 4))
        assert mse(a, a) == 0
        assert mse(np.zeros((3, 3)), np.ones((3, 3))) == 1
        assert mse([[0.0, 0.0]], [[0.3, 0.4]]) == pytest.approx(0.125)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            mse(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_psnr_examples(self):
        a = np.zeros((4, 4))
        assert psnr(a, a) == math.inf
        assert psnr(a, a + 1.0, peak=1.0) == pytest.approx(0.0)
        assert psnr(a, a + 0.1, peak=1.0) == pytest.approx(20.0)

    def test_psnr_rejects_bad_peak(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.ones((2, 2)), peak=0)

    @given(arrays(np.float64, (5, 6), elements=st.floats(0, 1)),
           arrays(np.float64, (5, 6), elements=st.floats(0, 1)))
    def test_psnr_symmetric(self, a, b):
        assert psnr(a, b) == psnr(b, a)

    @given(arrays(np.int64, (4, 4), elements=st.integers(-255, 510)),
           arrays(np.int64, (4, 4), elements=st.integers(-255, 510)))
    def test_mse_zero_iff_equal(self, a, b):
        # pixel-scale values; squared differences of denormals underflow to 0
        a, b = a / 255.0, b / 255.0
        assert (mse(a, b) == 0) == bool(np.array_equal(a, b))


class TestPatches:
    def test_non_overlapping(self):
        grid = extract_patches(np.arange(16.0).reshape(4, 4), 2, 2)
        assert grid.positions.tolist() == [[0, 0], [0, 2], [2, 0], [2, 2]]
        np.testing.assert_array_equal(grid.patches[1, 0], [[8, 9], [12, 13]])

    def test_last_patch_clamped(self):
        grid = extract_patches(np.zeros((5, 5)), 2, 2)
        assert grid.shape == (3, 3)
        assert grid.row_starts.tolist() == [0, 2, 3]
        assert grid.col_starts.tolist() == [0, 2, 3]

    def test_full_size_patch(self):
        grid = extract_patches(np.ones((6, 6)), 6, 3)
        assert grid.shape == (1, 1)

    def test_rectangular_image(self):
        grid = extract_patches(np.zeros((10, 7)), 4, 3)
        assert grid.row_starts.tolist() == [0, 3, 6]
        assert grid.col_starts.tolist() == [0, 3]
        assert grid.image_shape == (10, 7)

    @pytest.mark.parametrize("s,t", [(0, 1), (3, 4), (9, 2), (2, 0)])
    def test_out_of_range(self, s, t):
        with pytest.raises(ValueError):
            extract_patches(np.zeros((8, 8)), s, t)

    def test_overlap_average_of_two_values(self):
        grid = extract_patches(np.zeros((2, 3)), 2, 1)
        patches = grid.patches.copy()
        patches[0, 0] = 0.2
        patches[0, 1] = 0.4
        out = reassemble(grid.with_patches(patches), 3, 2)
        np.testing.assert_allclose(out[:, 1], [0.3, 0.3])
        np.testing.assert_allclose(out[:, 0], [0.2, 0.2])
        np.testing.assert_allclose(out[:, 2], [0.4, 0.4])

    def test_perturbed_copies_average(self):
        rng = np.random.default_rng(7)
        img = rng.random((16, 16))
        grid = extract_patches(img, 8, 4)
        eps = 0.01
        patches = grid.patches.copy()
        bumped = np.zeros(grid.shape, dtype=bool)
        bumped[::2, :] = True
        patches[bumped] += eps
        out = reassemble(grid.with_patches(patches), 16, 16)
        # direct oracle: for each pixel, average the covering copies
        expect = np.zeros_like(img)
        for r in range(16):
            for c in range(16):
                vals = []
                for i, r0 in enumerate(grid.row_starts):
                    for j, c0 in enumerate(grid.col_starts):
                        if r0 <= r < r0 + 8 and c0 <= c < c0 + 8:
                            vals.append(img[r, c] + (eps if bumped[i, j] else 0.0))
                expect[r, c] = np.mean(vals)
        np.testing.assert_allclose(out, expect, atol=1e-14)

    def test_inconsistent_grid(self):
        grid = extract_patches(np.zeros((8, 8)), 4, 2)
        with pytest.raises(ValueError, match="grid covers"):
            reassemble(grid, 9, 8)

    @settings(max_examples=40, deadline=None)
    @given(h=st.integers(1, 14), w=st.integers(1, 14), data=st.data())
    def test_roundtrip_identity(self, h, w, data):
        s = data.draw(st.integers(1, min(h, w)))
        t = data.draw(st.integers(1, s))
        img = data.draw(arrays(np.float64, (h, w), elements=st.floats(-1, 2)))
        grid = extract_patches(img, s, t)
        assert np.all(grid.coverage() > 0)
        out = reassemble(grid, w, h)
        assert np.abs(out - img).max() < 1e-12
