"""Image helper semantics: resize conventions, luma, rotation, PNG round-trip."""

import numpy as np
import pytest
from PIL import Image

from fasbench.errors import DataError
from fasbench.imageops import (
    bilinear_resize,
    clip01,
    luminance,
    read_png,
    rotate_reflect,
    write_png,
)

rng = np.random.default_rng(99)


class TestResize:
    def test_identity_size(self):
        img = rng.random((3, 8, 8))
        np.testing.assert_array_equal(bilinear_resize(img, 8, 8), img)

    def test_constant_image(self):
        img = np.full((3, 7, 5), 0.3)
        out = bilinear_resize(img, 16, 11)
        np.testing.assert_allclose(out, 0.3, atol=1e-12)

    def test_upscale_matches_pillow(self):
        # Pillow's float-mode bilinear upsampling uses the same half-pixel
        # centers convention; agreement is an independent oracle.
        img = rng.random((1, 6, 6))
        ours = bilinear_resize(img, 14, 14)[0]
        pil = Image.fromarray(img[0].astype(np.float32), mode="F").resize(
            (14, 14), Image.BILINEAR
        )
        np.testing.assert_allclose(ours, np.asarray(pil), atol=1e-6)

    def test_value_range_preserved(self):
        img = rng.random((3, 9, 9))
        out = bilinear_resize(img, 4, 4)
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12

    def test_rejects_non_chw(self):
        with pytest.raises(DataError):
            bilinear_resize(rng.random((8, 8)), 4, 4)


class TestLuminance:
    def test_weights_sum_to_one(self):
        img = np.full((3, 4, 4), 0.25)
        np.testing.assert_allclose(luminance(img), 0.25, atol=1e-12)

    def test_channel_weights(self):
        img = np.zeros((3, 1, 1))
        img[1] = 1.0  # pure green
        np.testing.assert_allclose(luminance(img)[0, 0], 0.587)


class TestRotate:
    def test_zero_degrees_identity(self):
        img = rng.random((3, 12, 12))
        np.testing.assert_allclose(rotate_reflect(img, 0.0), img, atol=1e-6)

    def test_shape_preserved(self):
        img = rng.random((3, 10, 14))
        assert rotate_reflect(img, 17.0).shape == (3, 10, 14)

    def test_four_quarter_turns_identity(self):
        img = rng.random((3, 8, 8))
        out = img
        for _ in range(4):
            out = rotate_reflect(out, 90.0)
        np.testing.assert_allclose(out, img, atol=1e-9)


class TestPngRoundTrip:
    def test_quantized_round_trip(self, tmp_path):
        img = rng.random((3, 16, 16))
        path = tmp_path / "x.png"
        write_png(path, img)
        back = read_png(path)
        assert back.shape == (3, 16, 16)
        # 8-bit quantization error only.
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12

    def test_byte_stable(self, tmp_path):
        img = rng.random((3, 8, 8))
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        write_png(p1, img)
        write_png(p2, img)
        assert p1.read_bytes() == p2.read_bytes()

    def test_unreadable_file_raises(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(DataError, match="bad.png"):
            read_png(bad)


def test_clip01():
    out = clip01(np.array([-0.5, 0.25, 1.75]))
    np.testing.assert_array_equal(out, [0.0, 0.25, 1.0])
