"""
Tests for image I/O, resampling, degradation, patch sampling and manifests
"""
import numpy as np
import pytest
from PIL import Image

import config
from core.exceptions import DataError, GeometryError, ImageFormatError
from core.services.data_service import (
    DatasetManifest, DatasetService, ImageBuffer, bicubic_resample, degrade,
    extract_patch_pairs, gaussian_blur_kernel, load_image, resample_weights, save_image,
)
from core.utils.ppm import decode_ppm, encode_ppm


class TestImageBuffer:
    def test_rejects_out_of_range(self):
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.full((3, 2, 2), 1.5))

    def test_rejects_wrong_layout(self):
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((2, 2, 3)))

    def test_from_array_clamps_batches(self):
        img = ImageBuffer.from_array(np.full((1, 3, 2, 2), 2.0))
        assert img.pixels.shape == (3, 2, 2)
        assert img.pixels.max() == 1.0

    def test_crop(self, random_image):
        img = random_image(8, 10)
        crop = img.crop(2, 1, 4, 3)
        assert (crop.width, crop.height) == (4, 3)
        np.testing.assert_array_equal(crop.pixels, img.pixels[:, 1:4, 2:6])


class TestPpm:
    def test_encode_header(self):
        data = encode_ppm(np.zeros((2, 3, 3), dtype=np.uint8))
        assert data.startswith(b"P6\n3 2\n255\n")
        assert len(data) == len(b"P6\n3 2\n255\n") + 18

    def test_decode_with_comments(self):
        body = bytes(range(12))
        data = b"P6\n# made by hand\n2 2 # size\n255\n" + body
        np.testing.assert_array_equal(decode_ppm(data).reshape(-1), list(range(12)))

    def test_decode_rescales_maxval(self):
        data = b"P6 1 1 15\n" + bytes([15, 0, 5])
        np.testing.assert_array_equal(decode_ppm(data)[0, 0], [255, 0, 85])

    def test_interchangeable_with_pillow(self, rng, tmp_path):
        pixels = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        (tmp_path / "ours.ppm").write_bytes(encode_ppm(pixels))
        with Image.open(tmp_path / "ours.ppm", formats=["PPM"]) as image:
            assert (image.mode, image.size) == ("RGB", (7, 5))
            np.testing.assert_array_equal(np.asarray(image), pixels)

        Image.fromarray(pixels, mode="RGB").save(tmp_path / "pillow.ppm", format="PPM")
        np.testing.assert_array_equal(decode_ppm((tmp_path / "pillow.ppm").read_bytes()), pixels)

    @pytest.mark.parametrize("data", [
        b"P3\n1 1\n255\n\x00\x00\x00",
        b"P6\n1 1\n65535\n\x00\x00\x00",
        b"P6\n2 2\n255\n\x00\x00",
        b"P6\n1",
    ])
    def test_malformed(self, data):
        with pytest.raises(ImageFormatError):
            decode_ppm(data)

    def test_save_and_load_quantizes(self, random_image, tmp_path):
        img = random_image(5, 7)
        save_image(tmp_path / "a.ppm", img)
        loaded = load_image(tmp_path / "a.ppm")
        np.testing.assert_allclose(loaded.pixels, np.round(img.pixels * 255) / 255, atol=1e-12)

    def test_png_by_magic(self, random_image, tmp_path):
        img = random_image(4, 4)
        save_image(tmp_path / "a.png", img)
        (tmp_path / "renamed.ppm").write_bytes((tmp_path / "a.png").read_bytes())
        loaded = load_image(tmp_path / "renamed.ppm")
        np.testing.assert_array_equal(loaded.to_uint8(), img.to_uint8())

    def test_unknown_magic(self, tmp_path):
        (tmp_path / "x.ppm").write_bytes(b"GIF89a")
        with pytest.raises(ImageFormatError):
            load_image(tmp_path / "x.ppm")


class TestResampling:
    def test_weights_rows_sum_to_one(self):
        for in_size, out_size in [(8, 16), (16, 8), (7, 3), (5, 5)]:
            np.testing.assert_allclose(resample_weights(in_size, out_size).sum(axis=1), 1.0)

    def test_same_size_is_identity(self):
        np.testing.assert_allclose(resample_weights(6, 6), np.eye(6), atol=1e-12)

    def test_constant_image_stays_constant(self):
        img = ImageBuffer(np.full((3, 8, 8), 0.4))
        np.testing.assert_allclose(bicubic_resample(img, 16, 12).pixels, 0.4, atol=1e-12)
        np.testing.assert_allclose(bicubic_resample(img, 4, 4).pixels, 0.4, atol=1e-12)

    def test_invalid_target(self, random_image):
        with pytest.raises(GeometryError):
            bicubic_resample(random_image(4, 4), 0, 4)

    def test_blur_kernel_normalized(self):
        kernel = gaussian_blur_kernel(1.0)
        assert kernel.shape == (7, 7)
        assert kernel.sum() == pytest.approx(1.0)


class TestDegrade:
    def test_plain_degrade_is_bicubic(self, random_image):
        hr = random_image(16, 16)
        np.testing.assert_array_equal(degrade(hr, 2).pixels, bicubic_resample(hr, 8, 8).pixels)

    def test_noise_is_seeded(self, random_image):
        hr = random_image(16, 16)
        a = degrade(hr, 4, noise_sigma=0.05, seed=3).pixels
        b = degrade(hr, 4, noise_sigma=0.05, seed=3).pixels
        c = degrade(hr, 4, noise_sigma=0.05, seed=4).pixels
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_blur_changes_result(self, random_image):
        hr = random_image(16, 16)
        blurred = degrade(hr, 2, blur_kernel=gaussian_blur_kernel(1.0))
        assert blurred.pixels.shape == (3, 8, 8)
        assert not np.allclose(blurred.pixels, degrade(hr, 2).pixels)

    def test_size_must_divide(self, random_image):
        with pytest.raises(GeometryError):
            degrade(random_image(10, 10), 4)


class TestPatches:
    def test_alignment_and_determinism(self, random_image):
        hr = random_image(32, 32)
        pairs = extract_patch_pairs(hr, 4, 16, count=5, seed=9)
        again = extract_patch_pairs(hr, 4, 16, count=5, seed=9)
        for pair, other in zip(pairs, again):
            assert pair.x % 4 == 0 and pair.y % 4 == 0
            assert (pair.x, pair.y) == (other.x, other.y)
            assert pair.lr_coords == (pair.x // 4, pair.y // 4)
            np.testing.assert_array_equal(pair.hr_patch.pixels, hr.pixels[:, pair.y:pair.y + 16, pair.x:pair.x + 16])
            np.testing.assert_array_equal(pair.lr_patch.pixels, degrade(pair.hr_patch, 4).pixels)

    def test_patch_must_divide_scale(self, random_image):
        with pytest.raises(GeometryError):
            extract_patch_pairs(random_image(32, 32), 4, 10, count=1, seed=0)

    def test_image_smaller_than_patch(self, random_image):
        with pytest.raises(GeometryError):
            extract_patch_pairs(random_image(8, 8), 2, 16, count=1, seed=0)


class TestManifests:
    def test_synth_is_deterministic(self, tmp_path):
        first = DatasetService.synth_dataset(2, 16, seed=1, out_dir=tmp_path / "a")
        second = DatasetService.synth_dataset(2, 16, seed=1, out_dir=tmp_path / "b")
        for (a, _), (b, _) in zip(first.entries, second.entries):
            assert a.read_bytes() == b.read_bytes()
        other = DatasetService.synth_dataset(1, 16, seed=2, out_dir=tmp_path / "c")
        assert other.entries[0][0].read_bytes() != first.entries[0][0].read_bytes()

    def test_synth_images_use_full_range(self, dataset):
        img = load_image(dataset.entries[0][0])
        assert img.pixels.min() == 0.0 and img.pixels.max() == 1.0

    def test_round_trip(self, dataset, tmp_path):
        loaded = DatasetManifest.load(tmp_path / "hr")
        assert loaded.scale == 2 and loaded.split == "train"
        assert [p.resolve() for p, _ in loaded.entries] == [p.resolve() for p, _ in dataset.entries]
        assert all(lr is None for _, lr in loaded.entries)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            DatasetManifest.load(tmp_path)

    def test_missing_file(self, dataset, tmp_path):
        dataset.entries[0][0].unlink()
        with pytest.raises(DataError):
            DatasetManifest.load(tmp_path / "hr").validate()

    def test_empty_manifest(self):
        with pytest.raises(DataError):
            DatasetManifest().validate()

    def test_degrade_manifest(self, dataset, tmp_path):
        result = DatasetService.degrade_manifest(dataset, tmp_path / "lr", 2)
        assert (tmp_path / "lr" / config.MANIFEST_NAME).is_file()
        loaded = DatasetManifest.load(tmp_path / "lr")
        for hr_path, lr_path in loaded.entries:
            lr = load_image(lr_path)
            hr = load_image(hr_path)
            assert (lr.width, lr.height) == (hr.width // 2, hr.height // 2)
        assert len(result) == 3

    def test_load_pairs_degrades_missing_lr(self, dataset):
        pairs = dataset.load_pairs()
        assert [name for name, _, _ in pairs] == ["img_0000", "img_0001", "img_0002"]
        name, hr, lr = pairs[0]
        np.testing.assert_array_equal(lr.pixels, degrade(hr, 2).pixels)
