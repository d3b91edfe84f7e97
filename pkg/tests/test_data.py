"""Synthetic dataset determinism, balance, self-consistency of the
subcategory rule, domain separability, and PNG round trips."""

import numpy as np
import pytest
from PIL import Image

from adastyle import generate_dataset, load_dataset, load_png, save_png, write_dataset
from adastyle.data import (
    DOMAIN_DOTS,
    DOMAIN_STRIPES,
    anisotropy_statistic,
    generate_sample,
    infer_subcategory,
    save_grid,
)


class TestGeneration:
    def test_same_seed_identical_bytes(self):
        a = generate_dataset(7, 40)
        b = generate_dataset(7, 40)
        assert a.images.tobytes() == b.images.tobytes()
        np.testing.assert_array_equal(a.domains, b.domains)
        np.testing.assert_array_equal(a.subcats, b.subcats)
        np.testing.assert_array_equal(a.train_mask, b.train_mask)

    def test_different_seed_differs(self):
        assert (generate_dataset(1, 40).images.tobytes()
                != generate_dataset(2, 40).images.tobytes())

    def test_balanced_subcategories(self):
        ds = generate_dataset(0, 128)
        for d in (DOMAIN_STRIPES, DOMAIN_DOTS):
            subs = ds.subcats[ds.domains == d]
            counts = np.bincount(subs, minlength=4)
            np.testing.assert_array_equal(counts, 32)

    def test_pixel_range(self):
        ds = generate_dataset(3, 64)
        assert ds.images.min() >= -1.0 and ds.images.max() <= 1.0

    def test_count_too_small(self):
        with pytest.raises(ValueError, match="at least 32"):
            generate_dataset(0, 16)

    def test_split_fraction(self):
        ds = generate_dataset(0, 512)
        frac = len(ds.test_indices) / len(ds.images)
        assert 0.05 < frac < 0.15

    def test_sample_is_pure_function(self):
        a, sub_a = generate_sample(9, DOMAIN_DOTS, 13)
        b, sub_b = generate_sample(9, DOMAIN_DOTS, 13)
        assert a.tobytes() == b.tobytes() and sub_a == sub_b


class TestSelfConsistency:
    def test_subcategory_recoverable_from_pixels(self):
        ds = generate_dataset(11, 64)
        for i in range(len(ds.images)):
            got = infer_subcategory(ds.images[i], ds.domains[i])
            assert got == ds.subcats[i], (
                f"sample {i}: domain {ds.domains[i]} subcat {ds.subcats[i]} "
                f"classified as {got}")

    def test_domains_linearly_separable_by_anisotropy(self):
        ds = generate_dataset(4, 96)
        stripe_stats = [anisotropy_statistic(img)
                        for img in ds.images[ds.domains == DOMAIN_STRIPES]]
        dot_stats = [anisotropy_statistic(img)
                     for img in ds.images[ds.domains == DOMAIN_DOTS]]
        assert min(stripe_stats) > max(dot_stats), (
            f"stripes {min(stripe_stats):.3f} vs dots {max(dot_stats):.3f}")


class TestPngIO:
    def test_zero_tensor_maps_to_128(self, tmp_path):
        path = tmp_path / "gray.png"
        save_png(np.zeros((3, 8, 8), dtype=np.float32), path)
        with Image.open(path) as im:
            arr = np.asarray(im)
        assert (arr == 128).all()

    def test_round_trip_quantization_bound(self, tmp_path, rng):
        img = rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32)
        path = tmp_path / "img.png"
        save_png(img, path)
        back = load_png(path)
        assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-7

    def test_extremes_preserved(self, tmp_path):
        img = np.stack([np.full((4, 4), -1.0), np.full((4, 4), 1.0),
                        np.zeros((4, 4))]).astype(np.float32)
        path = tmp_path / "extremes.png"
        save_png(img, path)
        back = load_png(path)
        np.testing.assert_allclose(back[0], -1.0)
        np.testing.assert_allclose(back[1], 1.0)

    def test_four_channel_file_rejected(self, tmp_path):
        path = tmp_path / "rgba.png"
        Image.fromarray(np.zeros((4, 4, 4), dtype=np.uint8), mode="RGBA").save(path)
        with pytest.raises(ValueError, match="3-channel"):
            load_png(path)

    def test_grayscale_rejected(self, tmp_path):
        path = tmp_path / "gray1.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(path)
        with pytest.raises(ValueError, match="3-channel"):
            load_png(path)

    def test_wrong_save_shape(self, tmp_path):
        with pytest.raises(ValueError, match=r"\(3, h, w\)"):
            save_png(np.zeros((1, 8, 8)), tmp_path / "x.png")


class TestDatasetIO:
    def test_write_and_load_round_trip(self, tmp_path):
        ds = generate_dataset(2, 40)
        out = tmp_path / "data"
        write_dataset(ds, out)
        assert (out / "manifest.txt").exists()
        back = load_dataset(out)
        np.testing.assert_array_equal(back.domains, ds.domains)
        np.testing.assert_array_equal(back.subcats, ds.subcats)
        np.testing.assert_array_equal(back.train_mask, ds.train_mask)
        assert np.abs(back.images - ds.images).max() <= 1.0 / 255.0 + 1e-7

    def test_manifest_format(self, tmp_path):
        ds = generate_dataset(2, 32)
        out = tmp_path / "data"
        write_dataset(ds, out)
        lines = (out / "manifest.txt").read_text().splitlines()
        assert len(lines) == 64
        name, domain, subcat = lines[0].split()
        assert name.endswith(".png") and domain in "01" and subcat in "0123"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_dataset(tmp_path)

    def test_grid_dump(self, tmp_path, rng):
        imgs = rng.uniform(-1, 1, (5, 3, 8, 8)).astype(np.float32)
        path = tmp_path / "grid.png"
        save_grid(imgs, path, cols=3)
        with Image.open(path) as im:
            assert im.size == (24, 16)  # 3 cols x 2 rows of 8x8
