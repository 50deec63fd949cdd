from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudseg.augment import (
    KINDS,
    Augmentation,
    GridDistortParams,
    Record,
    apply,
    augment_dataset,
    augmented_name,
    axis_map,
    grid_distort_field,
    random_augmentation,
    record_rng,
)
from cloudseg.tensor import ShapeError

scales = st.floats(0.7, 1.3)


@pytest.fixture
def sample():
    rng = np.random.default_rng(0)
    image = rng.random((3, 24, 32)).astype(np.float32)
    masks = rng.random((4, 24, 32)) < 0.4
    return image, masks


def all_augmentations(rng):
    grid = GridDistortParams.sample(rng)
    return [Augmentation("hflip"), Augmentation("vflip"), Augmentation("rotate", angle=13.0),
            Augmentation("rotate", angle=-20.0), Augmentation("grid_distort", grid=grid)]


class TestFlips:
    @pytest.mark.parametrize("kind", ["hflip", "vflip"])
    def test_involution(self, sample, kind):
        image, masks = sample
        aug = Augmentation(kind)
        i2, m2 = apply(aug, *apply(aug, image, masks))
        np.testing.assert_array_equal(i2, image)
        np.testing.assert_array_equal(m2, masks)

    def test_hflip_reverses_columns(self, sample):
        image, masks = sample
        i2, m2 = apply(Augmentation("hflip"), image, masks)
        np.testing.assert_array_equal(i2[:, :, 0], image[:, :, -1])
        np.testing.assert_array_equal(m2[:, 5, :], masks[:, 5, ::-1])


class TestRotate:
    def test_zero_is_identity(self, sample):
        image, masks = sample
        i2, m2 = apply(Augmentation("rotate", angle=0.0), image, masks)
        np.testing.assert_allclose(i2, image, atol=1e-6)
        np.testing.assert_array_equal(m2, masks)

    def test_uint8_identity(self):
        img = np.random.default_rng(1).integers(0, 256, (3, 10, 12), dtype=np.uint8)
        i2, _ = apply(Augmentation("rotate", angle=0.0), img, np.zeros((4, 10, 12), bool))
        assert i2.dtype == np.uint8
        np.testing.assert_array_equal(i2, img)

    def test_limit(self):
        with pytest.raises(ValueError, match="outside"):
            Augmentation("rotate", angle=20.5)

    @pytest.mark.parametrize("angle", [-20.0, -7.5, 11.0, 20.0])
    def test_energy_preserved(self, angle):
        yy, xx = np.indices((64, 80))
        blob = ((yy - 31.5) ** 2 + (xx - 39.5) ** 2 < 20 ** 2).astype(np.float64)
        blob = blob * (1 + 0.5 * np.sin(xx / 3.0))
        out, _ = apply(Augmentation("rotate", angle=angle), blob[None], np.zeros((1, 64, 80), bool))
        assert abs(out.sum() / blob.sum() - 1) < 0.1

    def test_corners_filled_black(self):
        img = np.ones((1, 40, 40))
        out, m = apply(Augmentation("rotate", angle=20.0), img, np.ones((1, 40, 40), bool))
        assert out[0, 0, 0] == 0 and not m[0, 0, 0]
        assert out[0, 20, 20] == 1 and m[0, 20, 20]


class TestGridDistort:
    def test_identity_params(self, sample):
        image, masks = sample
        i2, m2 = apply(Augmentation("grid_distort", grid=GridDistortParams.identity()), image, masks)
        np.testing.assert_allclose(i2, image, atol=1e-6)
        np.testing.assert_array_equal(m2, masks)

    def test_identity_field(self):
        fy, fx = grid_distort_field(GridDistortParams.identity(), 12, 17)
        np.testing.assert_allclose(fy[:, 0], np.arange(12), atol=1e-12)
        np.testing.assert_allclose(fx[0], np.arange(17), atol=1e-12)

    def test_two_cell_knot(self):
        # width 100, scales (2, 1): cumulative (0, 2, 3) renormalised to 99 puts the
        # middle source knot at 66, reached at destination 49.5
        m = axis_map((2.0, 1.0), 100)
        assert m[0] == 0 and m[-1] == 99
        assert m[49] == pytest.approx(66 * 49 / 49.5, abs=1e-12)
        assert m[50] == pytest.approx(66 + 33 * 0.5 / 49.5, abs=1e-12)
        # odd width puts the destination knot on pixel 50: source 100 * 2/3
        assert axis_map((2.0, 1.0), 101)[50] == pytest.approx(200 / 3, abs=1e-12)

    @given(st.lists(scales, min_size=2, max_size=8), st.integers(8, 200))
    def test_monotone_with_fixed_endpoints(self, steps, size):
        m = axis_map(steps, size)
        assert np.all(np.diff(m) > 0)
        assert m[0] == 0 and m[-1] == pytest.approx(size - 1, abs=1e-9)
        assert m.min() >= 0 and m.max() <= size - 1 + 1e-9

    def test_too_small(self):
        with pytest.raises(ShapeError):
            grid_distort_field(GridDistortParams.identity(5), 4, 10)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            GridDistortParams((1.0, 0.0), (1.0, 1.0))
        with pytest.raises(ValueError):
            GridDistortParams((1.0,), (1.0,))
        with pytest.raises(ValueError, match="grid"):
            Augmentation("grid_distort")


class TestJoint:
    def test_dims_and_count_preserved(self, sample):
        image, masks = sample
        for aug in all_augmentations(np.random.default_rng(3)):
            i2, m2 = apply(aug, image, masks)
            assert i2.shape == image.shape and m2.shape == masks.shape
            assert m2.dtype == bool

    def test_union_commutes(self):
        rng = np.random.default_rng(4)
        a = rng.random((1, 30, 36)) < 0.3
        b = rng.random((1, 30, 36)) < 0.3
        img = np.zeros((1, 30, 36))
        for aug in all_augmentations(rng):
            _, ua = apply(aug, img, a)
            _, ub = apply(aug, img, b)
            _, uab = apply(aug, img, a | b)
            np.testing.assert_array_equal(uab, ua | ub)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            apply(Augmentation("hflip"), np.zeros((3, 4, 5)), np.zeros((4, 4, 6)))

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="shear"):
            Augmentation("shear")


class TestDataset:
    @pytest.fixture
    def records(self):
        rng = np.random.default_rng(5)
        return [Record(f"img{i}.png", rng.random((3, 10, 10)).astype(np.float32), rng.random((4, 10, 10)) < 0.5)
                for i in range(10)]

    def test_doubles(self, records):
        out = augment_dataset(records, seed=1)
        assert len(out) == 20
        assert out[:10] == records
        assert all(r.augmentation is not None for r in out[10:])
        assert [r.name.split("_")[0] for r in out[10:]] == [f"img{i}" for i in range(10)]

    def test_deterministic(self, records):
        a = augment_dataset(records, seed=7)
        b = augment_dataset(records, seed=7)
        for ra, rb in zip(a, b):
            assert ra.name == rb.name and ra.augmentation == rb.augmentation
            np.testing.assert_array_equal(ra.image, rb.image)
            np.testing.assert_array_equal(ra.masks, rb.masks)

    def test_order_independent(self, records):
        full = augment_dataset(records, seed=7)
        assert random_augmentation(record_rng(7, 3)) == full[13].augmentation

    def test_kind_frequencies(self):
        recs = [Record(str(i), np.zeros((1, 6, 6), np.float32), np.zeros((1, 6, 6), bool)) for i in range(10_000)]
        out = augment_dataset(recs, seed=0)
        counts = Counter(r.augmentation.kind for r in out[10_000:])
        sd = np.sqrt(10_000 * 0.25 * 0.75)
        assert set(counts) == set(KINDS)
        assert all(abs(c - 2500) <= 4 * sd for c in counts.values()), counts

    def test_sampled_parameters_in_range(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            aug = random_augmentation(rng)
            if aug.kind == "rotate":
                assert -20 <= aug.angle <= 20
            if aug.kind == "grid_distort":
                assert all(0.7 <= s <= 1.3 for s in aug.grid.x_steps + aug.grid.y_steps)

    def test_names(self):
        assert augmented_name("a.b.png", "hflip") == "a.b_hflip.png"
        assert augmented_name("raw", "rotate") == "raw_rotate"
