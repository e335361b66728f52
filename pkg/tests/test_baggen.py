import numpy as np
import pytest

from regionmil.baggen import Bag, BagSpec, generate_negative_bag, generate_positive_bag, subsample_bag
from regionmil.geometry import BBox
from regionmil.imaging import Image
from regionmil import infer


def blank_image(w, h):
    return Image(np.full((h, w, 3), 0.5))


def assert_in_bounds(bag, w, h):
    for r in bag.regions:
        assert r.x >= -1e-9 and r.y >= -1e-9
        assert r.right <= w + 1e-9 and r.bottom <= h + 1e-9


class TestBagSpec:
    def test_defaults(self):
        spec = BagSpec()
        assert spec.scale_factors == (2.0, 2.5, 3.0)
        assert spec.regions_per_positive == 100

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"scale_factors": ()},
            {"scale_factors": (1.0, 2.0)},
            {"scale_factors": (0.5,)},
            {"regions_per_positive": 0},
            {"displacement_frac": -0.1},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            BagSpec(**kwargs)


class TestBag:
    def test_counts(self):
        bag = Bag(
            image_id="x",
            label="pos",
            regions=[BBox(0, 0, 1, 1)] * 3,
            weights=[0.5, 0.5, 0.0],
            degrees=[1.0, 0.8, 0.0],
        )
        assert bag.n == 3
        assert bag.n_pos == 2
        assert bag.n_neg == 1

    def test_alignment_enforced(self):
        with pytest.raises(ValueError):
            Bag(image_id="x", label="pos", regions=[BBox(0, 0, 1, 1)], weights=[1.0, 0.0], degrees=[1.0])


class TestPositiveBags:
    def test_region_count_and_weight_sum(self):
        img = blank_image(200, 200)
        ann = BBox(40.0, 40.0, 20.0, 20.0)
        bag = generate_positive_bag(img, [ann], BagSpec(rng_seed=7))
        assert bag.n == 100
        assert bag.label == "pos"
        assert bag.n_pos >= 1
        assert abs(bag.weights[bag.weights > 0].sum() - 1.0) <= 1e-9
        assert_in_bounds(bag, 200, 200)

    def test_every_window_overlaps_its_annotation(self):
        # Displacement is bounded by half the window size (default), so a
        # window can slide at most to where its edge still crosses the
        # annotation center.
        img = blank_image(300, 240)
        ann = BBox(100.0, 80.0, 30.0, 24.0)
        bag = generate_positive_bag(img, [ann], BagSpec(rng_seed=3))
        assert (bag.degrees > 0).all()
        assert bag.n_neg == 0

    def test_zero_displacement_hand_layout(self):
        # Square image, factor 2 only, no displacement: each window is
        # exactly twice the annotation's larger side, centered on it.
        img = blank_image(100, 100)
        ann_a = BBox(10.0, 10.0, 10.0, 10.0)
        ann_b = BBox(70.0, 20.0, 20.0, 10.0)
        spec = BagSpec(scale_factors=(2.0,), regions_per_positive=4, displacement_frac=0.0)
        bag = generate_positive_bag(img, [ann_a, ann_b], spec)
        assert bag.regions[0] == BBox(5.0, 5.0, 20.0, 20.0)
        assert bag.regions[1] == BBox(5.0, 5.0, 20.0, 20.0)
        assert bag.regions[2] == BBox(60.0, 5.0, 40.0, 40.0)
        assert bag.regions[3] == BBox(60.0, 5.0, 40.0, 40.0)
        np.testing.assert_array_equal(bag.degrees, 1.0)
        np.testing.assert_allclose(bag.weights, 0.25, atol=1e-15)

    def test_regions_split_across_annotations(self):
        img = blank_image(400, 400)
        anns = [BBox(50, 50, 20, 20), BBox(200, 200, 20, 20), BBox(300, 100, 20, 20)]
        bag = generate_positive_bag(img, anns, BagSpec(regions_per_positive=10, rng_seed=1))
        assert bag.n == 10  # 4 + 3 + 3

    def test_oversized_window_degrades_to_full_frame(self):
        img = blank_image(50, 50)
        ann = BBox(5.0, 5.0, 40.0, 40.0)  # 2x side = 80 > 50
        bag = generate_positive_bag(img, [ann], BagSpec(scale_factors=(2.0,), regions_per_positive=5, rng_seed=0))
        for r in bag.regions:
            assert r == BBox(0.0, 0.0, 50.0, 50.0)
        np.testing.assert_array_equal(bag.degrees, 1.0)

    def test_deterministic_per_seed(self):
        img = blank_image(160, 120)
        ann = BBox(30.0, 30.0, 25.0, 18.0)
        a = generate_positive_bag(img, [ann], BagSpec(rng_seed=42))
        b = generate_positive_bag(img, [ann], BagSpec(rng_seed=42))
        c = generate_positive_bag(img, [ann], BagSpec(rng_seed=43))
        assert a.regions == b.regions
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.regions != c.regions

    def test_requires_annotations(self):
        with pytest.raises(ValueError):
            generate_positive_bag(blank_image(50, 50), [], BagSpec())

    def test_window_follows_image_aspect(self):
        # 2:1 image, square annotation, no displacement: window must be 2:1.
        img = blank_image(200, 100)
        ann = BBox(80.0, 40.0, 20.0, 20.0)
        spec = BagSpec(scale_factors=(2.0,), regions_per_positive=1, displacement_frac=0.0)
        bag = generate_positive_bag(img, [ann], spec)
        r = bag.regions[0]
        assert r.w == pytest.approx(40.0, abs=1e-12)
        assert r.h == pytest.approx(20.0, abs=1e-12)

    def test_invariants_over_many_random_bags(self):
        rng = np.random.default_rng(99)
        for trial in range(40):
            w = int(rng.integers(60, 400))
            h = int(rng.integers(max(60, w // 2), min(400, w * 2)))
            n_ann = int(rng.integers(1, 4))
            anns = []
            for _ in range(n_ann):
                aw = float(rng.uniform(8, w / 4))
                ah = float(rng.uniform(8, h / 4))
                anns.append(BBox(float(rng.uniform(0, w - aw)), float(rng.uniform(0, h - ah)), aw, ah))
            spec = BagSpec(regions_per_positive=int(rng.integers(1, 40)), rng_seed=trial)
            bag = generate_positive_bag(blank_image(w, h), anns, spec)
            assert bag.n == spec.regions_per_positive
            assert_in_bounds(bag, w, h)
            if bag.n_pos:
                assert abs(bag.weights[bag.weights > 0].sum() - 1.0) <= 1e-9
            assert (bag.weights >= 0).all()
            assert ((bag.degrees > 0) == (bag.weights > 0)).all()


class TestNegativeBags:
    def test_reuses_test_layout_with_zero_weights(self):
        img = blank_image(300, 200)
        bag = generate_negative_bag(img, image_id="n1")
        assert bag.label == "neg"
        assert bag.regions == infer.test_regions(300, 200)
        assert bag.n == 11
        np.testing.assert_array_equal(bag.weights, 0.0)
        np.testing.assert_array_equal(bag.degrees, 0.0)
        assert bag.n_pos == 0


class TestSubsample:
    def make_mixed_bag(self, n_pos, n_neg):
        regions = [BBox(float(i), 0.0, 1.0, 1.0) for i in range(n_pos + n_neg)]
        degrees = np.concatenate([np.linspace(0.2, 1.0, n_pos), np.zeros(n_neg)])
        weights = np.zeros(n_pos + n_neg)
        if n_pos:
            weights[:n_pos] = degrees[:n_pos] / degrees[:n_pos].sum()
        return Bag(image_id="m", label="pos", regions=regions, weights=weights, degrees=degrees)

    def test_proportional_split(self):
        bag = self.make_mixed_bag(50, 50)
        out = subsample_bag(bag, 16, rng_seed=0)
        assert out.n == 16
        assert out.n_pos == 8
        assert out.n_neg == 8
        assert abs(out.weights[out.weights > 0].sum() - 1.0) <= 1e-9

    def test_weight_proportions_preserved(self):
        bag = self.make_mixed_bag(10, 10)
        out = subsample_bag(bag, 8, rng_seed=1)
        kept = out.weights[out.weights > 0]
        kept_deg = out.degrees[out.weights > 0]
        np.testing.assert_allclose(kept, kept_deg / kept_deg.sum(), atol=1e-12)

    def test_both_subbags_survive_extreme_imbalance(self):
        bag = self.make_mixed_bag(1, 99)
        out = subsample_bag(bag, 10, rng_seed=2)
        assert out.n_pos == 1
        assert out.n_neg == 9
        bag2 = self.make_mixed_bag(99, 1)
        out2 = subsample_bag(bag2, 10, rng_seed=3)
        assert out2.n_pos == 9
        assert out2.n_neg == 1

    def test_single_subbag_bags(self):
        all_neg = self.make_mixed_bag(0, 30)
        out = subsample_bag(all_neg, 4, rng_seed=4)
        assert out.n == 4 and out.n_pos == 0
        all_pos = self.make_mixed_bag(30, 0)
        out2 = subsample_bag(all_pos, 4, rng_seed=5)
        assert out2.n == 4 and out2.n_neg == 0
        assert abs(out2.weights.sum() - 1.0) <= 1e-9

    def test_small_bag_returned_unchanged(self):
        bag = self.make_mixed_bag(3, 3)
        assert subsample_bag(bag, 6, rng_seed=0) is bag
        assert subsample_bag(bag, 10, rng_seed=0) is bag

    def test_k_below_two_rejected(self):
        with pytest.raises(ValueError):
            subsample_bag(self.make_mixed_bag(5, 5), 1, rng_seed=0)

    def test_deterministic(self):
        bag = self.make_mixed_bag(40, 40)
        a = subsample_bag(bag, 12, rng_seed=9)
        b = subsample_bag(bag, 12, rng_seed=9)
        assert a.regions == b.regions
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_region_order_preserved(self):
        bag = self.make_mixed_bag(20, 20)
        out = subsample_bag(bag, 10, rng_seed=6)
        xs = [r.x for r in out.regions]
        assert xs == sorted(xs)
