import numpy as np
import pytest

from regionmil.geometry import BBox
from regionmil.imaging import Image
from regionmil import infer
from regionmil.infer import classify
from conftest import make_constant_params, make_jittered_params


class TestRegionLayout:
    def test_example_300x200(self):
        regions = infer.test_regions(300, 200)
        assert len(regions) == 11
        assert regions[0] == BBox(0, 0, 300, 200)
        # 2/3 scale: 200x133 at four corners and center
        assert regions[1] == BBox(0, 0, 200, 133)
        assert regions[2] == BBox(100, 0, 200, 133)
        assert regions[3] == BBox(0, 67, 200, 133)
        assert regions[4] == BBox(100, 67, 200, 133)
        assert regions[5] == BBox(50, 33, 200, 133)
        # 1/2 scale: 150x100
        assert regions[6] == BBox(0, 0, 150, 100)
        assert regions[10] == BBox(75, 50, 150, 100)

    def test_square_image_symmetric_sizes(self):
        regions = infer.test_regions(90, 90)
        sizes = {(r.w, r.h) for r in regions}
        assert sizes == {(90.0, 90.0), (60.0, 60.0), (45.0, 45.0)}

    def test_all_in_bounds_various_shapes(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            w = int(rng.integers(1, 500))
            h = int(rng.integers(1, 500))
            regions = infer.test_regions(w, h)
            assert len(regions) == 11
            for r in regions:
                assert r.x >= 0 and r.y >= 0
                assert r.right <= w and r.bottom <= h

    def test_tiny_images_clamp_to_one_pixel(self):
        regions = infer.test_regions(1, 1)
        assert len(regions) == 11
        for r in regions:
            assert (r.w, r.h) == (1.0, 1.0)
            assert (r.x, r.y) == (0.0, 0.0)
        regions2 = infer.test_regions(2, 2)
        assert {(r.w, r.h) for r in regions2} == {(2.0, 2.0), (1.0, 1.0)}

    def test_full_frame_first(self):
        regions = infer.test_regions(64, 48)
        assert regions[0] == BBox(0, 0, 64, 48)

    def test_invalid_dimensions(self):
        with pytest.raises(ValueError):
            infer.test_regions(0, 10)


class TestClassify:
    def test_high_scorer_exits_on_first_region(self):
        params = make_constant_params(24, 0.9)
        rng = np.random.default_rng(1)
        img = Image(rng.random((40, 50, 3)))
        v = classify(params, img, threshold=0.5)
        assert v.label == "pos"
        assert v.regions_evaluated == 1
        assert v.triggering_region == BBox(0, 0, 50, 40)
        assert v.score == pytest.approx(0.9, abs=1e-12)

    def test_low_scorer_scans_all_regions(self):
        params = make_constant_params(24, 0.1)
        rng = np.random.default_rng(2)
        img = Image(rng.random((40, 50, 3)))
        v = classify(params, img, threshold=0.5)
        assert v.label == "neg"
        assert v.regions_evaluated == 11
        assert v.triggering_region is None
        assert v.score == pytest.approx(0.1, abs=1e-12)

    def test_exhaustive_mode_reports_first_hit_and_max_score(self):
        params = make_constant_params(24, 0.8)
        rng = np.random.default_rng(3)
        img = Image(rng.random((30, 30, 3)))
        v = classify(params, img, threshold=0.5, early_exit=False)
        assert v.label == "pos"
        assert v.regions_evaluated == 11
        assert v.triggering_region == BBox(0, 0, 30, 30)
        assert v.score == pytest.approx(0.8, abs=1e-12)

    def test_threshold_validated(self):
        params = make_constant_params(24, 0.5)
        img = Image(np.full((24, 24, 3), 0.5))
        for t in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                classify(params, img, threshold=t)

    def test_threshold_monotone(self):
        # Raising the threshold can only flip positives to negatives.
        rng = np.random.default_rng(4)
        flips = 0
        for trial in range(12):
            params = make_jittered_params(22, seed=trial)
            img = Image(rng.random((36, 44, 3)))
            labels = [
                classify(params, img, threshold=t).label
                for t in (0.2, 0.4, 0.6, 0.8)
            ]
            pos_flags = [lab == "pos" for lab in labels]
            assert pos_flags == sorted(pos_flags, reverse=True)
            flips += int(len(set(labels)) > 1)
        assert flips > 0, "test needs at least one borderline model to bite"

    def test_early_exit_agrees_with_exhaustive(self):
        rng = np.random.default_rng(5)
        disagreements = 0
        for trial in range(40):
            params = make_jittered_params(22, seed=100 + trial)
            h = int(rng.integers(10, 60))
            w = int(rng.integers(10, 60))
            img = Image(rng.random((h, w, 3)))
            t = float(rng.uniform(0.25, 0.75))
            fast = classify(params, img, threshold=t, early_exit=True)
            full = classify(params, img, threshold=t, early_exit=False)
            assert fast.label == full.label
            if fast.label == "pos":
                assert fast.triggering_region == full.triggering_region
            else:
                assert fast.score == pytest.approx(full.score, abs=1e-12)
            disagreements += int(fast.regions_evaluated != full.regions_evaluated)
        assert disagreements > 0, "some positives should exit before region 11"

    def test_small_image_upsampled_for_scoring(self):
        params = make_constant_params(24, 0.9)
        img = Image(np.full((5, 7, 3), 0.3))
        v = classify(params, img)
        assert v.label == "pos"
