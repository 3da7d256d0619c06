import numpy as np
import pytest

from sqrecover.core import Superquadric
from sqrecover.metrics import (
    PARAM_NAMES,
    BoxStats,
    corrupt_mask,
    mask_iou,
    mask_map,
    param_mae,
    reconstruction_mae,
)

from .conftest import random_superquadric


def offset_params(sq: Superquadric, size_pos: float, shape: float) -> Superquadric:
    arr = sq.as_array()
    arr[[0, 1, 2, 5, 6, 7]] += size_pos
    arr[[3, 4]] += shape
    return Superquadric.from_array(arr)


def rect_mask(shape, y0, y1, x0, x1):
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


class TestParamMae:
    def test_zero_error_for_identical_parameters(self, rng):
        truth = [random_superquadric(rng) for _ in range(5)]
        report = param_mae(truth, truth, [(i, i) for i in range(5)])
        assert all(v == 0.0 for v in report.rows["all"].mae.values())

    def test_constant_offsets_give_exact_mae(self, rng):
        truth = [random_superquadric(rng) for _ in range(4)]
        pred = [offset_params(sq, 1.0, -0.005) for sq in truth]
        report = param_mae(pred, truth, [(i, i) for i in range(4)])
        mae = report.rows["all"].mae
        for name in ("a1", "a2", "a3", "x0", "y0", "z0"):
            assert mae[name] == pytest.approx(1.0)
        for name in ("eps1", "eps2"):
            assert mae[name] == pytest.approx(0.005)

    def test_relative_error_conventions(self, rng):
        truth = [random_superquadric(rng)]
        arr = truth[0].as_array()
        arr[[0, 1, 2, 5, 6, 7]] *= 1.1    # +10 % on sizes and positions
        arr[[3, 4]] = np.clip(arr[[3, 4]] + 0.05, None, 1.05)
        pred = [Superquadric.from_array(arr)]
        report = param_mae(pred, truth, [(0, 0)])
        for name in ("a1", "a2", "a3", "x0", "y0", "z0"):
            assert report.relative_error[name].median == pytest.approx(0.1)
        for name in ("eps1", "eps2"):
            assert report.relative_error[name].median == pytest.approx(0.05)

    def test_pooled_row_is_weighted_mean_of_count_rows(self, rng):
        truth = [random_superquadric(rng) for _ in range(60)]
        pred = [offset_params(sq, float(rng.normal()), 0.0) for sq in truth]
        counts = [int(c) for c in rng.integers(1, 6, size=60)]
        report = param_mae(pred, truth, [(i, i) for i in range(60)],
                           scene_counts=counts)
        for name in PARAM_NAMES:
            weighted = sum(
                report.rows[key].pairs * report.rows[key].mae[name]
                for key in report.rows if key != "all"
            ) / report.rows["all"].pairs
            assert abs(weighted - report.rows["all"].mae[name]) <= 1e-12

    def test_empty_matching_raises(self):
        with pytest.raises(ValueError, match="empty"):
            param_mae([], [], [])

    def test_report_carries_reference_header(self, rng):
        truth = [random_superquadric(rng)]
        payload = param_mae(truth, truth, [(0, 0)]).to_dict()
        assert payload["reference_cnn_param_mae"]["all"]["a1"] == 1.134


class TestMaskIou:
    def test_identical(self):
        m = rect_mask((6, 6), 1, 4, 1, 4)
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = rect_mask((6, 6), 0, 2, 0, 2)
        b = rect_mask((6, 6), 4, 6, 4, 6)
        assert mask_iou(a, b) == 0.0

    def test_hand_case_one_third(self):
        a = np.array([[1, 1, 0]], dtype=bool)
        b = np.array([[0, 1, 1]], dtype=bool)
        assert mask_iou(a, b) == pytest.approx(1.0 / 3.0)

    def test_both_empty_is_zero(self):
        empty = np.zeros((3, 3), dtype=bool)
        assert mask_iou(empty, empty) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            mask_iou(np.zeros((2, 2), bool), np.zeros((3, 3), bool))


class TestMaskMap:
    def test_perfect_predictions_score_100_everywhere(self):
        truths = [
            [rect_mask((32, 32), 2, 10, 2, 10), rect_mask((32, 32), 15, 28, 12, 30)],
            [rect_mask((32, 32), 5, 20, 5, 20)],
        ]
        preds = [[(m, 1.0) for m in scene] for scene in truths]
        report = mask_map(preds, truths)
        assert report.map == 100.0
        assert report.map50 == 100.0
        assert report.map75 == 100.0
        assert all(v == 100.0 for v in report.per_threshold.values())
        assert report.per_count == {1: 100.0, 2: 100.0}

    def test_no_predictions_scores_zero(self):
        truths = [[rect_mask((16, 16), 2, 10, 2, 10)]]
        report = mask_map([[]], truths)
        assert report.map == 0.0

    def test_hand_traced_pr_curve(self):
        truth = rect_mask((20, 20), 5, 10, 5, 10)   # 25 px
        good = rect_mask((20, 20), 5, 10, 6, 11)    # IoU 2/3
        bad = rect_mask((20, 20), 0, 3, 0, 3)       # tiny overlap
        report = mask_map(
            [[(good, 0.9), (bad, 0.8)]], [[truth]], thresholds=(0.5,)
        )
        assert report.per_threshold[0.5] == 100.0

    def test_ap_non_increasing_in_threshold(self, rng):
        truths, preds = [], []
        for _ in range(8):
            scene_truths, scene_preds = [], []
            for _ in range(int(rng.integers(1, 4))):
                y, x = rng.integers(0, 16, size=2)
                h, w = rng.integers(4, 12, size=2)
                t = rect_mask((40, 40), y, y + h, x, x + w)
                jy, jx = rng.integers(-2, 3, size=2)
                p = rect_mask((40, 40), y + jy, y + h + jy, x + jx, x + w + jx)
                scene_truths.append(t)
                scene_preds.append((p, float(rng.uniform(0.5, 1.0))))
            truths.append(scene_truths)
            preds.append(scene_preds)
        report = mask_map(preds, truths)
        values = [report.per_threshold[t] for t in sorted(report.per_threshold)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert report.map <= report.map50

    def test_score_validation(self):
        t = rect_mask((8, 8), 1, 4, 1, 4)
        with pytest.raises(ValueError, match="score"):
            mask_map([[(t, 1.5)]], [[t]])


class TestReconstructionMae:
    def test_identity_and_offset(self, rng):
        img = rng.uniform(0, 250, size=(16, 16))
        assert reconstruction_mae(img, img) == 0.0
        assert reconstruction_mae(img, img + 1.0) == pytest.approx(1.0)

    def test_metric_properties(self, rng):
        a, b, c = (rng.uniform(0, 256, size=(12, 12)) for _ in range(3))
        assert reconstruction_mae(a, b) == reconstruction_mae(b, a)
        assert reconstruction_mae(a, c) <= (
            reconstruction_mae(a, b) + reconstruction_mae(b, c) + 1e-12
        )

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            reconstruction_mae(np.zeros((2, 2)), np.zeros((3, 3)))


class TestCorruptMask:
    MODES = ("erode-border", "drop-random-blocks", "shift")

    def test_severity_zero_is_identity(self, rng):
        mask = rect_mask((20, 20), 4, 15, 3, 17)
        for mode in self.MODES:
            out = corrupt_mask(mask, mode, 0.0, rng)
            assert np.array_equal(out, mask)

    def test_erode_full_severity_on_3x3_solid(self, rng):
        out = corrupt_mask(np.ones((3, 3), bool), "erode-border", 1.0, rng)
        expected = np.zeros((3, 3), bool)
        expected[1, 1] = True
        assert np.array_equal(out, expected)

    def test_erosion_never_empties_mask(self, rng):
        mask = rect_mask((30, 30), 5, 25, 5, 25)
        out = corrupt_mask(mask, "erode-border", 1.0, rng)
        assert out.any()
        assert np.all(mask[out])  # strictly a subset

    def test_drop_blocks_removes_roughly_requested_fraction(self, rng):
        mask = rect_mask((64, 64), 8, 56, 8, 56)
        out = corrupt_mask(mask, "drop-random-blocks", 0.4, rng)
        removed = 1.0 - out.sum() / mask.sum()
        assert 0.3 <= removed <= 0.6

    def test_shift_moves_mask(self, rng):
        mask = rect_mask((40, 40), 10, 25, 10, 25)
        out = corrupt_mask(mask, "shift", 1.0, rng)
        assert out.sum() <= mask.sum()
        assert mask_iou(out, mask) < 0.5

    def test_mean_iou_monotone_in_severity(self, rng):
        masks = []
        for _ in range(60):
            y, x = rng.integers(2, 20, size=2)
            h, w = rng.integers(8, 20, size=2)
            masks.append(rect_mask((48, 48), y, y + h, x, x + w))
        for mode in self.MODES:
            means = []
            for severity in (0.0, 0.25, 0.5, 0.75, 1.0):
                ious = [
                    mask_iou(
                        corrupt_mask(
                            m, mode, severity,
                            np.random.default_rng(1000 + i),
                        ),
                        m,
                    )
                    for i, m in enumerate(masks)
                ]
                means.append(float(np.mean(ious)))
            assert all(
                later <= earlier + 1e-9
                for earlier, later in zip(means, means[1:])
            ), (mode, means)

    def test_unknown_mode_and_bad_severity(self, rng):
        mask = rect_mask((8, 8), 1, 5, 1, 5)
        with pytest.raises(ValueError, match="mode"):
            corrupt_mask(mask, "melt", 0.5, rng)
        with pytest.raises(ValueError, match="severity"):
            corrupt_mask(mask, "shift", 1.5, rng)


class TestBoxStats:
    def test_known_quartiles(self):
        stats = BoxStats.from_sample(np.arange(1.0, 10.0))
        assert stats.median == 5.0
        assert stats.q1 == 3.0
        assert stats.q3 == 7.0
        assert stats.whisker_low == 1.0
        assert stats.whisker_high == 9.0

    def test_outliers_excluded_from_whiskers(self):
        sample = np.concatenate([np.arange(1.0, 10.0), [100.0]])
        stats = BoxStats.from_sample(sample)
        assert stats.whisker_high < 100.0
