import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agmerge.evaluate import (IOU_THRESHOLDS, Detection, ap_report, ap_single,
                              confusion_matrix, detections_from_labels, mask_iou)
from agmerge.tensor_io import InstanceRecord


def box(r0, c0, r1, c1, shape=(10, 10)):
    m = np.zeros(shape, dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


class TestIou:
    def test_examples(self):
        a = box(0, 0, 2, 2)
        assert mask_iou(a, a) == 1.0
        assert mask_iou(a, box(5, 5, 7, 7)) == 0.0
        assert mask_iou(box(0, 0, 1, 4), box(0, 2, 1, 6)) == pytest.approx(2 / 6)

    def test_errors(self):
        with pytest.raises(ValueError):
            mask_iou(np.zeros((3, 3)), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            mask_iou(np.ones((3, 3)), np.ones((3, 4)))


class TestApSingle:
    def test_perfect(self):
        gts = [Detection(box(0, 0, 3, 3), 1), Detection(box(5, 5, 9, 9), 1)]
        preds = [Detection(g.mask, 1, c) for g, c in zip(gts, (0.9, 0.4))]
        assert ap_single(preds, gts, 0.95) == 1.0

    def test_no_predictions(self):
        assert ap_single([], [Detection(box(0, 0, 3, 3), 1)], 0.5) == 0.0

    def test_only_second_matches(self):
        # precision 0 at rank 1, 1/2 at rank 2 where recall reaches 1/2
        gts = [Detection(box(0, 0, 3, 3), 1), Detection(box(5, 5, 9, 9), 1)]
        preds = [Detection(box(0, 6, 2, 9), 1, 0.9), Detection(gts[0].mask, 1, 0.3)]
        assert ap_single(preds, gts, 0.5) == pytest.approx(0.25)

    def test_duplicate_is_false_positive(self):
        g = Detection(box(0, 0, 3, 3), 1)
        preds = [Detection(g.mask, 1, 0.9), Detection(g.mask, 1, 0.8)]
        assert ap_single(preds, [g], 0.5) == 1.0
        assert ap_single(preds[::-1], [g], 0.5) == 1.0

    def test_greedy_takes_highest_iou(self):
        g1 = Detection(box(0, 0, 4, 4), 1)
        g2 = Detection(box(0, 2, 4, 6), 1)
        p = Detection(box(0, 2, 4, 5), 1, 0.9)   # IoU 0.5 with g1, 0.75 with g2
        q = Detection(box(0, 0, 4, 4), 1, 0.5)
        assert ap_single([p, q], [g1, g2], 0.5) == 1.0


def random_case(seed, n_gt=4, n_pred=6):
    rng = np.random.default_rng(seed)
    def det(conf):
        r, c = rng.integers(0, 12, 2)
        h, w = rng.integers(2, 8, 2)
        return Detection(box(r, c, r + h, c + w, (20, 20)), int(rng.integers(1, 3)), conf)
    gts = [det(1.0) for _ in range(n_gt)]
    preds = [det(float(x)) for x in rng.random(n_pred)]
    # near copies make high-IoU matches likely
    preds += [Detection(g.mask, g.class_id, float(rng.random())) for g in gts[::2]]
    return preds, gts


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_rescale_invariance(self, seed):
        preds, gts = random_case(seed)
        scaled = [Detection(p.mask, p.class_id, p.confidence ** 3 * 0.5) for p in preds]
        assert ap_report(preds, gts).ap == ap_report(scaled, gts).ap

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_in_threshold(self, seed):
        preds, gts = random_case(seed)
        for c in (1, 2):
            p = [d for d in preds if d.class_id == c]
            g = [d for d in gts if d.class_id == c]
            aps = [ap_single(p, g, t) for t in IOU_THRESHOLDS]
            assert all(a >= b for a, b in zip(aps, aps[1:]))
            assert all(0.0 <= a <= 1.0 for a in aps)


class TestReport:
    def test_perfect_and_empty(self):
        gts = [Detection(box(0, 0, 3, 3), 1), Detection(box(5, 5, 9, 9), 4)]
        rep = ap_report([Detection(g.mask, g.class_id, 0.5) for g in gts], gts)
        assert rep.ap == 1.0 and rep.ap50 == 1.0
        assert rep.thresholds == IOU_THRESHOLDS and len(rep.thresholds) == 10
        assert ap_report([], gts).ap == 0.0

    def test_absent_class_excluded(self):
        gts = [Detection(box(0, 0, 3, 3), 1)]
        preds = [Detection(gts[0].mask, 1, 0.9), Detection(box(5, 5, 9, 9), 6, 0.8)]
        rep = ap_report(preds, gts)
        assert rep.ap == 1.0 and set(rep.per_class_ap) == {1}

    def test_threshold_grid(self):
        assert IOU_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)

    def test_partial_overlap_averages_thresholds(self):
        g = Detection(box(0, 0, 10, 10), 1)
        p = Detection(box(0, 0, 10, 7), 1, 1.0)   # IoU 0.7: hits 0.5 .. 0.7
        assert ap_report([p], [g]).ap == pytest.approx(0.5)

    def test_from_labels(self):
        labels = np.array([[0, 1], [2, 2]])
        recs = [InstanceRecord(1, 3, 0.5, (1, 0, 2, 1), 1), InstanceRecord(2, 1, 0.9, (0, 1, 2, 2), 2)]
        dets = detections_from_labels(labels, recs)
        assert [d.mask.sum() for d in dets] == [1, 2]
        assert [d.class_id for d in dets] == [3, 1]


class TestConfusion:
    def test_perfect_is_diagonal(self):
        gt = np.random.default_rng(0).integers(0, 9, (6, 7))
        c = confusion_matrix(gt, gt)
        assert np.array_equal(c, np.diag(np.diag(c)))
        assert c.sum() == 42

    def test_all_background(self):
        gt = np.random.default_rng(1).integers(0, 9, (5, 5))
        c = confusion_matrix(np.zeros_like(gt), gt)
        assert np.count_nonzero(c.sum(0)) == 1 and c[:, 0].sum() == 25
        np.testing.assert_array_equal(c.sum(1), np.bincount(gt.ravel(), minlength=9))

    def test_errors(self):
        with pytest.raises(ValueError):
            confusion_matrix(np.zeros((2, 2), int), np.zeros((2, 3), int))
        with pytest.raises(ValueError):
            confusion_matrix(np.full((2, 2), 9), np.zeros((2, 2), int))
