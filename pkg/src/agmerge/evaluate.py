"""Instance AP over IoU thresholds 0.5:0.05:0.95, and the class confusion matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass
class Detection:
    mask: np.ndarray
    class_id: int
    confidence: float = 1.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)


@dataclass
class ApReport:
    per_class_ap: dict
    ap: float
    ap50: float
    thresholds: tuple = IOU_THRESHOLDS
    per_class_ap50: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "per_class_ap50": {str(k): v for k, v in sorted(self.per_class_ap50.items())},
            "thresholds": list(self.thresholds),
        }


def mask_iou(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        raise ValueError("IoU undefined for two empty masks")
    return np.count_nonzero(a & b) / union


def _iou_matrix(preds, gts):
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = mask_iou(p.mask, g.mask)
    return out


def _interpolated_ap(tp, n_gt):
    if n_gt == 0 or len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _greedy_tp(ious, iou_t):
    n_pred, n_gt = ious.shape
    taken = np.zeros(n_gt, dtype=bool)
    tp = np.zeros(n_pred, dtype=bool)
    for i in range(n_pred):
        cand = np.where(taken, -1.0, ious[i])
        if n_gt == 0:
            break
        j = int(np.argmax(cand))
        if cand[j] >= iou_t:
            taken[j] = True
            tp[i] = True
    return tp


def ap_single(predictions, gts, iou_t):
    """AP of confidence-ranked ``predictions`` of one class against ``gts``.

    Each prediction claims the unmatched ground truth of highest IoU if that
    IoU reaches ``iou_t``. 0 when there is no ground truth.
    """
    preds = sorted(predictions, key=lambda p: -p.confidence)
    return _interpolated_ap(_greedy_tp(_iou_matrix(preds, gts), iou_t), len(gts))


def ap_report(predictions, gts, thresholds=IOU_THRESHOLDS):
    """Per-class AP averaged over ``thresholds``; classes absent from ``gts`` are skipped."""
    classes = sorted({g.class_id for g in gts})
    per_class, per_class50 = {}, {}
    for c in classes:
        cp = sorted((p for p in predictions if p.class_id == c), key=lambda p: -p.confidence)
        cg = [g for g in gts if g.class_id == c]
        ious = _iou_matrix(cp, cg)
        aps = [_interpolated_ap(_greedy_tp(ious, t), len(cg)) for t in thresholds]
        per_class[c] = float(np.mean(aps))
        per_class50[c] = _interpolated_ap(_greedy_tp(ious, 0.5), len(cg))
    ap = float(np.mean(list(per_class.values()))) if classes else 0.0
    ap50 = float(np.mean(list(per_class50.values()))) if classes else 0.0
    return ApReport(per_class, ap, ap50, tuple(thresholds), per_class50)


def confusion_matrix(pred_classes, gt_classes, num_classes=8):
    """``c[i, j]`` counts pixels of ground-truth class i predicted as class j."""
    pred = np.asarray(pred_classes)
    gt = np.asarray(gt_classes)
    if pred.shape != gt.shape:
        raise ValueError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    k = num_classes + 1
    for name, arr in (("predicted", pred), ("ground-truth", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} class ids must lie in [0, {num_classes}]")
    flat = gt.ravel().astype(np.int64) * k + pred.ravel().astype(np.int64)
    return np.bincount(flat, minlength=k * k).reshape(k, k)


def detections_from_labels(labels, records):
    """Detections from a label grid and its instance records."""
    labels = np.asarray(labels)
    return [Detection(labels == r.id, r.class_id, r.confidence) for r in records]
