"""Frame-level mean average precision for multi-label keyframe detections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou


@dataclass
class EvalReport:
    ap: dict[int, float]  # only classes with at least one ground truth
    num_gt: dict[int, int] = field(default_factory=dict)
    num_det: dict[int, int] = field(default_factory=dict)
    class_names: tuple[str, ...] | None = None

    @property
    def mean_ap(self) -> float:
        return float(np.mean(list(self.ap.values()))) if self.ap else 0.0

    def to_dict(self) -> dict:
        name = (lambda c: self.class_names[c]) if self.class_names else str
        return {
            "mAP": self.mean_ap,
            "per_class_ap": {name(c): v for c, v in sorted(self.ap.items())},
            "num_gt": {name(c): v for c, v in sorted(self.num_gt.items())},
            "num_det": {name(c): v for c, v in sorted(self.num_det.items())},
        }


def average_precision(tp: np.ndarray, num_gt: int) -> float:
    """Area under the precision envelope of a ranked TP/FP sequence (all-point interpolation)."""
    if num_gt == 0:
        return float("nan")
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / num_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def frame_map(
    detections: list[list],
    ground_truths: list[list[tuple[Box, frozenset[int]]]],
    num_classes: int,
    iou_threshold: float = 0.5,
    class_names: tuple[str, ...] | None = None,
) -> EvalReport:
    """detections[i]: objects with ``.box`` and ``.action_scores`` for clip i;
    ground_truths[i]: (box, label set) pairs for clip i.

    Each (box, class, score) is ranked independently per class.
    """
    if len(detections) != len(ground_truths):
        raise ValueError(f"{len(detections)} detection lists for {len(ground_truths)} clips")
    report = EvalReport({}, class_names=class_names)
    for c in range(num_classes):
        gts = [[b for b, labels in clip if c in labels] for clip in ground_truths]
        n_gt = sum(len(g) for g in gts)
        ranked = [
            (float(d.action_scores[c]), clip, d.box)
            for clip, dets in enumerate(detections)
            for d in dets
        ]
        report.num_det[c] = len(ranked)
        if n_gt == 0:
            continue
        report.num_gt[c] = n_gt
        order = sorted(range(len(ranked)), key=lambda i: -ranked[i][0])
        taken = [np.zeros(len(g), dtype=bool) for g in gts]
        tp = np.zeros(len(ranked))
        for rank, i in enumerate(order):
            _, clip, box = ranked[i]
            best, best_j = -1.0, -1
            for j, g in enumerate(gts[clip]):
                if taken[clip][j]:
                    continue
                o = iou(box, g)
                if o > best:
                    best, best_j = o, j
            if best_j >= 0 and best >= iou_threshold:
                taken[clip][best_j] = True
                tp[rank] = 1.0
        report.ap[c] = average_precision(tp, n_gt)
    return report
