"""Set-prediction objective: bipartite matching plus classification, box and action losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError
from .geometry import giou_tensor, pairwise_giou
from .tensor import Tensor

HUMAN, BACKGROUND = 0, 1


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0
    l1: float = 2.0
    giou: float = 2.0
    act: float = 24.0

    @classmethod
    def from_config(cls, cfg) -> "LossWeights":
        return cls(cfg.lambda_cls, cfg.lambda_l1, cfg.lambda_giou, cfg.lambda_act)


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]  # (prediction, ground truth), sorted by ground truth
    num_predictions: int

    @property
    def pred_indices(self) -> np.ndarray:
        return np.array([p for p, _ in self.pairs], dtype=np.int64)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.int64)

    @property
    def unmatched(self) -> list[int]:
        used = {p for p, _ in self.pairs}
        return [i for i in range(self.num_predictions) if i not in used]

    def total(self, cost: np.ndarray) -> float:
        return float(sum(cost[p, g] for p, g in self.pairs))


def _solve(a: np.ndarray) -> np.ndarray:
    """Min-cost assignment of every row of a [n, m] (n <= m) to a distinct column.

    Shortest augmenting paths with dual potentials; returns column index per row.
    """
    n, m = a.shape
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j] = row (1-based) holding column j; 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1  # first minimum -> lowest column index
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row


def hungarian(cost: np.ndarray) -> Assignment:
    """Optimal matching of a [num_predictions, num_gt] cost matrix.

    Every ground truth is matched when there are at least as many predictions.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DimensionError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NumericError("cost matrix has non-finite entries")
    m, n = cost.shape
    if n == 0 or m == 0:
        return Assignment((), m)
    if n <= m:
        pred_of_gt = _solve(cost.T)
        pairs = tuple((int(pred_of_gt[g]), g) for g in range(n))
    else:
        gt_of_pred = _solve(cost)
        pairs = tuple(sorted(((p, int(gt_of_pred[p])) for p in range(m)), key=lambda x: x[1]))
    return Assignment(pairs, m)


def normalize_boxes(boxes: np.ndarray, frame_size: tuple[int, int]) -> np.ndarray:
    h, w = frame_size
    return np.asarray(boxes, dtype=np.float64) / np.array([w, h, w, h], dtype=np.float64)


def match_cost(
    human_prob: np.ndarray,
    pred_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    frame_size: tuple[int, int],
    weights: LossWeights = LossWeights(),
) -> np.ndarray:
    """[N, n_gt]: -lambda_cls * p_human + lambda_L1 * |normalised box diff|_1 - lambda_giou * GIoU."""
    pn = normalize_boxes(pred_boxes, frame_size)
    gn = normalize_boxes(gt_boxes, frame_size)
    l1 = np.abs(pn[:, None, :] - gn[None, :, :]).sum(axis=-1)
    g = pairwise_giou(pred_boxes, gt_boxes)
    return weights.cls * (-np.asarray(human_prob)[:, None]) + weights.l1 * l1 + weights.giou * (-g)


def stage_loss(
    human_logits: Tensor,
    action_logits: Tensor,
    boxes: Tensor,
    gt_boxes: np.ndarray,
    gt_labels: np.ndarray,
    assignment: Assignment,
    frame_size: tuple[int, int],
    weights: LossWeights = LossWeights(),
) -> dict:
    """Loss terms for one stage under a fixed assignment.

    cls: two-way cross-entropy over all N predictions (matched -> human).
    l1 / giou: mean over matched pairs. act: binary cross-entropy on matched
    predictions, mean over pairs and classes.
    """
    n = human_logits.shape[0]
    target = np.full(n, BACKGROUND)
    pi, gi = assignment.pred_indices, assignment.gt_indices
    target[pi] = HUMAN
    logp = T.log_softmax(human_logits, axis=-1)
    l_cls = -logp[np.arange(n), target].mean()
    if len(pi) == 0:
        zero = Tensor(0.0)
        l_l1 = l_giou = l_act = zero
    else:
        h, w = frame_size
        scale = np.array([w, h, w, h], dtype=np.float64)
        pred = boxes[pi]
        tgt = np.asarray(gt_boxes, dtype=np.float64)[gi]
        l_l1 = T.absolute(pred * (1.0 / scale) - tgt / scale).sum() * (1.0 / len(pi))
        l_giou = (1.0 - giou_tensor(pred, tgt)).mean()
        x = action_logits[pi]
        y = np.asarray(gt_labels, dtype=np.float64)[gi]
        l_act = (T.softplus(x) - x * y).mean()
    total = weights.cls * l_cls + weights.l1 * l_l1 + weights.giou * l_giou + weights.act * l_act
    return {"l_cls": l_cls, "l_l1": l_l1, "l_giou": l_giou, "l_act": l_act, "total": total}


@dataclass
class LossBreakdown:
    total: Tensor
    per_stage: list[dict] = field(default_factory=list)  # floats per stage
    assignments: list[Assignment] = field(default_factory=list)

    def component(self, name: str) -> float:
        return float(sum(s[name] for s in self.per_stage))

    @property
    def l_cls(self) -> float:
        return self.component("l_cls")

    @property
    def l_l1(self) -> float:
        return self.component("l_l1")

    @property
    def l_giou(self) -> float:
        return self.component("l_giou")

    @property
    def l_act(self) -> float:
        return self.component("l_act")

    def as_record(self) -> dict:
        return {
            "loss": self.total.item(),
            "l_cls": self.l_cls,
            "l_l1": self.l_l1,
            "l_giou": self.l_giou,
            "l_act": self.l_act,
            "stages": [{k: v for k, v in s.items()} for s in self.per_stage],
        }


def match_stage(stage, gt_boxes: np.ndarray, frame_size, weights: LossWeights) -> Assignment:
    cost = match_cost(stage.human_prob(), stage.boxes.data, gt_boxes, frame_size, weights)
    return hungarian(cost)


def total_loss(
    trace,
    gt_boxes: np.ndarray,
    gt_labels: np.ndarray,
    frame_size: tuple[int, int],
    weights: LossWeights = LossWeights(),
    assignments: list[Assignment] | None = None,
) -> LossBreakdown:
    """Sum of per-stage losses, each stage matched independently (assignments are constants)."""
    if len(trace) == 0:
        raise DimensionError("empty stage trace")
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    total = None
    out = LossBreakdown(Tensor(0.0))
    for m, stage in enumerate(trace.stages):
        a = assignments[m] if assignments is not None else match_stage(stage, gt_boxes, frame_size, weights)
        terms = stage_loss(stage.human_logits, stage.action_logits, stage.boxes, gt_boxes, gt_labels, a, frame_size, weights)
        total = terms["total"] if total is None else total + terms["total"]
        out.per_stage.append({k: float(v.item()) for k, v in terms.items()})
        out.assignments.append(a)
    out.total = total
    return out
