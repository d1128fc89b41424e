"""The sparse action decoder: a stack of adaptive-sampling/adaptive-mixing stages and the prediction heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbone import build_backbone
from .config import Config
from .errors import ConfigError
from .featspace import FeatureSpace4D, FeatureSpaceBuilder
from .geometry import Box, QuerySet, box_to_pquery, pquery_to_box_tensor
from .layers import FFN, LayerNorm, Module, MultiHeadAttention
from .longterm import LongTermClassifier, long_classify
from .mixer import DualMixer
from .sampler import FrameShiftHead, OffsetHead, decode_points, fixed_grid_points, propagate_temporal, sample
from .tensor import Parameter, Tensor, no_grad


@dataclass
class StageOutput:
    queries: QuerySet
    points: Tensor  # [N, G, T, P, 3]
    human_logits: Tensor  # [N, 2]; column 0 = human, 1 = background
    action_logits: Tensor  # [N, C]
    boxes: Tensor  # [N, 4] corners decoded from the updated positional queries
    used_fallback: bool = False

    def human_prob(self) -> np.ndarray:
        return T.softmax(self.human_logits.detach(), axis=-1).data[:, 0]

    def action_scores(self) -> np.ndarray:
        return T.sigmoid(self.action_logits.detach()).data


@dataclass
class StageTrace:
    stages: list[StageOutput] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.stages)

    def __getitem__(self, i) -> StageOutput:
        return self.stages[i]

    @property
    def last(self) -> StageOutput:
        return self.stages[-1]


@dataclass
class Detection:
    box: Box
    human_prob: float
    action_scores: np.ndarray
    query_index: int


class ASAMStage(Module):
    """Self-attention on both query sets, adaptive sampling, dual-branch mixing, box update."""

    def __init__(self, cfg: Config, rng: np.random.Generator):
        d = cfg.d
        self.cfg = cfg
        self.attn_s = MultiHeadAttention(d, d, cfg.heads, rng)
        self.norm_s = LayerNorm(d)
        self.attn_t = MultiHeadAttention(d, d, cfg.heads, rng)
        self.norm_t = LayerNorm(d)
        self.offsets = OffsetHead(d, cfg.groups, cfg.points, rng, cfg.dz_init)
        self.frame_shift = FrameShiftHead(d, cfg.frames, rng) if cfg.temporal == "move" else None
        self.mixer = DualMixer(d, cfg.groups, cfg.points_per_frame, cfg.frames, cfg.p_out, cfg.t_out, rng, cfg.mixing)
        self.pos_ffn = FFN([d, d, 4], rng, zero_last=True)

    def sampling_points(self, q_s: Tensor, pq: Tensor) -> Tensor:
        cfg = self.cfg
        if cfg.sampling == "fixed_grid":
            return fixed_grid_points(pq, cfg.groups, cfg.frames, cfg.grid)
        pts = decode_points(pq, self.offsets(q_s))
        deltas = self.frame_shift(q_s) if self.frame_shift is not None else None
        return propagate_temporal(pts, cfg.frames, cfg.temporal, deltas, pq)

    def __call__(self, queries: QuerySet, space: FeatureSpace4D) -> tuple[QuerySet, Tensor]:
        q_s = self.norm_s(queries.spatial + self.attn_s(queries.spatial, queries.spatial))
        q_t = self.norm_t(queries.temporal + self.attn_t(queries.temporal, queries.temporal))
        pq = queries.positional
        points = self.sampling_points(q_s, pq)
        feats = sample(space, points)
        q_s, q_t = self.mixer(q_s, q_t, feats)
        return QuerySet(q_s, q_t, update_positions(pq, self.pos_ffn(q_s))), points


def update_positions(pq: Tensor, delta: Tensor) -> Tensor:
    """x += dx * width, y += dy * height, z += dz, r += dr."""
    n = pq.shape[0]
    z, r = pq[:, 2], pq[:, 3]
    scale = T.stack([T.exp2(z - r), T.exp2(z + r), Tensor(np.ones(n)), Tensor(np.ones(n))], axis=1)
    return pq + delta * scale


class Detector(Module):
    def __init__(self, cfg: Config, seed: int | None = None):
        self.cfg = cfg
        seed = cfg.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        self.backbone = build_backbone(
            cfg.backbone, in_channels=1, width=cfg.backbone_width, out_channels=cfg.d, seed=int(rng.integers(2**31))
        )
        self.featspace = FeatureSpaceBuilder(self.backbone.channels, cfg.d, seed=int(rng.integers(2**31)))
        self.init_spatial = Parameter(rng.normal(0.0, cfg.query_std, size=(cfg.n_queries, cfg.d)))
        self.init_temporal = Parameter(rng.normal(0.0, cfg.query_std, size=(cfg.n_queries, cfg.d)))
        self.stages = [ASAMStage(cfg, rng) for _ in range(cfg.n_stages)]
        self.human_head = FFN([cfg.d, cfg.d, 2], rng)
        self.action_head = FFN([2 * cfg.d, cfg.d, cfg.num_classes], rng)
        self.long_head = (
            LongTermClassifier(2 * cfg.d, cfg.window, cfg.cross_layers, cfg.heads, cfg.num_classes, rng)
            if cfg.phase == "long"
            else None
        )

    def initial_queries(self) -> QuerySet:
        full = box_to_pquery(Box(0.0, 0.0, float(self.cfg.width), float(self.cfg.height)))
        pos = np.tile([full.x, full.y, full.z, full.r], (self.cfg.n_queries, 1))
        return QuerySet(self.init_spatial, self.init_temporal, Tensor(pos))

    def feature_space(self, video) -> FeatureSpace4D:
        return self.featspace(self.backbone(T.as_tensor(video)))

    def predict_human(self, q_s: Tensor) -> Tensor:
        return self.human_head(q_s)

    def predict_actions_short(self, q_s: Tensor, q_t: Tensor) -> Tensor:
        return self.action_head(T.concat([q_s, q_t], axis=1))

    def stack_forward(self, space: FeatureSpace4D, queries: QuerySet | None = None, window=None) -> StageTrace:
        queries = self.initial_queries() if queries is None else queries
        trace = StageTrace()
        for stage in self.stages:
            if self.cfg.detach_positions:
                queries = QuerySet(queries.spatial, queries.temporal, queries.positional.detach())
            queries, points = stage(queries, space)
            human = self.predict_human(queries.spatial)
            fallback = False
            if window is not None and self.long_head is not None:
                s = T.concat([queries.spatial, queries.temporal], axis=1)
                actions, fallback = long_classify(
                    self.long_head, s, *window, fallback=lambda _: self.predict_actions_short(queries.spatial, queries.temporal)
                )
            else:
                actions = self.predict_actions_short(queries.spatial, queries.temporal)
            boxes = pquery_to_box_tensor(queries.positional)
            trace.stages.append(StageOutput(queries, points, human, actions, boxes, fallback))
        return trace

    def forward(self, video, window=None) -> StageTrace:
        """``window`` is (bank rows, mask, slots) from ``longterm.window_stack`` in the long phase."""
        if self.cfg.phase == "long" and window is None:
            raise ConfigError("long-term model needs a bank window")
        return self.stack_forward(self.feature_space(video), window=window)

    def infer(self, video, threshold: float | None = None, window=None) -> list[Detection]:
        threshold = self.cfg.threshold if threshold is None else threshold
        with no_grad():
            last = self.forward(video, window).last
        prob = last.human_prob()
        scores = last.action_scores()
        boxes = last.boxes.data
        dets = []
        for i in np.flatnonzero(prob > threshold):
            x1, y1, x2, y2 = boxes[i]
            dets.append(Detection(Box(x1, y1, x2, y2), float(prob[i]), scores[i].copy(), int(i)))
        return dets


def asam_forward(stage: ASAMStage, queries: QuerySet, space: FeatureSpace4D) -> QuerySet:
    return stage(queries, space)[0]
