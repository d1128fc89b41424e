"""Deterministic training loops for the short-term and long-term phases."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import Config
from .decoder import Detector
from .errors import ConfigError, NumericError
from .evaluation import EvalReport, frame_map
from .longterm import QueryBank, window_stack
from .losses import LossWeights, total_loss
from .synthdata import CLASSES, ClipSample, make_dataset, make_long_dataset
from .tensor import adamw_step

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: Detector
    losses: list[float] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)


def short_dataset(cfg: Config) -> list[ClipSample]:
    return make_dataset(cfg.data_seed, cfg.n_clips, cfg.generator())


def long_dataset(cfg: Config) -> list[list[ClipSample]]:
    return make_long_dataset(cfg.data_seed, cfg.n_videos, cfg.clips_per_video, cfg.generator(), cfg.n_identities)


def clip_window(cfg: Config, bank: QueryBank | None, clip: ClipSample):
    if bank is None:
        return None
    return window_stack(bank.clips(clip.video_index), clip.clip_index, cfg.window)


def evaluate(
    model: Detector,
    clips: list[ClipSample],
    bank: QueryBank | None = None,
    threshold: float | None = None,
    iou_threshold: float | None = None,
) -> EvalReport:
    cfg = model.cfg
    dets = [model.infer(c.video, threshold, clip_window(cfg, bank, c)) for c in clips]
    return frame_map(
        dets,
        [c.gt for c in clips],
        cfg.num_classes,
        cfg.iou_threshold if iou_threshold is None else iou_threshold,
        class_names=CLASSES[: cfg.num_classes],
    )


def _mean_stages(parts: list[list[dict]]) -> list[dict]:
    """Average per-stage loss records over the clips of one accumulated step."""
    return [{k: sum(p[m][k] for p in parts) / len(parts) for k in parts[0][m]} for m in range(len(parts[0]))]


def _clip_gradients(params, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def trainable_parameters(model: Detector) -> list:
    """Everything in the short phase; only the long-term classifier when ``long_trainable = head``."""
    named = list(model.named_parameters())
    if model.cfg.phase == "long" and model.cfg.long_trainable == "head":
        named = [(n, p) for n, p in named if n.startswith("long_head.")]
    return named


def warm_start(model: Detector, source: Detector) -> Detector:
    """Copy every parameter ``model`` shares with ``source`` (by name and shape)."""
    own = dict(model.named_parameters())
    for name, arr in source.state_dict().items():
        if name in own and own[name].shape == arr.shape:
            own[name].data = arr.copy()
    return model


def train(
    cfg: Config,
    clips: list[ClipSample] | None = None,
    bank: QueryBank | None = None,
    model: Detector | None = None,
    on_record: Callable[[dict], None] | None = None,
) -> TrainResult:
    """AdamW training, one clip per forward, ``grad_accum`` clips per update.

    Clips are visited in a seeded random order, reshuffled each epoch. Each
    step logs one record; ``train_map`` is added every ``eval_every`` steps.
    """
    if cfg.phase == "long":
        if bank is None:
            raise ConfigError("long-term training needs a query bank")
        if bank.d != 2 * cfg.d:
            raise ConfigError(f"bank width d={bank.d} must equal 2*D={2 * cfg.d}")
        if clips is None:
            clips = [c for video in long_dataset(cfg) for c in video]
    elif clips is None:
        clips = short_dataset(cfg)
    if not clips:
        raise ConfigError("empty training set")
    model = Detector(cfg) if model is None else model
    named = trainable_parameters(model)
    params = [p for _, p in named]
    weights = LossWeights.from_config(cfg)
    frame = (cfg.height, cfg.width)
    rng = np.random.default_rng(cfg.seed + 1)
    order: list[int] = []
    result = TrainResult(model)
    for step in range(cfg.steps):
        model.zero_grad()
        agg_loss = 0.0
        parts = []
        for _ in range(cfg.grad_accum):
            if not order:
                order = list(rng.permutation(len(clips)))
            clip = clips[order.pop(0)]
            trace = model.forward(clip.video, clip_window(cfg, bank, clip))
            breakdown = total_loss(trace, clip.boxes, clip.label_matrix(cfg.num_classes), frame, weights)
            loss = breakdown.total
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at step {step}: {json.dumps(breakdown.per_stage)}")
            (loss * (1.0 / cfg.grad_accum)).backward()
            agg_loss += loss.item() / cfg.grad_accum
            parts.append(breakdown.per_stage)
        grad_norm = _clip_gradients(params, cfg.clip_norm)
        for name, p in named:
            if p.grad is None:
                continue
            p.name = name
            adamw_step(p, p.grad, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        stages = _mean_stages(parts)
        rec = {
            "step": step,
            "loss": agg_loss,
            **{k: sum(st[k] for st in stages) for k in ("l_cls", "l_l1", "l_giou", "l_act")},
            "stages": stages,
            "grad_norm": grad_norm,
        }
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            rec["train_map"] = evaluate(model, clips, bank).mean_ap
        result.losses.append(agg_loss)
        result.records.append(rec)
        if on_record is not None:
            on_record(rec)
        if step % 50 == 0:
            log.info("step %d loss %.4f", step, agg_loss)
    return result


def train_long(
    cfg: Config, bank: QueryBank, clips: list[ClipSample] | None = None, short_model: Detector | None = None, **kw
) -> TrainResult:
    """Long-term phase. The detector is warm-started from ``short_model`` when given."""
    if cfg.phase != "long":
        cfg = cfg.replace(phase="long")
    if short_model is not None and kw.get("model") is None:
        kw["model"] = warm_start(Detector(cfg), short_model)
    return train(cfg, clips=clips, bank=bank, **kw)
