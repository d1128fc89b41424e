"""Synthetic "moving actors" clips with keyframe ground truth.

Actors are striped rectangles that translate horizontally and grow or shrink
over the clip. Motion classes are decidable from an actor's own tube; the
context classes (``near_other``/``alone``) depend on where the other actors
are at the keyframe; ``reappearing`` only occurs in long videos and depends on
earlier clips.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, GenerationError
from .geometry import Box

CLASSES: tuple[str, ...] = (
    "move_left",
    "move_right",
    "stationary",
    "grow",
    "shrink",
    "near_other",
    "alone",
    "reappearing",
)
CLASS_INDEX = {name: i for i, name in enumerate(CLASSES)}
BOX_LOCAL_CLASSES = ("move_left", "move_right", "stationary", "grow", "shrink")
CONTEXT_CLASSES = ("near_other", "alone")
CROSS_CLIP_CLASSES = ("reappearing",)

# identities in long videos are drawn from this palette without replacement
TEXTURE_PALETTE = tuple(
    (intensity, orientation, period)
    for intensity in (0.5, 0.75, 1.0)
    for orientation in (0, 1)
    for period in (2, 4)
)


@dataclass(frozen=True)
class GeneratorConfig:
    frames: int = 8
    height: int = 64
    width: int = 64
    min_actors: int = 1
    max_actors: int = 3
    min_size: float = 10.0
    max_size: float = 18.0
    speed: float = 2.0
    scale_rate: float = 1.0
    near_factor: float = 1.5
    p_near: float = 0.5
    max_overlap: float = 0.5
    noise: float = 0.05
    placement_attempts: int = 200

    def validate(self) -> None:
        if self.frames <= 0 or self.frames % 2:
            raise ConfigError(f"frames must be positive and even, got {self.frames}")
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("frame size must be positive")
        if not (1 <= self.min_actors <= self.max_actors):
            raise ConfigError(f"need 1 <= min_actors <= max_actors, got {self.min_actors}, {self.max_actors}")
        if not (0 < self.min_size <= self.max_size):
            raise ConfigError("need 0 < min_size <= max_size")
        half = self.frames // 2
        if self.min_size - self.scale_rate * half <= 1.0:
            raise ConfigError("scale_rate shrinks the smallest actor below one pixel")
        span = self.max_size + self.scale_rate * half + 2 * self.speed * half
        if span >= min(self.height, self.width):
            raise ConfigError("actors and their trajectories do not fit in the frame")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ActorSpec:
    identity: int
    cx: float
    cy: float
    w: float
    h: float
    vx: float
    ds: float
    intensity: float
    orientation: int
    period: int

    def box_at(self, t: int, keyframe: int) -> Box:
        dt = t - keyframe
        cx = self.cx + self.vx * dt
        w = self.w + self.ds * dt
        h = self.h + self.ds * dt
        return Box(cx - w / 2, self.cy - h / 2, cx + w / 2, self.cy + h / 2)


@dataclass
class ClipSample:
    video: np.ndarray  # [1, T, H, W], intensities in [0, 1]
    gt: list[tuple[Box, frozenset[int]]]
    keyframe_index: int
    actors: list[ActorSpec] = field(default_factory=list)
    seed: int | None = None
    video_index: int | None = None
    clip_index: int | None = None

    @property
    def boxes(self) -> np.ndarray:
        return np.array([b.as_tuple() for b, _ in self.gt], dtype=np.float64).reshape(-1, 4)

    def label_matrix(self, num_classes: int = len(CLASSES)) -> np.ndarray:
        out = np.zeros((len(self.gt), num_classes))
        for i, (_, labels) in enumerate(self.gt):
            out[i, sorted(labels)] = 1.0
        return out

    def label_names(self) -> list[list[str]]:
        return [[CLASSES[c] for c in sorted(labels)] for _, labels in self.gt]


def motion_labels(actor: ActorSpec) -> set[str]:
    labels = set()
    if actor.vx < 0:
        labels.add("move_left")
    elif actor.vx > 0:
        labels.add("move_right")
    else:
        labels.add("stationary")
    if actor.ds > 0:
        labels.add("grow")
    elif actor.ds < 0:
        labels.add("shrink")
    return labels


def context_labels(actors: list[ActorSpec], near_factor: float) -> list[set[str]]:
    d_near = near_factor * float(np.mean([a.w for a in actors]))
    out = []
    for i, a in enumerate(actors):
        near = any(
            np.hypot(a.cx - b.cx, a.cy - b.cy) <= d_near for j, b in enumerate(actors) if j != i
        )
        out.append({"near_other" if near else "alone"})
    return out


def _overlap(a: Box, b: Box) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    return iw * ih / min(a.area, b.area)


def _centre_range(size: float, velocity: float, ds: float, extent: int, frames: int, keyframe: int):
    lo, hi = -np.inf, np.inf
    for t in range(frames):
        dt = t - keyframe
        half = 0.5 * (size + ds * dt)
        lo = max(lo, half - velocity * dt)
        hi = min(hi, extent - half - velocity * dt)
    return lo, hi


def _place_actors(rng, cfg: GeneratorConfig, textures: list[tuple[int, tuple]]) -> list[ActorSpec]:
    keyframe = cfg.frames // 2
    actors: list[ActorSpec] = []
    for identity, (intensity, orientation, period) in textures:
        for _ in range(cfg.placement_attempts):
            w = float(rng.uniform(cfg.min_size, cfg.max_size))
            h = float(rng.uniform(cfg.min_size, cfg.max_size))
            vx = float(rng.choice([-cfg.speed, 0.0, cfg.speed]))
            ds = float(rng.choice([-cfg.scale_rate, 0.0, cfg.scale_rate]))
            xlo, xhi = _centre_range(w, vx, ds, cfg.width, cfg.frames, keyframe)
            ylo, yhi = _centre_range(h, 0.0, ds, cfg.height, cfg.frames, keyframe)
            if xlo > xhi or ylo > yhi:
                continue
            if actors and rng.random() < cfg.p_near:
                anchor = actors[int(rng.integers(len(actors)))]
                ang = rng.uniform(0, 2 * np.pi)
                dist = rng.uniform(0.7, 1.3) * anchor.w
                cx = float(np.clip(anchor.cx + dist * np.cos(ang), xlo, xhi))
                cy = float(np.clip(anchor.cy + dist * np.sin(ang), ylo, yhi))
            else:
                cx = float(rng.uniform(xlo, xhi))
                cy = float(rng.uniform(ylo, yhi))
            cand = ActorSpec(identity, cx, cy, w, h, vx, ds, float(intensity), int(orientation), int(period))
            kb = cand.box_at(keyframe, keyframe)
            if all(_overlap(kb, a.box_at(keyframe, keyframe)) <= cfg.max_overlap for a in actors):
                actors.append(cand)
                break
        else:
            raise GenerationError(
                f"could not place actor {len(actors) + 1} within {cfg.placement_attempts} attempts "
                f"(max overlap {cfg.max_overlap})"
            )
    return actors


def render(actors: list[ActorSpec], cfg: GeneratorConfig, rng) -> np.ndarray:
    keyframe = cfg.frames // 2
    video = 0.1 + cfg.noise * rng.random((1, cfg.frames, cfg.height, cfg.width))
    ys = np.arange(cfg.height) + 0.5
    xs = np.arange(cfg.width) + 0.5
    for t in range(cfg.frames):
        frame = video[0, t]
        for a in actors:
            b = a.box_at(t, keyframe)
            inside_y = (ys >= b.y1) & (ys < b.y2)
            inside_x = (xs >= b.x1) & (xs < b.x2)
            region = inside_y[:, None] & inside_x[None, :]
            if a.orientation == 0:
                u = np.broadcast_to((ys - b.y1)[:, None], region.shape)
            else:
                u = np.broadcast_to((xs - b.x1)[None, :], region.shape)
            stripe = (np.floor(u / a.period) % 2 == 0).astype(np.float64)
            frame[region] = (a.intensity * (0.65 + 0.35 * stripe))[region]
    return np.clip(video, 0.0, 1.0)


def _labels_for(actors: list[ActorSpec], cfg: GeneratorConfig, reappearing: list[bool] | None = None):
    ctx = context_labels(actors, cfg.near_factor)
    out = []
    for i, a in enumerate(actors):
        names = motion_labels(a) | ctx[i]
        if reappearing is not None and reappearing[i]:
            names.add("reappearing")
        out.append(frozenset(CLASS_INDEX[n] for n in names))
    return out


def generate_clip(seed: int, cfg: GeneratorConfig = GeneratorConfig()) -> ClipSample:
    cfg.validate()
    rng = np.random.default_rng(seed)
    n = int(rng.integers(cfg.min_actors, cfg.max_actors + 1))
    textures = [
        (i, (float(rng.uniform(0.45, 1.0)), int(rng.integers(2)), int(rng.choice([2, 3, 4])))) for i in range(n)
    ]
    actors = _place_actors(rng, cfg, textures)
    video = render(actors, cfg, rng)
    keyframe = cfg.frames // 2
    labels = _labels_for(actors, cfg)
    gt = [(a.box_at(keyframe, keyframe), lab) for a, lab in zip(actors, labels)]
    return ClipSample(video, gt, keyframe, actors, seed=seed)


def generate_long_video(
    seed: int, n_clips: int, cfg: GeneratorConfig = GeneratorConfig(), n_identities: int = 3
) -> list[ClipSample]:
    """Consecutive clips sharing a pool of textured identities.

    An actor carries ``reappearing`` iff its identity occurred in an earlier clip.
    """
    cfg.validate()
    if n_identities > len(TEXTURE_PALETTE):
        raise ConfigError(f"at most {len(TEXTURE_PALETTE)} identities available")
    root = np.random.default_rng(seed)
    palette_idx = root.choice(len(TEXTURE_PALETTE), size=n_identities, replace=False)
    pool = [(int(i), TEXTURE_PALETTE[int(i)]) for i in palette_idx]
    seen: set[int] = set()
    clips = []
    keyframe = cfg.frames // 2
    for t in range(n_clips):
        rng = np.random.default_rng([seed, 7919, t])
        n = int(rng.integers(cfg.min_actors, min(cfg.max_actors, n_identities) + 1))
        chosen = [pool[int(i)] for i in rng.choice(n_identities, size=n, replace=False)]
        actors = _place_actors(rng, cfg, chosen)
        video = render(actors, cfg, rng)
        reappear = [a.identity in seen for a in actors]
        labels = _labels_for(actors, cfg, reappear)
        seen.update(a.identity for a in actors)
        gt = [(a.box_at(keyframe, keyframe), lab) for a, lab in zip(actors, labels)]
        clips.append(ClipSample(video, gt, keyframe, actors, seed=seed, clip_index=t))
    return clips


def clip_seeds(data_seed: int, count: int) -> list[int]:
    return [data_seed * 1_000_003 + i for i in range(count)]


def make_dataset(data_seed: int, count: int, cfg: GeneratorConfig = GeneratorConfig()) -> list[ClipSample]:
    return [generate_clip(s, cfg) for s in clip_seeds(data_seed, count)]


def make_long_dataset(
    data_seed: int, n_videos: int, n_clips: int, cfg: GeneratorConfig = GeneratorConfig(), n_identities: int = 3
) -> list[list[ClipSample]]:
    videos = []
    for v, s in enumerate(clip_seeds(data_seed, n_videos)):
        clips = generate_long_video(s, n_clips, cfg, n_identities)
        for c in clips:
            c.video_index = v
        videos.append(clips)
    return videos


def manifest_records(clips: list[ClipSample], cfg: GeneratorConfig) -> list[dict]:
    digest = cfg.digest()
    recs = []
    for c in clips:
        rec = {"seed": c.seed, "cfg_hash": digest, "labels": c.label_names()}
        if c.clip_index is not None:
            rec["video"] = c.video_index
            rec["clip"] = c.clip_index
        recs.append(rec)
    return recs
