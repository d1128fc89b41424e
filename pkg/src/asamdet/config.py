"""Run configuration: one flat, typed record, read from ``key = value`` text files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .mixer import STRATEGIES
from .sampler import PROPAGATION_MODES
from .synthdata import CLASSES, GeneratorConfig

BACKBONES = ("hierarchical", "plain")
SAMPLING = ("adaptive", "fixed_grid")
PHASES = ("short", "long")
LONG_TRAINABLE = ("head", "all")


@dataclass(frozen=True)
class Config:
    # model
    d: int = 32
    n_queries: int = 8
    n_stages: int = 3
    groups: int = 4
    points: int = 8
    p_out: int = 32
    t_out: int = 32
    heads: int = 4
    num_classes: int = len(CLASSES)
    backbone: str = "hierarchical"
    backbone_width: int = 8
    sampling: str = "adaptive"
    grid: int = 7
    dz_init: float = 0.0
    temporal: str = "copy"
    mixing: str = "dual"
    detach_positions: bool = True
    query_std: float = 0.02
    # long-term classifier
    bank_k: int = 2
    window: int = 12
    cross_layers: int = 3
    long_trainable: str = "all"
    # data
    frames: int = 8
    height: int = 64
    width: int = 64
    max_actors: int = 3
    data_seed: int = 0
    n_clips: int = 16
    n_videos: int = 8
    clips_per_video: int = 6
    n_identities: int = 3
    # optimisation
    phase: str = "short"
    seed: int = 0
    steps: int = 500
    lr: float = 3e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_accum: int = 4
    clip_norm: float = 1.0
    lambda_cls: float = 2.0
    lambda_l1: float = 2.0
    lambda_giou: float = 2.0
    lambda_act: float = 24.0
    # evaluation
    threshold: float = 0.6
    iou_threshold: float = 0.5
    eval_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = (
            "d", "n_queries", "n_stages", "groups", "points", "p_out", "t_out", "heads", "num_classes",
            "backbone_width", "grid", "bank_k", "cross_layers", "frames", "height", "width", "max_actors",
            "grad_accum", "n_identities", "clips_per_video",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("steps", "n_clips", "n_videos", "eval_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.d % self.groups:
            raise ConfigError(f"d={self.d} must be divisible by groups={self.groups}")
        if self.d % self.heads or (2 * self.d) % self.heads:
            raise ConfigError(f"d={self.d} must be divisible by heads={self.heads}")
        for name, allowed in (
            ("backbone", BACKBONES),
            ("sampling", SAMPLING),
            ("temporal", PROPAGATION_MODES),
            ("mixing", STRATEGIES),
            ("phase", PHASES),
            ("long_trainable", LONG_TRAINABLE),
        ):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name}={getattr(self, name)!r} not in {allowed}")
        if self.window < 2 or self.window % 2:
            raise ConfigError(f"window must be even and >= 2, got {self.window}")
        if self.bank_k > self.n_queries:
            raise ConfigError(f"bank_k={self.bank_k} exceeds n_queries={self.n_queries}")
        if self.frames % 2:
            raise ConfigError("frames must be even")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")

    @property
    def points_per_frame(self) -> int:
        return self.grid * self.grid if self.sampling == "fixed_grid" else self.points

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(frames=self.frames, height=self.height, width=self.width, max_actors=self.max_actors)

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw.strip("\"'")
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None


def parse_config(text: str, base: Config | None = None) -> Config:
    types = {f.name: f.type for f in fields(Config)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    return (base or Config()).replace(**values)


def load_config(path: str | Path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def desk_preset() -> Config:
    return Config()


def ablation_preset() -> Config:
    """Adaptive vs fixed-grid comparison; flip ``sampling`` and keep everything else."""
    return Config(n_clips=300, steps=1000, grid=3)


def long_probe_preset() -> Config:
    """Short-term phase of the long-term probe, on reappearing-identity videos."""
    return Config(n_videos=30, steps=600)


def long_probe_phase(cfg: Config) -> Config:
    """Long-term phase of the probe: only the new head trains, the detector stays frozen."""
    return cfg.replace(phase="long", steps=300, lr=1e-3, long_trainable="head")


def full_scale_preset() -> Config:
    """Full-scale settings of the original detector, for reference; not trainable here."""
    return Config(
        d=256,
        n_queries=100,
        n_stages=6,
        groups=4,
        points=32,
        p_out=128,
        t_out=32,
        bank_k=5,
        window=60,
        cross_layers=3,
        lr=2e-5,
        weight_decay=1e-4,
        lambda_cls=2.0,
        lambda_l1=2.0,
        lambda_giou=2.0,
        lambda_act=24.0,
        threshold=0.6,
        frames=8,
        height=256,
        width=256,
    )
