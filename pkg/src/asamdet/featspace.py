"""Unified multi-scale spatiotemporal feature volume indexed by (x, y, t, z)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import LEVELS
from .errors import ConfigError
from .layers import Module
from .tensor import Parameter, Tensor


@dataclass
class FeatureSpace4D:
    """volume: [D, T, Z, H2, W2]; slab i holds scale z = i + z_min."""

    volume: Tensor
    z_min: int = 2
    z_max: int = 5
    stride: int = 4

    @property
    def channels(self) -> int:
        return self.volume.shape[0]

    @property
    def frames(self) -> int:
        return self.volume.shape[1]


class FeatureSpaceBuilder(Module):
    """Lateral 1x1x1 convolution per level, then nearest-neighbour rescale to the stride-4 grid."""

    def __init__(self, in_channels: dict[int, int], d: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_channels = dict(in_channels)
        self.d = d
        self.lateral_w = [
            Parameter(rng.normal(0.0, 1.0 / math.sqrt(in_channels[z]), size=(d, in_channels[z], 1, 1, 1)))
            for z in LEVELS
        ]
        self.lateral_b = [Parameter(np.zeros(d)) for _ in LEVELS]

    def __call__(self, maps: dict[int, Tensor]) -> FeatureSpace4D:
        return build(maps, self.lateral_w, self.lateral_b)


def build(maps: dict[int, Tensor], lateral_w: list[Tensor], lateral_b: list[Tensor] | None = None) -> FeatureSpace4D:
    if sorted(maps) != list(LEVELS):
        raise ConfigError(f"expected pyramid levels {LEVELS}, got {sorted(maps)}")
    h2, w2 = maps[2].shape[-2:]
    slabs = []
    for i, z in enumerate(LEVELS):
        x = maps[z]
        w = lateral_w[i]
        if w.shape[1] != x.shape[0]:
            raise ConfigError(f"lateral conv for level {z} expects {w.shape[1]} channels, map has {x.shape[0]}")
        y = T.conv3d(x, w, None if lateral_b is None else lateral_b[i])
        factor = 2 ** (z - LEVELS[0])
        if y.shape[-2] * factor != h2 or y.shape[-1] * factor != w2:
            raise ConfigError(f"level {z} map {y.shape[-2:]} is not {factor}x coarser than {(h2, w2)}")
        slabs.append(T.upsample_nearest(y, factor))
    return FeatureSpace4D(T.stack(slabs, axis=2), z_min=LEVELS[0], z_max=LEVELS[-1], stride=2 ** LEVELS[0])
