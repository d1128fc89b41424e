"""Toy video backbones producing maps X_z, z in {2, 3, 4, 5}, at spatial stride 2**z.

Temporal kernels have extent 1 so every level keeps the clip length T.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import GeometryError
from .layers import Module
from .tensor import Parameter, Tensor

LEVELS = (2, 3, 4, 5)


def _conv_param(rng, cout: int, cin: int, kh: int, kw: int) -> Parameter:
    std = math.sqrt(2.0 / (cin * kh * kw))
    return Parameter(rng.normal(0.0, std, size=(cout, cin, 1, kh, kw)))


def check_input(video: Tensor) -> None:
    if video.ndim != 4:
        raise GeometryError(f"expected video [C, T, H, W], got shape {video.shape}")
    _, _, h, w = video.shape
    if h % 32 or w % 32:
        raise GeometryError(f"frame size {h}x{w} must be divisible by 32")


class HierarchicalBackbone(Module):
    """Stem (stride 4, 1x5x5) followed by three stride-2 1x3x3 stages; width doubles per stage."""

    def __init__(self, in_channels: int = 1, base: int = 8, seed: int = 0):
        rng = np.random.default_rng(seed)
        widths = [base * 2**i for i in range(4)]
        self.channels = dict(zip(LEVELS, widths))
        self.stem_w = _conv_param(rng, widths[0], in_channels, 5, 5)
        self.stem_b = Parameter(np.zeros(widths[0]))
        self.stage_w = [_conv_param(rng, widths[i + 1], widths[i], 3, 3) for i in range(3)]
        self.stage_b = [Parameter(np.zeros(widths[i + 1])) for i in range(3)]

    def __call__(self, video: Tensor) -> dict[int, Tensor]:
        check_input(video)
        x = T.relu(T.conv3d(video, self.stem_w, self.stem_b, stride=4, padding=2))
        maps = {2: x}
        for i, z in enumerate(LEVELS[1:]):
            x = T.relu(T.conv3d(x, self.stage_w[i], self.stage_b[i], stride=2, padding=1))
            maps[z] = x
        return maps


class PlainBackbone(Module):
    """Single stride-16 trunk with four heads of spatial stride 1/4, 1/2, 1 and 2 relative to it."""

    def __init__(self, in_channels: int = 1, trunk: int = 32, out_channels: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.channels = {z: out_channels for z in LEVELS}
        self.patch_w = _conv_param(rng, trunk, in_channels, 16, 16)
        self.patch_b = Parameter(np.zeros(trunk))
        self.mix_w = _conv_param(rng, trunk, trunk, 3, 3)
        self.mix_b = Parameter(np.zeros(trunk))
        self.up4_w = Parameter(rng.normal(0.0, 1.0 / math.sqrt(trunk), size=(trunk, out_channels, 4, 4)))
        self.up4_b = Parameter(np.zeros(out_channels))
        self.up2_w = Parameter(rng.normal(0.0, 1.0 / math.sqrt(trunk), size=(trunk, out_channels, 2, 2)))
        self.up2_b = Parameter(np.zeros(out_channels))
        self.same_w = _conv_param(rng, out_channels, trunk, 1, 1)
        self.same_b = Parameter(np.zeros(out_channels))
        self.down_w = _conv_param(rng, out_channels, trunk, 3, 3)
        self.down_b = Parameter(np.zeros(out_channels))

    def trunk(self, video: Tensor) -> Tensor:
        check_input(video)
        x = T.relu(T.conv3d(video, self.patch_w, self.patch_b, stride=16))
        return T.relu(x + T.conv3d(x, self.mix_w, self.mix_b, stride=1, padding=1))

    def __call__(self, video: Tensor) -> dict[int, Tensor]:
        x = self.trunk(video)
        return {
            2: T.conv_transpose3d(x, self.up4_w, self.up4_b, stride=4),
            3: T.conv_transpose3d(x, self.up2_w, self.up2_b, stride=2),
            4: T.conv3d(x, self.same_w, self.same_b, stride=1),
            5: T.conv3d(x, self.down_w, self.down_b, stride=2, padding=1),
        }


def build_backbone(kind: str, in_channels: int = 1, width: int = 8, out_channels: int = 32, seed: int = 0) -> Module:
    if kind == "hierarchical":
        return HierarchicalBackbone(in_channels, base=width, seed=seed)
    if kind == "plain":
        return PlainBackbone(in_channels, trunk=4 * width, out_channels=out_channels, seed=seed)
    raise ValueError(f"unknown backbone {kind!r}")
