"""Adaptive dual-branch feature mixing.

Both branches share one shape: pool the sampled features [N, G, T, P, Dg]
over one axis, mix channels with a query-generated [Dg, Dg] matrix, mix
points with a query-generated [n_in, n_out] matrix, flatten, project to D and
add back to the query. The spatial branch pools over time (points are the
P_in sampling locations), the temporal branch pools over space (points are
the T frames).
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import LayerNorm, Linear, Module
from .tensor import Parameter, Tensor

STRATEGIES = ("dual", "spatial_only", "temporal_only", "fixed_params")


class MixingBranch(Module):
    def __init__(
        self,
        d: int,
        groups: int,
        n_in: int,
        n_out: int,
        pool_axis: int,
        rng: np.random.Generator,
        gen_std: float = 0.01,
    ):
        if d % groups:
            raise ConfigError(f"D={d} not divisible into {groups} groups")
        self.d, self.groups, self.dg = d, groups, d // groups
        self.n_in, self.n_out = n_in, n_out
        self.pool_axis = pool_axis
        dg = self.dg
        self.n_channel = dg * dg
        self.n_point = n_in * n_out
        self.generator = Linear(d, groups * (self.n_channel + self.n_point), rng, std=gen_std / math.sqrt(d))
        bias = np.concatenate(
            [
                rng.normal(0.0, 1.0 / math.sqrt(dg), size=(groups, self.n_channel)),
                rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(groups, self.n_point)),
            ],
            axis=1,
        )
        self.generator.bias = Parameter(bias.reshape(-1))
        self.norm_channel = LayerNorm(dg)
        self.norm_point = LayerNorm(n_out)
        self.out_proj = Linear(groups * dg * n_out, d, rng)
        self.norm_out = LayerNorm(d)

    def mixing_params(self, q: Tensor, adaptive: bool = True) -> tuple[Tensor, Tensor]:
        """Channel-mixing [N|1, G, Dg, Dg] and point-mixing [N|1, G, n_in, n_out] matrices."""
        if adaptive:
            raw = self.generator(q)
            lead = q.shape[0]
        else:
            raw = self.generator.bias.reshape(1, -1)
            lead = 1
        raw = raw.reshape(lead, self.groups, self.n_channel + self.n_point)
        m_c = raw[:, :, : self.n_channel].reshape(lead, self.groups, self.dg, self.dg)
        m_p = raw[:, :, self.n_channel :].reshape(lead, self.groups, self.n_in, self.n_out)
        return m_c, m_p

    def pool(self, feats: Tensor) -> Tensor:
        return feats.mean(axis=self.pool_axis)

    def channel_mix(self, pooled: Tensor, m_c: Tensor) -> Tensor:
        return T.relu(self.norm_channel(pooled @ m_c))

    def point_mix(self, cm: Tensor, m_p: Tensor) -> Tensor:
        return T.relu(self.norm_point(cm.swapaxes(-1, -2) @ m_p))

    def __call__(self, q: Tensor, feats: Tensor, adaptive: bool = True) -> Tensor:
        n = q.shape[0]
        if feats.ndim != 5 or feats.shape[0] != n or feats.shape[1] != self.groups or feats.shape[4] != self.dg:
            raise DimensionError(
                f"sampled features {feats.shape} incompatible with N={n}, G={self.groups}, Dg={self.dg}"
            )
        pooled = self.pool(feats)
        if pooled.shape[2] != self.n_in:
            raise DimensionError(f"branch expects {self.n_in} points after pooling, got {pooled.shape[2]}")
        m_c, m_p = self.mixing_params(q, adaptive)
        pcm = self.point_mix(self.channel_mix(pooled, m_c), m_p)
        update = self.out_proj(pcm.reshape(n, self.groups * self.dg * self.n_out))
        return self.norm_out(q + update)


class DualMixer(Module):
    def __init__(
        self,
        d: int,
        groups: int,
        points: int,
        frames: int,
        p_out: int,
        t_out: int,
        rng: np.random.Generator,
        strategy: str = "dual",
    ):
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown mixing strategy {strategy!r}; choose from {STRATEGIES}")
        self.strategy = strategy
        self.spatial = MixingBranch(d, groups, points, p_out, pool_axis=2, rng=rng)
        self.temporal = MixingBranch(d, groups, frames, t_out, pool_axis=3, rng=rng)

    def __call__(self, q_s: Tensor, q_t: Tensor, feats: Tensor) -> tuple[Tensor, Tensor]:
        return mix(self, q_s, q_t, feats, self.strategy)


def spatial_mix(branch: MixingBranch, q_s: Tensor, feats: Tensor, adaptive: bool = True) -> Tensor:
    return branch(q_s, feats, adaptive)


def temporal_mix(branch: MixingBranch, q_t: Tensor, feats: Tensor, adaptive: bool = True) -> Tensor:
    return branch(q_t, feats, adaptive)


def mix(mixer: DualMixer, q_s: Tensor, q_t: Tensor, feats: Tensor, strategy: str = "dual") -> tuple[Tensor, Tensor]:
    if strategy == "dual":
        return mixer.spatial(q_s, feats), mixer.temporal(q_t, feats)
    if strategy == "spatial_only":
        return mixer.spatial(q_s, feats), q_t
    if strategy == "temporal_only":
        return q_s, mixer.temporal(q_t, feats)
    if strategy == "fixed_params":
        return mixer.spatial(q_s, feats, adaptive=False), mixer.temporal(q_t, feats, adaptive=False)
    raise ConfigError(f"unknown mixing strategy {strategy!r}; choose from {STRATEGIES}")
