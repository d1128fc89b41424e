"""Query-guided sampling from the 4D feature space.

Sampling points are tensors of shape [N, G, T, P, 3] holding (x, y, z) per
query, group, frame and point: x, y in input pixels and z a continuous scale
index. A pixel coordinate maps to grid position ``x / stride - 0.5`` on the
common stride-4 grid (cell centres sit on integer positions). Scale z is
clamped into [z_min, z_max] and interpolated linearly between adjacent slabs;
x and y are interpolated bilinearly with zero padding outside the grid.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, NumericError
from .featspace import FeatureSpace4D
from .layers import Linear, Module
from .tensor import Parameter, Tensor

PROPAGATION_MODES = ("copy", "move")


class OffsetHead(Module):
    """Linear map from each spatial query to G * P_in offsets (dx, dy, dz).

    Weights start at zero; biases place the points on two rings (radii 0.25 and
    0.5 box sides) rotated per group, with dz = ``dz_init``.
    """

    def __init__(self, d: int, groups: int, points: int, rng: np.random.Generator, dz_init: float = 0.0):
        self.groups, self.points = groups, points
        self.linear = Linear(d, groups * points * 3, rng, std=0.0)
        bias = np.zeros((groups, points, 3))
        for g in range(groups):
            for i in range(points):
                ang = 2 * math.pi * (i + g / groups) / points
                radius = 0.25 if i % 2 == 0 else 0.5
                bias[g, i, 0] = radius * math.cos(ang)
                bias[g, i, 1] = radius * math.sin(ang)
                bias[g, i, 2] = dz_init
        self.linear.bias = Parameter(bias.reshape(-1))

    def __call__(self, q_s: Tensor) -> Tensor:
        return self.linear(q_s).reshape(q_s.shape[0], self.groups, self.points, 3)


def regress_offsets(head: OffsetHead, q_s: Tensor) -> Tensor:
    return head(q_s)


def decode_points(pq: Tensor, offsets: Tensor) -> Tensor:
    """Offsets [N, G, P, 3] around each box centre, scaled by box width/height.

    x = cx + dx * 2**(z - r), y = cy + dy * 2**(z + r), z = z + dz.
    """
    n = pq.shape[0]
    x, y, z, r = (pq[:, i].reshape(n, 1, 1) for i in range(4))
    w = T.exp2(z - r)
    h = T.exp2(z + r)
    px = x + offsets[..., 0] * w
    py = y + offsets[..., 1] * h
    pz = z + offsets[..., 2]
    return T.stack([px, py, pz], axis=-1)


class FrameShiftHead(Module):
    """Per-frame reference-box shifts (in box widths/heights) for temporal moving; zero-initialised."""

    def __init__(self, d: int, frames: int, rng: np.random.Generator):
        self.frames = frames
        self.linear = Linear(d, frames * 2, rng, std=0.0)

    def __call__(self, q_s: Tensor) -> Tensor:
        return self.linear(q_s).reshape(q_s.shape[0], self.frames, 2)


def propagate_temporal(
    points: Tensor, frames: int, mode: str = "copy", frame_deltas: Tensor | None = None, pq: Tensor | None = None
) -> Tensor:
    """Extend keyframe points [N, G, P, 3] to all frames -> [N, G, T, P, 3].

    ``copy`` repeats the points. ``move`` shifts frame t's reference box by
    ``frame_deltas[n, t] * (width, height)`` before the offsets are applied.
    """
    if mode not in PROPAGATION_MODES:
        raise ConfigError(f"unknown temporal propagation mode {mode!r}")
    n, g, p, _ = points.shape
    out = points.reshape(n, g, 1, p, 3) + Tensor(np.zeros((1, 1, frames, 1, 1)))
    if mode == "copy":
        return out
    if frame_deltas is None or pq is None:
        raise ConfigError("temporal moving needs per-frame deltas and the positional queries")
    if frame_deltas.shape != (n, frames, 2):
        raise DimensionError(f"frame deltas shape {frame_deltas.shape}, expected {(n, frames, 2)}")
    z, r = pq[:, 2].reshape(n, 1), pq[:, 3].reshape(n, 1)
    sx = frame_deltas[:, :, 0] * T.exp2(z - r)
    sy = frame_deltas[:, :, 1] * T.exp2(z + r)
    shift = T.stack([sx, sy, Tensor(np.zeros((n, frames)))], axis=-1)
    return out + shift.reshape(n, 1, frames, 1, 3)


def fixed_grid_points(pq: Tensor, groups: int, frames: int, grid: int = 7) -> Tensor:
    """grid x grid cell centres inside each decoded box at the box's own scale, copied over T."""
    n = pq.shape[0]
    x, y, z, r = (pq[:, i].reshape(n, 1) for i in range(4))
    w = T.exp2(z - r)
    h = T.exp2(z + r)
    frac = (np.arange(grid) + 0.5) / grid
    fx = Tensor(np.tile(frac, grid)[None, :])
    fy = Tensor(np.repeat(frac, grid)[None, :])
    px = x - w * 0.5 + fx * w
    py = y - h * 0.5 + fy * h
    pz = z + Tensor(np.zeros((1, grid * grid)))
    pts = T.stack([px, py, pz], axis=-1).reshape(n, 1, 1, grid * grid, 3)
    return pts + Tensor(np.zeros((1, groups, frames, 1, 1)))


def _corner_table(points: np.ndarray, space: FeatureSpace4D):
    """Per-corner (weight, dweight/d(gx, gy, gz), indices, valid) for 8 interpolation neighbours."""
    _, _, zdim, hdim, wdim = space.volume.shape
    gx = points[..., 0] / space.stride - 0.5
    gy = points[..., 1] / space.stride - 0.5
    zc = np.clip(points[..., 2], space.z_min, space.z_max)
    z_inside = (points[..., 2] >= space.z_min) & (points[..., 2] <= space.z_max)
    gz = zc - space.z_min
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    z0 = np.minimum(np.floor(gz), zdim - 2)
    fx, fy, fz = gx - x0, gy - y0, gz - z0
    x0, y0, z0 = x0.astype(np.int64), y0.astype(np.int64), z0.astype(np.int64)
    corners = []
    for dz in (0, 1):
        wz = fz if dz else 1.0 - fz
        dwz = 1.0 if dz else -1.0
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            dwy = 1.0 if dy else -1.0
            yi = y0 + dy
            for dx in (0, 1):
                wx = fx if dx else 1.0 - fx
                dwx = 1.0 if dx else -1.0
                xi = x0 + dx
                valid = (xi >= 0) & (xi < wdim) & (yi >= 0) & (yi < hdim)
                weight = np.where(valid, wz * wy * wx, 0.0)
                dgx = np.where(valid, wz * wy * dwx, 0.0)
                dgy = np.where(valid, wz * dwy * wx, 0.0)
                dgz = np.where(valid & z_inside, dwz * wy * wx, 0.0)
                idx = (z0 + dz, np.clip(yi, 0, hdim - 1), np.clip(xi, 0, wdim - 1))
                corners.append((weight, dgx, dgy, dgz, idx))
    return corners


def sample(space: FeatureSpace4D, points: Tensor) -> Tensor:
    """Interpolate features at points [N, G, T, P, 3] -> [N, G, T, P, D/G].

    Group g reads channel block g. Differentiable w.r.t. the volume and the
    point coordinates.
    """
    vol = space.volume
    d, frames, zdim, hdim, wdim = vol.shape
    n, g, t, p, three = points.shape
    if three != 3 or t != frames:
        raise DimensionError(f"points {points.shape} incompatible with feature space {vol.shape}")
    if d % g:
        raise DimensionError(f"channels {d} not divisible into {g} groups")
    if not np.all(np.isfinite(points.data)):
        raise NumericError("non-finite sampling coordinates")
    dg = d // g
    # [G, T, Z, H, W, Dg]
    table = np.ascontiguousarray(vol.data.reshape(g, dg, frames, zdim, hdim, wdim).transpose(0, 2, 3, 4, 5, 1))
    gi = np.arange(g).reshape(1, g, 1, 1)
    ti = np.arange(frames).reshape(1, 1, frames, 1)
    corners = _corner_table(points.data, space)
    out = np.zeros((n, g, t, p, dg))
    gathered = []
    for weight, _, _, _, (zi, yi, xi) in corners:
        vals = table[gi, ti, zi, yi, xi]
        gathered.append(vals)
        out = out + weight[..., None] * vals

    def bw(gout):
        gtable = np.zeros_like(table)
        gpts = np.zeros(points.shape)
        for (weight, dgx, dgy, dgz, (zi, yi, xi)), vals in zip(corners, gathered):
            np.add.at(gtable, (gi, ti, zi, yi, xi), weight[..., None] * gout)
            proj = (gout * vals).sum(axis=-1)
            gpts[..., 0] += proj * dgx
            gpts[..., 1] += proj * dgy
            gpts[..., 2] += proj * dgz
        gpts[..., 0] /= space.stride
        gpts[..., 1] /= space.stride
        gvol = gtable.transpose(0, 5, 1, 2, 3, 4).reshape(d, frames, zdim, hdim, wdim)
        return gvol, gpts

    return T._node(out, (vol, points), bw)
