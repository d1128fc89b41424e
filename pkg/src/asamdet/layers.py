"""Small module system and the layers the detector is assembled from."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Parameter container. Attributes holding Parameters, Modules or lists of
    Modules are discovered in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, std: float | None = None, bias: bool = True):
        std = 1.0 / math.sqrt(d_in) if std is None else std
        self.weight = Parameter(rng.normal(0.0, std, size=(d_in, d_out)) if std > 0 else np.zeros((d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        y = x.reshape(-1, x.shape[-1]) @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(lead + (y.shape[-1],))


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gain, self.bias, self.eps)


class FFN(Module):
    """ReLU MLP. ``zero_last`` zero-initialises the output layer."""

    def __init__(self, dims: list[int], rng: np.random.Generator, zero_last: bool = False):
        self.layers = [
            Linear(a, b, rng, std=0.0 if (zero_last and i == len(dims) - 2) else None)
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class MultiHeadAttention(Module):
    """Scaled dot-product attention built from matmul and softmax."""

    def __init__(self, d_q: int, d_kv: int, n_heads: int, rng: np.random.Generator):
        if d_q % n_heads:
            raise ValueError(f"query width {d_q} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q_proj = Linear(d_q, d_q, rng)
        self.k_proj = Linear(d_kv, d_q, rng)
        self.v_proj = Linear(d_kv, d_q, rng)
        self.out_proj = Linear(d_q, d_q, rng)
        self.last_weights: np.ndarray | None = None

    def __call__(self, q: Tensor, kv: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """q: [N, d_q]; kv: [K, d_kv]; mask: boolean [K], False rows are ignored."""
        n, d = q.shape
        k = kv.shape[0]
        h = self.n_heads
        dh = d // h
        qh = self.q_proj(q).reshape(n, h, dh).transpose(1, 0, 2)
        kh = self.k_proj(kv).reshape(k, h, dh).transpose(1, 2, 0)
        vh = self.v_proj(kv).reshape(k, h, dh).transpose(1, 0, 2)
        scores = (qh @ kh) * (1.0 / math.sqrt(dh))
        attn = T.softmax(scores, axis=-1, mask=None if mask is None else mask[None, None, :])
        self.last_weights = attn.data
        ctx = (attn @ vh).transpose(1, 0, 2).reshape(n, d)
        return self.out_proj(ctx)
