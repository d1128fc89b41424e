"""Dense float64 tensors with a define-by-run reverse-mode gradient tape.

Every differentiable primitive used by the detector lives here. A primitive
computes its forward value with numpy and registers a closure mapping the
output gradient to one gradient per parent. ``Tensor.backward`` walks the
tape in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, GeometryError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- tape ---------------------------------------------------------------
    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tensor on the tape."""
        if grad is None:
            if self.size != 1:
                raise DimensionError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.shape) + (0.0 if self.grad is None else self.grad)
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            parent_grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        for node in order:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def power(a: Tensor, p: float) -> Tensor:
    return _node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def exp2(a: Tensor) -> Tensor:
    out = np.exp2(a.data)
    return _node(out, (a,), lambda g: (g * out * math.log(2.0),))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def absolute(a: Tensor) -> Tensor:
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (a,), lambda g: (g * sig,))


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    return _node(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _node(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# -- reductions and shape ops ------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return _node(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


# -- linear algebra ------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(np.matmul(a.data, b.data), (a, b), bw)


def layernorm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    d = x.shape[-1]
    if d == 0:
        raise DimensionError("layernorm over an empty axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    parents = [x] + [p for p in (gain, bias) if p is not None]

    def bw(g):
        dxhat = g * gain.data if gain is not None else g
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        lead = tuple(range(g.ndim - 1))
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _node(out, parents, bw)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``. Entries where ``mask`` is False get weight exactly 0.

    A slice with no valid entry yields all zeros.
    """
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, z.shape)
        z = np.where(mask, z, -np.inf)
    zmax = np.max(z, axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.exp(z - zmax)
    denom = e.sum(axis=axis, keepdims=True)
    out = e / np.where(denom > 0, denom, 1.0)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data
    zmax = z.max(axis=axis, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _node(out, (x,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


# -- convolution and resampling ------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """3D convolution on a single clip.

    x: [C_in, T, H, W]; weight: [C_out, C_in, kt, kh, kw] with odd kt. Temporal
    stride is 1 and the temporal axis is zero-padded so T is preserved.
    """
    if stride not in (1, 2, 4, 8, 16):
        raise GeometryError(f"unsupported spatial stride {stride}")
    cin, t, h, w = x.shape
    cout, wcin, kt, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv3d channel mismatch: input {x.shape}, kernel {weight.shape}")
    if kt % 2 != 1:
        raise GeometryError(f"temporal kernel extent must be odd, got {kt}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise GeometryError(f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    pt = kt // 2
    xp = np.pad(x.data, ((0, 0), (pt, pt), (padding, padding), (padding, padding)))
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    win = win[:, :t, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    out = np.tensordot(weight.data, win, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    if bias is not None:
        out = out + bias.data[:, None, None, None]
    parents = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        gw = np.tensordot(g, win, axes=([1, 2, 3], [1, 2, 3]))
        gxp = np.zeros_like(xp)
        for a in range(kt):
            for b in range(kh):
                for c in range(kw):
                    contrib = np.tensordot(weight.data[:, :, a, b, c], g, axes=([0], [0]))
                    gxp[:, a : a + t, b : b + stride * (ho - 1) + 1 : stride, c : c + stride * (wo - 1) + 1 : stride] += contrib
        gx = gxp[:, pt : pt + t, padding : padding + h, padding : padding + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return tuple(grads)

    return _node(out, parents, bw)


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Non-overlapping transposed convolution (kernel == stride), spatial only.

    x: [C_in, T, h, w]; weight: [C_in, C_out, s, s] -> [C_out, T, h*s, w*s].
    Composed from differentiable primitives.
    """
    cin, t, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv_transpose3d channel mismatch: input {x.shape}, kernel {weight.shape}")
    if kh != stride or kw != stride:
        raise GeometryError(f"transposed conv requires kernel == stride, got kernel {kh}x{kw}, stride {stride}")
    cols = x.reshape(cin, t * h * w).transpose(1, 0)
    y = cols @ weight.reshape(cin, cout * stride * stride)
    y = y.reshape(t, h, w, cout, stride, stride).transpose(3, 0, 1, 4, 2, 5)
    y = y.reshape(cout, t, h * stride, w * stride)
    if bias is not None:
        y = y + bias.reshape(cout, 1, 1, 1)
    return y


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes: out[i, j] = x[i // f, j // f]."""
    if factor == 1:
        return x
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    h, w = x.shape[-2:]

    def bw(g):
        g = g.reshape(g.shape[:-2] + (h, factor, w, factor))
        return (g.sum(axis=(-3, -1)),)

    return _node(out, (x,), bw)


# -- optimisation ----------------------------------------------------------------------

class Parameter(Tensor):
    """Trainable tensor carrying AdamW state."""

    __slots__ = ("first_moment", "second_moment", "step_count")

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.first_moment = np.zeros_like(self.data)
        self.second_moment = np.zeros_like(self.data)
        self.step_count = 0

    @property
    def value(self) -> Tensor:
        return self


def adamw_step(
    p: Parameter,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-4,
) -> Parameter:
    """One AdamW update in place; returns ``p`` for chaining."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != p.shape:
        raise DimensionError(f"gradient shape {grad.shape} does not match parameter {p.name!r} shape {p.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for parameter {p.name!r}")
    p.step_count += 1
    p.first_moment = beta1 * p.first_moment + (1.0 - beta1) * grad
    p.second_moment = beta2 * p.second_moment + (1.0 - beta2) * grad * grad
    m_hat = p.first_moment / (1.0 - beta1**p.step_count)
    v_hat = p.second_moment / (1.0 - beta2**p.step_count)
    p.data = p.data * (1.0 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


# -- verification -------------------------------------------------------------------------

def grad_check(
    f: Callable[..., Tensor],
    inputs: Iterable[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-7,
) -> float:
    """Worst relative disagreement between tape gradients and central differences.

    ``f`` maps the inputs to a scalar Tensor. The relative error of one entry is
    |analytic - numeric| / max(|analytic|, |numeric|, floor). With
    ``max_entries`` only a seeded random subset of each input is probed.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    out.backward()
    analytic = [np.array(t.grad) for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = f(*inputs).item()
                flat[i] = orig - h
                fm = f(*inputs).item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                a = ga.reshape(-1)[i]
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    return worst
