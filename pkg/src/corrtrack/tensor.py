"""Dense tensor arithmetic with reverse-mode automatic differentiation.

Values are numpy arrays (channels-last layout for images). Each operation
records a backward closure; `Tensor.backward()` replays them in reverse
topological order. Gradients accumulate until `zero_grad` is called, so one
graph supports repeated backward passes with additive semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "BatchNormState",
    "add", "sub", "mul", "div", "matmul", "concat",
    "conv2d", "max_pool2d", "batch_norm", "upsample2x",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- autodiff -----------------------------------------------------------
    def backward(self):
        """Populate gradients of every requires_grad leaf reachable from self.

        Only defined for scalar outputs. Gradients accumulate across calls;
        reset with `zero_grad` between optimizer steps.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def flatten(self):
        return reshape(self, (-1,))

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise binary ops ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data ** 2), b.data.shape))

    return _make(a.data / b.data, (a, b), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient flows to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))

    return _make(np.maximum(a.data, b.data), (a, b), bw)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))

    return _make(np.minimum(a.data, b.data), (a, b), bw)


# -- elementwise unary ops -------------------------------------------------

def power(a, p: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1))

    return _make(a.data ** p, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(a.data * mask, (a,), bw)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably; strictly positive output."""
    a = as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * sig)

    return _make(out_data, (a,), bw)


def atan(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g / (1.0 + a.data ** 2))

    return _make(np.arctan(a.data), (a,), bw)


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp values; gradient is zero outside [lo, hi]."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(out_data, (a,), bw)


# -- shape ops -------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    in_shape = a.data.shape

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.reshape(in_shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bw)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return _make(a.data[idx], (a,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        for t, gp in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(gp)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        for t, gp in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(gp)

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


# -- reductions ------------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    in_shape = a.data.shape

    def bw(g):
        if not a.requires_grad:
            return
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, in_shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(a.data @ b.data, (a, b), bw)


# -- spatial ops -----------------------------------------------------------

def _pad_amount(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """View of all k x k patches, shape [b, oh, ow, k, k, c]."""
    b, h, w, c = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    sb, sh, sw, sc = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (b, oh, ow, k, k, c), (sb, sh * stride, sw * stride, sh, sw, sc))


def conv2d(x, kernel, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D convolution on channels-last input [b, h, w, cin].

    kernel: [k, k, cin, cout], k odd. padding 'same' keeps ceil(dim/stride),
    'valid' shrinks by k-1.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects [b,h,w,cin] input, got {x.data.shape}")
    k = kernel.data.shape[0]
    if kernel.data.ndim != 4 or kernel.data.shape[1] != k:
        raise ValueError(f"conv2d kernel must be [k,k,cin,cout], got {kernel.data.shape}")
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    cin = x.data.shape[3]
    if kernel.data.shape[2] != cin:
        raise ValueError(
            f"input has {cin} channels but kernel expects {kernel.data.shape[2]}")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")

    b, h, w, _ = x.data.shape
    cout = kernel.data.shape[3]
    if padding == "same":
        pt, pb = _pad_amount(h, k, stride)
        pl, pr = _pad_amount(w, k, stride)
        xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    else:
        pt = pl = 0
        xp = x.data
    cols = _windows(xp, k, stride).reshape(b, -1, k * k * cin)  # copies
    wmat = kernel.data.reshape(k * k * cin, cout)
    oh = (xp.shape[1] - k) // stride + 1
    ow = (xp.shape[2] - k) // stride + 1
    out_data = (cols @ wmat).reshape(b, oh, ow, cout)

    def bw(g):
        gflat = g.reshape(b, -1, cout)
        if kernel.requires_grad:
            dw = cols.reshape(-1, k * k * cin).T @ gflat.reshape(-1, cout)
            kernel._accumulate(dw.reshape(kernel.data.shape))
        if x.requires_grad:
            dcols = (gflat @ wmat.T).reshape(b, oh, ow, k, k, cin)
            dxp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    dxp[:, ki:ki + oh * stride:stride,
                        kj:kj + ow * stride:stride, :] += dcols[:, :, :, ki, kj, :]
            x._accumulate(dxp[:, pt:pt + h, pl:pl + w, :])

    return _make(out_data, (x, kernel), bw)


def max_pool2d(x, kernel: int = 3, stride: int = 1, padding: str = "same") -> Tensor:
    """Per-channel spatial max pooling; gradient routed to the arg max."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ValueError(f"max_pool2d expects [b,h,w,c] input, got {x.data.shape}")
    b, h, w, c = x.data.shape
    k = kernel
    if padding == "same":
        pt, pb = _pad_amount(h, k, stride)
        pl, pr = _pad_amount(w, k, stride)
        xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)),
                    constant_values=-np.inf)
    elif padding == "valid":
        pt = pl = 0
        xp = x.data
    else:
        raise ValueError(f"unknown padding {padding!r}")
    win = _windows(xp, k, stride)  # [b,oh,ow,k,k,c]
    oh, ow = win.shape[1], win.shape[2]
    flat = win.reshape(b, oh, ow, k * k, c)
    am = flat.argmax(axis=3)  # [b,oh,ow,c]
    out_data = np.take_along_axis(flat, am[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def bw(g):
        if not x.requires_grad:
            return
        bi, oi, oj, ci = np.indices(am.shape)
        rows = oi * stride + am // k
        cols = oj * stride + am % k
        dxp = np.zeros_like(xp)
        np.add.at(dxp, (bi, rows, cols, ci), g)
        x._accumulate(dxp[:, pt:pt + h, pl:pl + w, :])

    return _make(out_data, (x,), bw)


def upsample2x(x, out_h: int, out_w: int) -> Tensor:
    """Nearest-neighbor 2x upsampling to an explicit output size."""
    x = as_tensor(x)
    b, h, w, c = x.data.shape
    ri = np.minimum(np.arange(out_h) // 2, h - 1)
    ci = np.minimum(np.arange(out_w) // 2, w - 1)
    idx = (slice(None), ri[:, None], ci[None, :], slice(None))

    def bw(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, idx, g)
            x._accumulate(dx)

    return _make(x.data[idx], (x,), bw)


@dataclass
class BatchNormState:
    """Running statistics and hyperparameters for one batch-norm layer."""
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.9, eps: float = 1e-5,
               dtype=np.float64) -> "BatchNormState":
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype),
                   momentum, eps)


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Batch normalization over all axes except the last (channel) axis.

    Training mode uses (and updates) batch statistics; eval mode uses the
    stored running statistics. Variance is clamped by eps, so constant input
    normalizes to zero and the output collapses to beta.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    ch = x.data.shape[-1]
    if gamma.data.shape != (ch,) or beta.data.shape != (ch,):
        raise ValueError(
            f"gamma/beta must have shape ({ch},), got {gamma.data.shape}/{beta.data.shape}")
    axes = tuple(range(x.data.ndim - 1))
    eps = state.eps

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * mu
        state.running_var[...] = m * state.running_var + (1 - m) * var
    else:
        mu = state.running_mean
        var = state.running_var

    std = np.sqrt(var + eps)
    xhat = (x.data - mu) / std
    out_data = gamma.data * xhat + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            if training:
                dxhat = g * gamma.data
                dx = (dxhat - dxhat.mean(axis=axes)
                      - xhat * (dxhat * xhat).mean(axis=axes)) / std
            else:
                dx = g * gamma.data / std
            x._accumulate(dx)

    return _make(out_data, (x, gamma, beta), bw)


def cosine_similarity(a, b, eps: float = 1e-12) -> Tensor:
    """Cosine similarity along the last axis; norms clamped at eps."""
    a, b = as_tensor(a), as_tensor(b)
    na = clip(sqrt(tsum(mul(a, a), axis=-1, keepdims=True)), lo=eps)
    nb = clip(sqrt(tsum(mul(b, b), axis=-1, keepdims=True)), lo=eps)
    num = tsum(mul(a, b), axis=-1)
    return div(num, reshape(mul(na, nb), num.data.shape))


def normalize_rows(a, eps: float = 1e-12) -> Tensor:
    """Scale the last axis to unit norm; zero rows are eps-stabilized."""
    a = as_tensor(a)
    n = clip(sqrt(tsum(mul(a, a), axis=-1, keepdims=True)), lo=eps)
    return div(a, n)


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias) on the last axis."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out
