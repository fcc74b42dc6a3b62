"""Reverse-mode autodiff over numpy arrays.

Ops record parents and a backward closure on a tape; `Tensor.backward()`
walks the graph in reverse topological order. Gradients are exact chain-rule
propagation, checked against central finite differences in the test suite.
Every op output is verified finite unless checks are disabled.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_grad_enabled = True
_strict_checks = True


def set_strict_checks(on: bool) -> None:
    global _strict_checks
    _strict_checks = bool(on)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (target nets, rollouts)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _chk(arr: np.ndarray) -> np.ndarray:
    if _strict_checks and not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite value produced by an op")
    return arr


def _as_float_array(data) -> np.ndarray:
    a = np.asarray(data)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple["Tensor", ...] = ()
        self._bw: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    # Operator sugar; the module-level functions implement the semantics.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], bw) -> Tensor:
    out = Tensor(_chk(data))
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bw = bw
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if a.requires_grad:
            a.accumulate(-g)

    return _make(-a.data, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _make(out_data, (a, b), bw)


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def bw(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(out_data, (a,), bw)


def tmean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    out_data = a.data.mean(axis=axis)

    def bw(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate(np.broadcast_to(g / n, a.shape).copy())
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy())

    return _make(out_data, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), bw)


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, s0, s1 in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(s0), int(s1))
                p.accumulate(g[tuple(idx)])

    return _make(out_data, tuple(parts), bw)


def narrow0(a, start: int, length: int) -> Tensor:
    """Contiguous row slice along axis 0; gradients scatter back in place."""
    a = as_tensor(a)
    out_data = a.data[start:start + length]

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[start:start + length] += g

    return _make(out_data, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return _make(a.data * mask, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - y * y))

    return _make(y, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * y * (1.0 - y))

    return _make(y, (a,), bw)


def absval(a) -> Tensor:
    """|x|; subgradient at 0 taken as +1 (matches d|x|/dx for x->0+)."""
    a = as_tensor(a)
    sign = np.where(a.data >= 0, 1.0, -1.0).astype(a.dtype)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * sign)

    return _make(np.abs(a.data), (a,), bw)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    neg_part = alpha * (np.exp(np.minimum(a.data, 0.0)) - 1.0)
    y = np.where(a.data > 0, a.data, neg_part)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * np.where(a.data > 0, 1.0, neg_part + alpha))

    return _make(y, (a,), bw)


# --- convolution / pooling ---------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, c, kh, kw, ho, wo), (s0, s1, s2, s3, s2 * sh, s3 * sw), writeable=False)
    return np.ascontiguousarray(view).reshape(n, c * kh * kw, ho * wo)


def _col2im(dcols: np.ndarray, x_shape, kh, kw, sh, sw, ph, pw, ho, wo) -> np.ndarray:
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=dcols.dtype)
    d6 = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += d6[:, :, i, j]
    return dxp[:, :, ph:h + ph, pw:w + pw]


def conv2d(x, weight, bias=None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlation of (N,C,H,W) with (O,C,kh,kw) kernels."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {ci}")
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d output would be empty")

    if ph or pw:
        xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        xp[:, :, ph:ph + h, pw:pw + w] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, sh, sw, ho, wo)            # (N, C*kh*kw, Ho*Wo)
    wmat = weight.data.reshape(o, -1)
    out_data = np.matmul(wmat, cols).reshape(n, o, ho, wo)  # broadcast batched gemm
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    # The column matrix costs kh*kw/(sh*sw) times the input. Keep it on the
    # tape only when that blow-up is small; otherwise rebuild it on demand.
    if cols.nbytes > 2 * xp.nbytes:
        cols = None

    def bw(g):
        gm = np.ascontiguousarray(g.reshape(n, o, ho * wo))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            cols_b = cols if cols is not None else _im2col(xp, kh, kw, sh, sw, ho, wo)
            dw = np.matmul(gm, cols_b.transpose(0, 2, 1)).sum(axis=0)
            weight.accumulate(dw.reshape(weight.shape))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, gm)
            x.accumulate(_col2im(dcols, x.shape, kh, kw, sh, sw, ph, pw, ho, wo))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out_data, parents, bw)


def avg_pool2d(x, pool: tuple[int, int]) -> Tensor:
    """Non-overlapping average pooling; spatial dims must divide evenly."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    kh, kw = pool
    if h % kh or w % kw:
        raise ValueError(f"pool {pool} does not tile input {h}x{w}")
    ho, wo = h // kh, w // kw
    out_data = x.data.reshape(n, c, ho, kh, wo, kw).mean(axis=(3, 5))

    def bw(g):
        if x.requires_grad:
            gex = np.broadcast_to(
                g[:, :, :, None, :, None], (n, c, ho, kh, wo, kw)) / (kh * kw)
            x.accumulate(gex.reshape(n, c, h, w).copy())

    return _make(out_data, (x,), bw)
