"""Differentiable neural-network primitives on :class:`~transnetr.tensor.Tensor`.

All image tensors are NCHW. Each operation computes its forward pass with
numpy and registers a closed-form backward rule.
"""

from __future__ import annotations

import contextlib
import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

# ----------------------------------------------------------------------
# multiply-accumulate tracing (used by the cost counter)
# ----------------------------------------------------------------------


class MacCounter:
    """Accumulates analytic multiply-accumulate counts while active."""

    def __init__(self) -> None:
        self.total = 0
        self.by_scope: Dict[str, int] = {}
        self.scope: List[str] = []

    def add(self, kind: str, macs: int) -> None:
        macs = int(macs)
        self.total += macs
        key = self.scope[-1] if self.scope else "<root>"
        self.by_scope[key] = self.by_scope.get(key, 0) + macs


_COUNTERS: List[MacCounter] = []


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    _COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _COUNTERS.remove(counter)


@contextlib.contextmanager
def mac_scope(name: str) -> Iterator[None]:
    for c in _COUNTERS:
        c.scope.append(name)
    try:
        yield
    finally:
        for c in _COUNTERS:
            c.scope.pop()


def counting_active() -> bool:
    return bool(_COUNTERS)


def _record(kind: str, macs: int) -> None:
    for c in _COUNTERS:
        c.add(kind, macs)


# ----------------------------------------------------------------------
# convolution
# ----------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via an im2col matrix product.

    ``x`` is N×C×H×W and ``weight`` is O×C×Kh×Kw. Output spatial size is
    ``floor((H + 2*padding - Kh) / stride) + 1`` (same for W).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if c != i:
        raise ValueError(f"conv2d channel mismatch: input shape {x.shape} vs weight shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d needs stride >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match weight shape {weight.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d kernel {weight.shape} larger than padded input {x.shape}")

    # Work channels-last internally: columns are ordered (kh, kw, C) so the
    # col2im accumulation in backward adds contiguous channel slabs.
    xh = x.data.transpose(0, 2, 3, 1)
    if padding:
        xh = np.pad(xh, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    if kh == 1 and kw == 1:
        cols = xh[:, : stride * ho : stride, : stride * wo : stride, :].reshape(n * ho * wo, c)
    else:
        win = sliding_window_view(xh, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if _COUNTERS:
        _record("conv", n * o * ho * wo * c * kh * kw)

    need_x = x.requires_grad
    dtype = x.dtype

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = None
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gb = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if need_x:
            gcols = gm @ wmat
            if kh == 1 and kw == 1 and stride == 1 and padding == 0:
                gx = gcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
            else:
                gcols = gcols.reshape(n, ho, wo, kh, kw, c)
                gxp = np.zeros((n, hp, wp, c), dtype=dtype)
                for a in range(kh):
                    for b in range(kw):
                        gxp[:, a : a + stride * ho : stride, b : b + stride * wo : stride, :] += gcols[:, :, :, a, b, :]
                gx = gxp[:, padding : padding + h, padding : padding + w, :].transpose(0, 3, 1, 2)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, "conv2d")


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------


def batchnorm2d(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (exponential moving average, unbiased
    variance). In eval mode the running statistics are used and nothing is
    mutated.
    """
    if x.ndim != 4 or x.shape[1] != scale.shape[0]:
        raise ValueError(f"batchnorm2d channel mismatch: input {x.shape} vs scale {scale.shape}")
    n, c, h, w = x.shape
    xd = x.data
    gamma = scale.data.reshape(1, c, 1, 1)
    beta = shift.data.reshape(1, c, 1, 1)
    if training:
        m = n * h * w
        if m < 2:
            raise ValueError(f"batchnorm2d in train mode needs at least 2 values per channel, got input {x.shape}")
        mean = xd.mean(axis=(0, 2, 3))
        centered = xd - mean.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=(0, 2, 3))
        inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
        xhat = centered * inv.reshape(1, c, 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        m = None
        inv = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype)
        xhat = (xd - running_mean.reshape(1, c, 1, 1).astype(xd.dtype)) * inv.reshape(1, c, 1, 1)
    out = xhat * gamma + beta

    def backward(g):
        gscale = (g * xhat).sum(axis=(0, 2, 3)) if scale.requires_grad else None
        gshift = g.sum(axis=(0, 2, 3)) if shift.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma
            if training:
                s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (inv.reshape(1, c, 1, 1) / m) * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, gscale, gshift

    return Tensor._make(out, (x, scale, shift), backward, "batchnorm2d")


def layernorm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing axis, then apply an elementwise affine map."""
    d = x.shape[-1]
    if scale.shape != (d,) or shift.shape != (d,):
        raise ValueError(f"layernorm parameter shape {scale.shape} does not match input {x.shape}")
    xd = x.data
    mean = xd.mean(axis=-1, keepdims=True)
    centered = xd - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * scale.data + shift.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gscale = (g * xhat).sum(axis=lead)
        gshift = g.sum(axis=lead)
        gxhat = g * scale.data
        gx = inv / d * (d * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, gscale, gshift

    return Tensor._make(out, (x, scale, shift), backward, "layernorm")


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    xd = x.data
    pos = xd >= 0
    out = xd * np.where(pos, xd.dtype.type(1), xd.dtype.type(slope))

    def backward(g):
        # right-hand derivative at 0
        return (g * np.where(pos, g.dtype.type(1), g.dtype.type(slope)),)

    return Tensor._make(out, (x,), backward, "leaky_relu")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd >= 0
    return Tensor._make(np.where(pos, xd, 0).astype(xd.dtype), (x,), lambda g: (g * pos,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, overflow-free and clamped to the open interval (0, 1)."""
    out, comp = _sigmoid_pair(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out * comp,), "sigmoid")


def _sigmoid_pair(xd: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(sigmoid(x), 1 - sigmoid(x)), each computed without cancellation."""
    e = np.exp(-np.abs(xd))
    big = 1.0 / (1.0 + e)
    small = e / (1.0 + e)
    pos = xd >= 0
    info = np.finfo(xd.dtype)
    lo, hi = info.smallest_subnormal, 1.0 - info.epsneg
    out = np.clip(np.where(pos, big, small), lo, hi).astype(xd.dtype)
    comp = np.clip(np.where(pos, small, big), lo, hi).astype(xd.dtype)
    return out, comp


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit.

    Uses 0.5·(1 + tanh(z)) = sigmoid(2z), which stays accurate for large
    negative inputs where 1 + tanh(z) would cancel.
    """
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    s, comp = _sigmoid_pair(2.0 * inner)
    out = xd * s

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (s + 2.0 * xd * s * comp * dinner),)

    return Tensor._make(out, (x,), backward, "gelu")


def activation(x: Tensor, kind: str = "leaky_relu", slope: float = 0.01) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(x: Tensor) -> Tensor:
    """Trailing-axis softmax with max subtraction."""
    xd = x.data
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._make(out, (x,), backward, "softmax")


# ----------------------------------------------------------------------
# resampling and pooling
# ----------------------------------------------------------------------


def interp_coords(n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel bilinear sampling positions along one axis.

    Output index ``o`` samples source coordinate ``(o + 0.5) * n_in / n_out - 0.5``,
    clamped to ``[0, n_in - 1]``. Returns (lower index, upper index, weight of
    upper index).
    """
    o = np.arange(n_out, dtype=np.float64)
    src = (o + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    lo, hi, wt = interp_coords(n_in, n_out)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - wt)
    np.add.at(mat, (rows, hi), wt)
    return mat


def _lerp_axis(a: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    lo, hi, wt = interp_coords(a.shape[axis], n_out)
    shape = [1] * a.ndim
    shape[axis] = n_out
    wt = wt.astype(a.dtype).reshape(shape)
    x0 = np.take(a, lo, axis=axis)
    x1 = np.take(a, hi, axis=axis)
    # a + w * (b - a) reproduces constants exactly
    return x0 + wt * (x1 - x0)


def resize_bilinear_array(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel bilinear resize of the last two axes (no autodiff)."""
    out = a
    if a.shape[-2] != out_h:
        out = _lerp_axis(out, a.ndim - 2, out_h)
    if a.shape[-1] != out_w:
        out = _lerp_axis(out, a.ndim - 1, out_w)
    return out


def interpolate_bilinear(x: Tensor, size: Tuple[int, int]) -> Tensor:
    """Differentiable half-pixel (non-corner-aligned) bilinear resize of NCHW maps."""
    if x.ndim != 4:
        raise ValueError(f"interpolate_bilinear expects NCHW input, got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    out_h, out_w = size
    if h < 1 or w < 1 or out_h < 1 or out_w < 1:
        raise ValueError(f"invalid resize {x.shape} -> {size}")
    out = resize_bilinear_array(x.data, out_h, out_w)
    mh = interp_matrix(h, out_h).astype(x.dtype)
    mw = interp_matrix(w, out_w).astype(x.dtype)
    n, c = x.shape[:2]

    def backward(g):
        # adjoint of the separable resize, as two flat GEMMs
        t = np.ascontiguousarray(g).reshape(-1, out_w) @ mw
        t = t.reshape(n, c, out_h, w).transpose(0, 1, 3, 2).reshape(-1, out_h) @ mh
        return (t.reshape(n, c, w, h).transpose(0, 1, 3, 2),)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward, "interpolate_bilinear")


def bilinear_upsample2x(x: Tensor) -> Tensor:
    return interpolate_bilinear(x, (2 * x.shape[2], 2 * x.shape[3]))


def maxpool2d(x: Tensor, k: int, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Windowed maximum; ties send the gradient to the first maximum in row-major order."""
    stride = k if stride is None else stride
    if k < 1 or stride < 1 or padding < 0:
        raise ValueError(f"maxpool2d needs k >= 1, stride >= 1, padding >= 0 (got {k}, {stride}, {padding})")
    if padding > k // 2:
        raise ValueError(f"maxpool2d padding {padding} exceeds half the window size {k}")
    n, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise ValueError(f"maxpool2d window {k} larger than padded input {(hp, wp)}")
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=-np.inf)
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        rows = np.arange(ho).reshape(1, 1, ho, 1) * stride + arg // k
        cols = np.arange(wo).reshape(1, 1, 1, wo) * stride + arg % k
        plane = (np.arange(n * c).reshape(n, c, 1, 1)) * (hp * wp)
        idx = (plane + rows * wp + cols).ravel()
        gxp = np.bincount(idx, weights=g.ravel(), minlength=n * c * hp * wp)
        gxp = gxp.reshape(n, c, hp, wp).astype(x.dtype)
        return (gxp[:, :, padding : padding + h, padding : padding + w],)

    return Tensor._make(np.ascontiguousarray(out), (x,), backward, "maxpool2d")


# ----------------------------------------------------------------------
# structural ops
# ----------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out, tuple(tensors), backward, "concat")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW maps along channels."""
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels needs matching N, H, W: got {a.shape} and {b.shape}")
    return concat([a, b], axis=1)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map on the trailing axis; ``weight`` is D_out×D_in."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ValueError(f"linear dimension mismatch: input {x.shape} vs weight {weight.shape}")
    xd = x.data
    out = xd @ weight.data.T
    if bias is not None:
        out = out + bias.data
    if _COUNTERS:
        _record("linear", (xd.size // d_in) * d_in * d_out)

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = g @ weight.data if x.requires_grad else None
        gw = g2.T @ xd.reshape(-1, d_in) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward, "linear")


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / sqrt(d)) v over the last two axes (B×heads×L×d)."""
    d = q.shape[-1]
    if _COUNTERS:
        lead = int(np.prod(q.shape[:-2]))
        lq, lk = q.shape[-2], k.shape[-2]
        _record("attention", lead * lq * lk * d + lead * lq * lk * v.shape[-1])
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    return softmax(scores) @ v
