"""Network operations: dilated convolution, batch norm, activations, pixel shuffle, losses.

The three convolution kernels (forward, input-gradient, weight-gradient) are
each other's backward rules, so convolutions support gradients of any order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    dilation: int = 1
    padding: int = 0
    has_bias: bool = False

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.stride, self.dilation) < 1:
            raise ValueError(f"invalid conv spec {self}")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        return (_out_len(h, self.kernel[0], self.stride, self.dilation, self.padding),
                _out_len(w, self.kernel[1], self.stride, self.dilation, self.padding))


def _out_len(n: int, k: int, stride: int, dilation: int, padding: int) -> int:
    extent = dilation * (k - 1) + 1
    if extent > n + 2 * padding:
        raise ValueError(
            f"effective kernel extent {extent} exceeds padded input extent {n + 2 * padding}")
    return (n + 2 * padding - extent) // stride + 1


# ---------------------------------------------------------------------------
# raw numpy kernels


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, :, i, j] = xp[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride]
    return cols


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_fwd(x, w, stride, dilation, padding):
    kh, kw = w.shape[2:]
    ho = _out_len(x.shape[2], kh, stride, dilation, padding)
    wo = _out_len(x.shape[3], kw, stride, dilation, padding)
    cols = _windows(_pad(x, padding), kh, kw, stride, dilation, ho, wo)
    out = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3]))  # (O, N, ho, wo)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _conv_input_grad(g, w, in_shape, stride, dilation, padding):
    n, c, h, wd = in_shape
    kh, kw = w.shape[2:]
    ho, wo = g.shape[2:]
    dcols = np.tensordot(w, g, axes=([0], [1]))  # (C, kh, kw, N, ho, wo)
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=g.dtype)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            dxp[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride] += \
                dcols[:, i, j].transpose(1, 0, 2, 3)
    if padding:
        dxp = dxp[:, :, padding:padding + h, padding:padding + wd]
    return np.ascontiguousarray(dxp)


def _conv_weight_grad(x, g, w_shape, stride, dilation, padding):
    kh, kw = w_shape[2:]
    ho, wo = g.shape[2:]
    cols = _windows(_pad(x, padding), kh, kw, stride, dilation, ho, wo)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))  # (O, C, kh, kw)


# ---------------------------------------------------------------------------
# differentiable convolution family


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """Dilated, strided 2-D cross-correlation.

    ``out[n, o, p] = sum_{c, b} x[n, c, stride*p + dilation*b - padding] * w[o, c, b]``
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    in_shape, w_shape = x.shape, weight.shape

    def bw(g):
        gx = conv2d_input_grad(g, weight, in_shape, stride, dilation, padding) if x.requires_grad else None
        gw = conv2d_weight_grad(x, g, w_shape, stride, dilation, padding) if weight.requires_grad else None
        return gx, gw

    out = Tensor._from_op(_conv_fwd(x.data, weight.data, stride, dilation, padding), "conv2d", (x, weight), bw)
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[0]} output channels")
        out = T.add(out, T.reshape(bias, (1, -1, 1, 1)))
    return out


def conv2d_input_grad(g: Tensor, weight: Tensor, in_shape, stride: int, dilation: int, padding: int) -> Tensor:
    """Transposed convolution: adjoint of :func:`conv2d` with respect to its input."""
    w_shape = weight.shape

    def bw(h):
        gg = conv2d(h, weight, None, stride, dilation, padding) if g.requires_grad else None
        gw = conv2d_weight_grad(h, g, w_shape, stride, dilation, padding) if weight.requires_grad else None
        return gg, gw

    data = _conv_input_grad(g.data, weight.data, in_shape, stride, dilation, padding)
    return Tensor._from_op(data, "conv2d_input_grad", (g, weight), bw)


def conv2d_weight_grad(x: Tensor, g: Tensor, w_shape, stride: int, dilation: int, padding: int) -> Tensor:
    """Correlation of input and output gradient: adjoint of :func:`conv2d` in its weight."""
    in_shape = x.shape

    def bw(v):
        gx = conv2d_input_grad(g, v, in_shape, stride, dilation, padding) if x.requires_grad else None
        gg = conv2d(x, v, None, stride, dilation, padding) if g.requires_grad else None
        return gx, gg

    data = _conv_weight_grad(x.data, g.data, w_shape, stride, dilation, padding)
    return Tensor._from_op(data, "conv2d_weight_grad", (x, g), bw)


def conv_transpose2d(x: Tensor, weight: Tensor, stride: int = 1, dilation: int = 1, padding: int = 0,
                     output_size: tuple[int, int] | None = None) -> Tensor:
    """Transposed convolution with a ``(Cin, Cout, kh, kw)`` kernel (PyTorch layout)."""
    n, _, h, w = x.shape
    kh, kw = weight.shape[2:]
    if output_size is None:
        output_size = ((h - 1) * stride - 2 * padding + dilation * (kh - 1) + 1,
                       (w - 1) * stride - 2 * padding + dilation * (kw - 1) + 1)
    return conv2d_input_grad(x, weight, (n, weight.shape[1], *output_size), stride, dilation, padding)


# ---------------------------------------------------------------------------
# normalization, activations, rearrangement


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization with current-batch statistics, then affine."""
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"batch_norm2d: gamma/beta must have shape ({c},)")
    mu = T.mean(x, axis=(0, 2, 3), keepdims=True)
    xc = T.sub(x, mu)
    var = T.mean(T.mul(xc, xc), axis=(0, 2, 3), keepdims=True)
    inv = T.power(T.add(var, eps), -0.5)
    y = T.mul(xc, T.mul(inv, T.reshape(gamma, (1, c, 1, 1))))
    return T.add(y, T.reshape(beta, (1, c, 1, 1)))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError("leaky_relu slope must lie in (0, 1)")
    return T.where_const(x.data >= 0, x, slope)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``out[n, c, r*y + i, r*x + j] = in[n, c*r*r + i*r + j, y, x]``."""
    n, ch, h, w = x.shape
    if ch % (r * r):
        raise ValueError(f"pixel_shuffle: {ch} channels not divisible by r^2={r * r}")
    c = ch // (r * r)
    y = T.reshape(x, (n, c, r, r, h, w))
    y = T.transpose(y, (0, 1, 4, 2, 5, 3))
    return T.reshape(y, (n, c, h * r, w * r))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    n, c, hr, wr = x.shape
    h, w = hr // r, wr // r
    y = T.reshape(x, (n, c, h, r, w, r))
    y = T.transpose(y, (0, 1, 3, 5, 2, 4))
    return T.reshape(y, (n, c * r * r, h, w))


def _shift_max(logits: Tensor, axis: int) -> Tensor:
    return T.sub(logits, Tensor(logits.data.max(axis=axis, keepdims=True)))


def softmax(logits: Tensor, axis: int = 1) -> Tensor:
    e = T.exp(_shift_max(logits, axis))
    return T.div(e, T.sum(e, axis=axis, keepdims=True))


def log_softmax(logits: Tensor, axis: int = 1) -> Tensor:
    z = _shift_max(logits, axis)
    return T.sub(z, T.log(T.sum(T.exp(z), axis=axis, keepdims=True)))


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean per-pixel cross entropy; ``target`` holds class ids of shape (N, H, W)."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    n, c, h, w = logits.shape
    if target.shape != (n, h, w):
        raise ValueError(f"target shape {target.shape} does not match logits {logits.shape}")
    tid = target.astype(np.int64)
    if not np.array_equal(tid, target) or tid.min() < 0 or tid.max() >= c:
        raise ValueError(f"class ids must be integers in [0, {c})")
    onehot = np.zeros((n, c, h, w), dtype=logits.dtype)
    np.put_along_axis(onehot, tid[:, None], 1.0, axis=1)
    picked = T.sum(T.mul(log_softmax(logits, axis=1), Tensor(onehot)), axis=1)
    return T.neg(T.mean(picked))
