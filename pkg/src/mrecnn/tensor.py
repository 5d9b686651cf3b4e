"""Dense float32 tensors and the forward/backward kernels used by the networks.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 laid out as
(batch, channel, height, width). Every kernel allocates its output and never
mutates its arguments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


def as_tensor(x, ndim: int | None = None, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=DTYPE)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"{name}: rank must be 1..4, got {arr.ndim}")
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name}: expected rank {ndim}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvParams:
    weights: np.ndarray  # out_channels x in_channels x kh x kw
    bias: np.ndarray  # out_channels
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        w = as_tensor(self.weights, 4, "weights")
        b = as_tensor(self.bias, 1, "bias")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(
                f"bias length {b.shape[0]} != out_channels {w.shape[0]}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.pad < 0:
            raise ValueError(f"pad must be >= 0, got {self.pad}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"non-integral output extent: ({size} + 2*{pad} - {k}) / {stride} + 1")
    return span // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int,
            oh: int, ow: int) -> np.ndarray:
    """Return windows as an (N, OH, OW, C*kh*kw) array (float64)."""
    n, c, _, _ = x.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, oh, ow, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )
    return win.reshape(n, oh, ow, c * kh * kw)


def _check_conv_input(x: np.ndarray, params: ConvParams) -> tuple[int, int]:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be NCHW, got shape {x.shape}")
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"channel dimension: input has {x.shape[1]} channels, "
            f"weights expect {params.in_channels}")
    kh, kw = params.kernel_size
    oh = conv_output_size(x.shape[2], kh, params.stride, params.pad)
    ow = conv_output_size(x.shape[3], kw, params.stride, params.pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"output extent {oh}x{ow} is not positive")
    return oh, ow


def conv2d_forward(x, params: ConvParams) -> np.ndarray:
    """2-D cross-correlation via im2col, accumulated in float64."""
    x = as_tensor(x, 4)
    oh, ow = _check_conv_input(x, params)
    kh, kw = params.kernel_size
    cols = _im2col(x, kh, kw, params.stride, params.pad, oh, ow)
    wmat = params.weights.reshape(params.out_channels, -1).astype(np.float64)
    out = cols @ wmat.T + params.bias.astype(np.float64)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)).astype(DTYPE)


def conv2d_backward(x, params: ConvParams, grad_out):
    """Gradients of ``sum(grad_out * conv2d_forward(x, params))``.

    Returns ``(grad_input, grad_weights, grad_bias)``.
    """
    x = as_tensor(x, 4)
    oh, ow = _check_conv_input(x, params)
    g = as_tensor(grad_out, 4, "grad_out")
    expected = (x.shape[0], params.out_channels, oh, ow)
    if g.shape != expected:
        raise ShapeError(f"grad_out shape {g.shape} != forward output shape {expected}")
    n, c, h, w = x.shape
    kh, kw = params.kernel_size
    s, p = params.stride, params.pad

    g64 = g.astype(np.float64).transpose(0, 2, 3, 1).reshape(-1, params.out_channels)
    cols = _im2col(x, kh, kw, s, p, oh, ow).reshape(-1, c * kh * kw)
    grad_w = (g64.T @ cols).reshape(params.weights.shape)
    grad_b = g64.sum(axis=0)

    wmat = params.weights.reshape(params.out_channels, -1).astype(np.float64)
    dcols = (g64 @ wmat).reshape(n, oh, ow, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, p:p + h, p:p + w]
    return dx.astype(DTYPE), grad_w.astype(DTYPE), grad_b.astype(DTYPE)


@dataclass(frozen=True)
class PoolIndex:
    """Winning window position (0..3, row-major) for every pooled element."""
    argmax: np.ndarray
    input_shape: tuple[int, ...]


def maxpool2x2_forward(x) -> tuple[np.ndarray, PoolIndex]:
    x = as_tensor(x, 4)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 pooling needs even spatial extents, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    # argmax returns the first maximum in row-major window order
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), PoolIndex(idx, x.shape)


def maxpool2x2_backward(index: PoolIndex, grad_out, input_shape=None) -> np.ndarray:
    g = as_tensor(grad_out, 4, "grad_out")
    if input_shape is not None and tuple(input_shape) != tuple(index.input_shape):
        raise ShapeError(
            f"index map was recorded for input {index.input_shape}, not {tuple(input_shape)}")
    if g.shape != index.argmax.shape:
        raise ShapeError(
            f"grad_out shape {g.shape} does not match pooled shape {index.argmax.shape}")
    n, c, h, w = index.input_shape
    win = np.zeros((n, c, h // 2, w // 2, 4), dtype=DTYPE)
    np.put_along_axis(win, index.argmax[..., None], g[..., None], axis=-1)
    out = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(out.reshape(n, c, h, w))


def relu(x) -> np.ndarray:
    x = as_tensor(x)
    return np.maximum(x, DTYPE(0))


def relu_backward(x, grad_out) -> np.ndarray:
    # subgradient at exactly 0 is taken as 0
    x = as_tensor(x)
    g = as_tensor(grad_out, name="grad_out")
    if g.shape != x.shape:
        raise ShapeError(f"grad_out shape {g.shape} != input shape {x.shape}")
    return np.where(x > 0, g, DTYPE(0))


def flatten(x) -> np.ndarray:
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1)


def linear_forward(x, weights, bias) -> np.ndarray:
    x, weights, bias = as_tensor(x, 2), as_tensor(weights, 2, "weights"), as_tensor(bias, 1, "bias")
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"inner dimension: input has {x.shape[1]} features, weights expect {weights.shape[0]}")
    if bias.shape[0] != weights.shape[1]:
        raise ShapeError(f"bias length {bias.shape[0]} != output width {weights.shape[1]}")
    out = x.astype(np.float64) @ weights.astype(np.float64) + bias
    return out.astype(DTYPE)


def linear_backward(x, weights, grad_out):
    """Return ``(grad_input, grad_weights, grad_bias)`` for ``x @ W + b``."""
    x, weights = as_tensor(x, 2), as_tensor(weights, 2, "weights")
    g = as_tensor(grad_out, 2, "grad_out")
    if x.shape[1] != weights.shape[0] or g.shape != (x.shape[0], weights.shape[1]):
        raise ShapeError(
            f"linear_backward: input {x.shape}, weights {weights.shape}, grad_out {g.shape}")
    g64 = g.astype(np.float64)
    dx = g64 @ weights.astype(np.float64).T
    dw = x.astype(np.float64).T @ g64
    return dx.astype(DTYPE), dw.astype(DTYPE), g64.sum(axis=0).astype(DTYPE)


def concat_channels(a, b) -> np.ndarray:
    a, b = as_tensor(a, 4, "a"), as_tensor(b, 4, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"cannot concatenate {a.shape} and {b.shape}: batch/spatial extents differ")
    return np.concatenate([a, b], axis=1)


def split_channels(grad_out, channels_a: int) -> tuple[np.ndarray, np.ndarray]:
    g = as_tensor(grad_out, 4, "grad_out")
    if not 0 <= channels_a <= g.shape[1]:
        raise ShapeError(f"split point {channels_a} outside 0..{g.shape[1]}")
    return g[:, :channels_a].copy(), g[:, channels_a:].copy()


def softmax(logits) -> np.ndarray:
    z = as_tensor(logits, 2, "logits")
    if z.shape[1] < 1:
        raise ShapeError("softmax needs at least one class")
    z64 = z.astype(np.float64)
    e = np.exp(z64 - z64.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)).astype(DTYPE)
