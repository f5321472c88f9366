"""Convolution layers, the im2col matrix view and reference forward passes.

Layout conventions used throughout the package:

* activations are ``(N, c, H, W)`` float32 arrays;
* regular weights are ``(n, c, kh, kw)``;
* im2col columns are ordered channel-major, then kernel row, then kernel
  column, so column ``(i * kh + a) * kw + b`` holds input channel ``i`` at
  kernel offset ``(a, b)``. The weight matrix matching that order is
  :func:`weight_matrix`, shape ``(c*kh*kw, n)``.

All kernels accumulate in float64 and store float32.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

Pair = Tuple[int, int]


def _pair(value, name, minimum):
    if np.isscalar(value):
        value = (value, value)
    value = tuple(int(v) for v in value)
    if len(value) != 2 or min(value) < minimum:
        raise ShapeError(f"{name} must be a pair of integers >= {minimum}, got {value}")
    return value


def _bias(bias, n):
    if bias is None:
        return None
    bias = np.ascontiguousarray(bias, dtype=np.float32)
    if bias.shape != (n,):
        raise ShapeError(f"bias must have shape ({n},), got {bias.shape}")
    return bias


@dataclass(frozen=True, eq=False)
class RegularConvLayer:
    weights: np.ndarray
    stride: Pair = (1, 1)
    padding: Pair = (0, 0)
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float32)
        if w.ndim != 4 or min(w.shape) < 1:
            raise ShapeError(f"regular weights must be (n, c, kh, kw) with positive extents, got {w.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "stride", _pair(self.stride, "stride", 1))
        object.__setattr__(self, "padding", _pair(self.padding, "padding", 0))
        object.__setattr__(self, "bias", _bias(self.bias, w.shape[0]))

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return self.weights.shape[2], self.weights.shape[3]

    def flops_per_position(self):
        n, c, kh, kw = self.weights.shape
        return n * c * kh * kw


@dataclass(frozen=True, eq=False)
class SeparableConvLayer:
    """Depthwise stage ``(c, kh, kw)`` followed by pointwise ``(n, c)``.

    Stride and padding belong to the depthwise stage; the bias is added after
    the pointwise stage.
    """

    depthwise: np.ndarray
    pointwise: np.ndarray
    stride: Pair = (1, 1)
    padding: Pair = (0, 0)
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.ascontiguousarray(self.depthwise, dtype=np.float32)
        p = np.ascontiguousarray(self.pointwise, dtype=np.float32)
        if d.ndim != 3 or min(d.shape) < 1:
            raise ShapeError(f"depthwise weights must be (c, kh, kw), got {d.shape}")
        if p.ndim != 2 or min(p.shape) < 1:
            raise ShapeError(f"pointwise weights must be (n, c), got {p.shape}")
        if p.shape[1] != d.shape[0]:
            raise ShapeError(
                f"pointwise has {p.shape[1]} input channels but depthwise has {d.shape[0]}"
            )
        object.__setattr__(self, "depthwise", d)
        object.__setattr__(self, "pointwise", p)
        object.__setattr__(self, "stride", _pair(self.stride, "stride", 1))
        object.__setattr__(self, "padding", _pair(self.padding, "padding", 0))
        object.__setattr__(self, "bias", _bias(self.bias, p.shape[0]))

    @property
    def out_channels(self):
        return self.pointwise.shape[0]

    @property
    def in_channels(self):
        return self.depthwise.shape[0]

    @property
    def kernel(self):
        return self.depthwise.shape[1], self.depthwise.shape[2]

    def flops_per_position(self):
        c, kh, kw = self.depthwise.shape
        return c * kh * kw + self.out_channels * c


def as_activation(x):
    x = np.asarray(x)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ShapeError(f"activations must be (N, c, H, W) with positive extents, got {x.shape}")
    return np.ascontiguousarray(x, dtype=np.float32)


def output_hw(hw, kernel, stride, padding):
    """Spatial output extent, or ShapeError when it would be < 1."""
    out = []
    for size, k, s, p in zip(hw, kernel, stride, padding):
        span = size + 2 * p - k
        if span < 0:
            raise ShapeError(f"kernel {kernel} does not fit input {tuple(hw)} with padding {padding}")
        out.append(span // s + 1)
    return tuple(out)


def weight_matrix(weights):
    """Reshape ``(n, c, kh, kw)`` weights to the ``(c*kh*kw, n)`` im2col matrix."""
    n = weights.shape[0]
    return np.asarray(weights).reshape(n, -1).T


def weights_from_matrix(matrix, c, kh, kw):
    """Inverse of :func:`weight_matrix`."""
    matrix = np.asarray(matrix)
    return np.ascontiguousarray(matrix.T.reshape(matrix.shape[1], c, kh, kw), dtype=np.float32)


def im2col(x, kh, kw, stride=1, pad=0):
    """Rows are output positions (image, row, col); columns follow the module ordering."""
    x = as_activation(x)
    stride = _pair(stride, "stride", 1)
    pad = _pair(pad, "padding", 0)
    if kh < 1 or kw < 1:
        raise ShapeError(f"kernel extents must be positive, got {(kh, kw)}")
    N, c, H, W = x.shape
    Ho, Wo = output_hw((H, W), (kh, kw), stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (Ho - 1) * stride[0] + 1 : stride[0], : (Wo - 1) * stride[1] + 1 : stride[1]]
    # (N, c, Ho, Wo, kh, kw) -> (N, Ho, Wo, c, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(N * Ho * Wo, c * kh * kw)


def _to_nchw(rows, N, Ho, Wo):
    return np.ascontiguousarray(rows.reshape(N, Ho, Wo, -1).transpose(0, 3, 1, 2), dtype=np.float32)


def conv2d_reference(x, layer: RegularConvLayer):
    x = as_activation(x)
    n, c, kh, kw = layer.weights.shape
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {c}")
    Ho, Wo = output_hw(x.shape[2:], (kh, kw), layer.stride, layer.padding)
    cols = im2col(x, kh, kw, layer.stride, layer.padding).astype(np.float64)
    out = cols @ weight_matrix(layer.weights).astype(np.float64)
    if layer.bias is not None:
        out += layer.bias.astype(np.float64)
    return _to_nchw(out, x.shape[0], Ho, Wo)


def depthwise_conv(x, depthwise, stride=1, pad=0):
    """Channel ``i`` of the output sees only channel ``i`` of the input. Returns float64 rows."""
    x = as_activation(x)
    c, kh, kw = depthwise.shape
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, depthwise stage expects {c}")
    cols = im2col(x, kh, kw, stride, pad).reshape(-1, c, kh * kw).astype(np.float64)
    return np.einsum("rck,ck->rc", cols, depthwise.reshape(c, -1).astype(np.float64))


def separable_forward(x, layer: SeparableConvLayer):
    x = as_activation(x)
    c, kh, kw = layer.depthwise.shape
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {c}")
    Ho, Wo = output_hw(x.shape[2:], (kh, kw), layer.stride, layer.padding)
    mid = depthwise_conv(x, layer.depthwise, layer.stride, layer.padding)
    out = mid @ layer.pointwise.T.astype(np.float64)
    if layer.bias is not None:
        out += layer.bias.astype(np.float64)
    return _to_nchw(out, x.shape[0], Ho, Wo)


def fold_separable(layer: SeparableConvLayer) -> RegularConvLayer:
    """Exact regular equivalent: ``W[o, i] = P[o, i] * D[i]``."""
    w = layer.pointwise[:, :, None, None].astype(np.float64) * layer.depthwise[None].astype(np.float64)
    return RegularConvLayer(
        weights=w.astype(np.float32),
        stride=layer.stride,
        padding=layer.padding,
        bias=None if layer.bias is None else layer.bias.copy(),
    )


def apply_layer(x, layer):
    if isinstance(layer, SeparableConvLayer):
        return separable_forward(x, layer)
    return conv2d_reference(x, layer)
