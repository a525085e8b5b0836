"""Differentiable primitives built on :class:`~latxgen.core.tensor.Function`.

Every op accepts Tensors (or array-likes, treated as constants) and returns a
Tensor linked into the graph when any input requires a gradient.
"""
from __future__ import annotations

from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, SpectralSizeError
from .tensor import ArrayLike, ComplexTensor, Function, Tensor, as_tensor


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


class _Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray):
        a, b = self.inputs
        return self.unbroadcast(grad, a.shape), self.unbroadcast(grad, b.shape)


class _Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray):
        a, b = self.inputs
        return self.unbroadcast(grad, a.shape), self.unbroadcast(-grad, b.shape)


class _Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a * b

    def backward(self, grad: np.ndarray):
        a, b = self.inputs
        return (
            self.unbroadcast(grad * b.data, a.shape),
            self.unbroadcast(grad * a.data, b.shape),
        )


class _Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a / b

    def backward(self, grad: np.ndarray):
        a, b = self.inputs
        return (
            self.unbroadcast(grad / b.data, a.shape),
            self.unbroadcast(-grad * a.data / (b.data * b.data), b.shape),
        )


class _Scale(Function):
    def forward(self, x: np.ndarray, *, factor: float) -> np.ndarray:
        self.factor = factor
        return x * factor

    def backward(self, grad: np.ndarray):
        return (grad * self.factor,)


class _Abs(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.abs(x)

    def backward(self, grad: np.ndarray):
        return (grad * np.sign(self.inputs[0].data),)


class _Exp(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * self.out,)


class _Log(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.log(x)

    def backward(self, grad: np.ndarray):
        return (grad / self.inputs[0].data,)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return _Add.apply(a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return _Sub.apply(a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return _Mul.apply(a, b)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    return _Div.apply(a, b)


def scale(x: ArrayLike, factor: float) -> Tensor:
    """Multiply by a Python scalar."""
    return _Scale.apply(x, factor=float(factor))


def abs(x: ArrayLike) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _Abs.apply(x)


def exp(x: ArrayLike) -> Tensor:
    return _Exp.apply(x)


def log(x: ArrayLike) -> Tensor:
    return _Log.apply(x)


def square(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _Mul.apply(x, x)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


class _LeakyRelu(Function):
    def forward(self, x: np.ndarray, *, slope: float) -> np.ndarray:
        self.slope = slope
        self.mask = x > 0
        return np.where(self.mask, x, slope * x)

    def backward(self, grad: np.ndarray):
        return (np.where(self.mask, grad, self.slope * grad),)


class _Sigmoid(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = _stable_sigmoid(x)
        return self.out

    def backward(self, grad: np.ndarray):
        return (grad * self.out * (1.0 - self.out),)


class _Softmax(Function):
    def forward(self, x: np.ndarray, *, axis: int) -> np.ndarray:
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: ArrayLike) -> Tensor:
    return _LeakyRelu.apply(x, slope=0.0)


def leaky_relu(x: ArrayLike, slope: float = 0.2) -> Tensor:
    return _LeakyRelu.apply(x, slope=float(slope))


def sigmoid(x: ArrayLike) -> Tensor:
    return _Sigmoid.apply(x)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; rows sum to 1.

    Raises:
        ShapeError: if ``axis`` is out of range.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    return _Softmax.apply(x, axis=axis % x.ndim)


# ---------------------------------------------------------------------------
# Reductions and shape manipulation
# ---------------------------------------------------------------------------


class _Sum(Function):
    def forward(self, x: np.ndarray, *, axis: Any, keepdims: bool) -> np.ndarray:
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray):
        shape = self.inputs[0].shape
        if self.axis is not None and not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            axes = tuple(a % len(shape) for a in axes)
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, shape).copy(),)


class _Reshape(Function):
    def forward(self, x: np.ndarray, *, shape: Tuple[int, ...]) -> np.ndarray:
        return x.reshape(shape)

    def backward(self, grad: np.ndarray):
        return (grad.reshape(self.inputs[0].shape),)


class _Transpose(Function):
    def forward(self, x: np.ndarray, *, axes: Tuple[int, ...]) -> np.ndarray:
        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, grad: np.ndarray):
        return (np.transpose(grad, np.argsort(self.axes)),)


class _GetItem(Function):
    def forward(self, x: np.ndarray, *, index: Any) -> np.ndarray:
        self.index = index
        return np.array(x[index])

    def backward(self, grad: np.ndarray):
        out = np.zeros(self.inputs[0].shape)
        np.add.at(out, self.index, grad)
        return (out,)


class _Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class _Pad2d(Function):
    def forward(self, x: np.ndarray, *, pads: Tuple[int, int, int, int]) -> np.ndarray:
        top, bottom, left, right = pads
        self.pads = pads
        width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
        return np.pad(x, width)

    def backward(self, grad: np.ndarray):
        top, bottom, left, right = self.pads
        h, w = grad.shape[-2:]
        return (grad[..., top : h - bottom, left : w - right].copy(),)


def sum(x: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    if isinstance(axis, list):
        axis = tuple(axis)
    return _Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, (tuple, list)) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    return _Reshape.apply(x, shape=tuple(shape))


def transpose(x: ArrayLike, axes: Sequence[int]) -> Tensor:
    return _Transpose.apply(x, axes=tuple(axes))


def getitem(x: ArrayLike, index: Any) -> Tensor:
    return _GetItem.apply(x, index=index)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return _Concat.apply(*tensors, axis=axis)


def pad2d(x: ArrayLike, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the last two dims."""
    return _Pad2d.apply(x, pads=(top, bottom, left, right))


# ---------------------------------------------------------------------------
# Contractions
# ---------------------------------------------------------------------------


class _MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray):
        a, b = self.inputs
        ga = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return self.unbroadcast(ga, a.shape), self.unbroadcast(gb, b.shape)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Batched matrix product over the last two axes.

    Raises:
        ShapeError: if either operand has rank < 2 or inner dims disagree.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimension mismatch: {a.shape[-1]} vs {b.shape[-2]}")
    return _MatMul.apply(a, b)


def linear(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``; weight is [out, in]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects last dim {weight.shape[1]}, got {x.shape[-1]}")
    out = matmul(x, transpose(weight, (1, 0)))
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


class _Conv2d(Function):
    def forward(
        self, x: np.ndarray, w: np.ndarray, b: np.ndarray, *, stride: int, padding: int
    ) -> np.ndarray:
        self.stride, self.padding = stride, padding
        kh, kw = w.shape[2:]
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        self.xp_shape = xp.shape
        self.windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.einsum("bchwij,ocij->bohw", self.windows, w, optimize=True)
        return out + b[None, :, None, None]

    def backward(self, grad: np.ndarray):
        x, w, b = self.inputs
        s, p = self.stride, self.padding
        kh, kw = w.shape[2:]
        ho, wo = grad.shape[2:]
        gw = np.einsum("bohw,bchwij->ocij", grad, self.windows, optimize=True)
        gb = grad.sum(axis=(0, 2, 3))
        gxp = np.zeros(self.xp_shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.einsum(
                    "bohw,oc->bchw", grad, w.data[:, :, i, j], optimize=True
                )
        h, wd = x.shape[2:]
        return gxp[:, :, p : p + h, p : p + wd], gw, gb


class _ConvTranspose2d(Function):
    def forward(
        self, x: np.ndarray, w: np.ndarray, b: np.ndarray, *, stride: int, padding: int
    ) -> np.ndarray:
        self.stride, self.padding = stride, padding
        bsz, _, h, wd = x.shape
        cout, (kh, kw) = w.shape[1], w.shape[2:]
        full = np.zeros((bsz, cout, (h - 1) * stride + kh, (wd - 1) * stride + kw))
        for i in range(kh):
            for j in range(kw):
                full[:, :, i : i + stride * h : stride, j : j + stride * wd : stride] += np.einsum(
                    "bchw,co->bohw", x, w[:, :, i, j], optimize=True
                )
        self.full_shape = full.shape
        hout = full.shape[2] - 2 * padding
        wout = full.shape[3] - 2 * padding
        return full[:, :, padding : padding + hout, padding : padding + wout] + b[None, :, None, None]

    def backward(self, grad: np.ndarray):
        x, w, b = self.inputs
        s, p = self.stride, self.padding
        kh, kw = w.shape[2:]
        h, wd = x.shape[2:]
        gfull = np.zeros(self.full_shape)
        gfull[:, :, p : p + grad.shape[2], p : p + grad.shape[3]] = grad
        windows = sliding_window_view(gfull, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :h, :wd]
        gx = np.einsum("bohwij,coij->bchw", windows, w.data, optimize=True)
        gw = np.einsum("bchw,bohwij->coij", x.data, windows, optimize=True)
        return gx, gw, grad.sum(axis=(0, 2, 3))


def _check_conv_shapes(x: Tensor, w: Tensor, stride: int, padding: int, in_axis: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv input must be [B,C,H,W], got rank {x.ndim}")
    if w.ndim != 4:
        raise ShapeError(f"conv weight must be rank 4, got rank {w.ndim}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if w.shape[in_axis] != x.shape[1]:
        raise ShapeError(
            f"channel dimension mismatch: input has C_in={x.shape[1]}, weight expects {w.shape[in_axis]}"
        )
    kh, kw = w.shape[2:]
    if x.shape[2] + 2 * padding < kh:
        raise ShapeError(f"kernel height {kh} exceeds padded input height {x.shape[2] + 2 * padding}")
    if x.shape[3] + 2 * padding < kw:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {x.shape[3] + 2 * padding}")


def conv2d(
    x: ArrayLike,
    weight: ArrayLike,
    bias: Optional[ArrayLike] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    Output spatial size is ``floor((H + 2*padding - kH) / stride) + 1``.

    Raises:
        ShapeError: naming the offending dimension on any mismatch.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_shapes(x, weight, stride, padding, in_axis=1)
    if bias is None:
        bias = np.zeros(weight.shape[0])
    return _Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


def conv_transpose2d(
    x: ArrayLike,
    weight: ArrayLike,
    bias: Optional[ArrayLike] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Transposed convolution; weight is [C_in, C_out, kH, kW].

    Output size is ``(H - 1)*stride - 2*padding + kH``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv_transpose2d expects rank-4 input and weight")
    if weight.shape[0] != x.shape[1]:
        raise ShapeError(
            f"channel dimension mismatch: input has C_in={x.shape[1]}, weight expects {weight.shape[0]}"
        )
    if bias is None:
        bias = np.zeros(weight.shape[1])
    return _ConvTranspose2d.apply(x, weight, bias, stride=stride, padding=padding)


# ---------------------------------------------------------------------------
# Bilinear sampling (shared by grid_sample and deform_conv2d)
# ---------------------------------------------------------------------------


def _bilinear_corners(img: np.ndarray, py: np.ndarray, px: np.ndarray):
    """Return (wy, wx, corners) for sampling ``img`` at pixel coords (py, px).

    ``py``/``px`` are [B, *S]; each corner is (values[B,C,*S], yy, xx, valid)
    with out-of-bounds taps zeroed.
    """
    bsz, _, h, w = img.shape
    y0 = np.floor(py)
    x0 = np.floor(px)
    wy = py - y0
    wx = px - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    bidx = np.arange(bsz).reshape((bsz,) + (1,) * (py.ndim - 1))
    corners = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc = np.clip(yy, 0, h - 1)
        xc = np.clip(xx, 0, w - 1)
        vals = img[bidx, :, yc, xc]  # [B, *S, C]
        vals = np.moveaxis(vals * valid[..., None], -1, 1)
        corners.append((vals, yc, xc, valid))
    return wy, wx, corners


def _bilinear_sample(img: np.ndarray, py: np.ndarray, px: np.ndarray):
    wy, wx, corners = _bilinear_corners(img, py, px)
    (v00, *_), (v01, *_), (v10, *_), (v11, *_) = corners
    wy_, wx_ = wy[:, None], wx[:, None]
    out = (1 - wy_) * (1 - wx_) * v00 + (1 - wy_) * wx_ * v01 + wy_ * (1 - wx_) * v10 + wy_ * wx_ * v11
    return out, (wy, wx, corners)


def _bilinear_backward(img_shape, py: np.ndarray, cache, gout: np.ndarray):
    """Gradients of a bilinear sample w.r.t. the image and the coordinates."""
    wy, wx, corners = cache
    bsz = img_shape[0]
    (v00, *_), (v01, *_), (v10, *_), (v11, *_) = corners
    wy_, wx_ = wy[:, None], wx[:, None]
    g_py = (gout * ((1 - wx_) * (v10 - v00) + wx_ * (v11 - v01))).sum(axis=1)
    g_px = (gout * ((1 - wy_) * (v01 - v00) + wy_ * (v11 - v10))).sum(axis=1)

    g_img = np.zeros((img_shape[0], img_shape[2], img_shape[3], img_shape[1]))
    bidx = np.arange(bsz).reshape((bsz,) + (1,) * (py.ndim - 1))
    weights = ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)
    g_last = np.moveaxis(gout, 1, -1)
    for (_, yc, xc, valid), weight in zip(corners, weights):
        contrib = g_last * (weight * valid)[..., None]
        np.add.at(g_img, (bidx, yc, xc), contrib)
    return np.moveaxis(g_img, -1, 1), g_py, g_px


class _GridSample(Function):
    def forward(self, x: np.ndarray, grid: np.ndarray) -> np.ndarray:
        h, w = x.shape[2:]
        px = ((grid[..., 0] + 1.0) * w - 1.0) / 2.0
        py = ((grid[..., 1] + 1.0) * h - 1.0) / 2.0
        self.py = py
        out, self.cache = _bilinear_sample(x, py, px)
        return out

    def backward(self, grad: np.ndarray):
        x, grid = self.inputs
        h, w = x.shape[2:]
        g_img, g_py, g_px = _bilinear_backward(x.shape, self.py, self.cache, grad)
        g_grid = np.stack([g_px * (w / 2.0), g_py * (h / 2.0)], axis=-1)
        return g_img, g_grid


def grid_sample(x: ArrayLike, grid: ArrayLike) -> Tensor:
    """Bilinear sampling of ``x`` [B,C,H,W] at ``grid`` [B,H',W',2] (x, y in [-1, 1]).

    Pixel centres follow the align_corners=False convention; reads outside the
    image return zero.
    """
    x, grid = as_tensor(x), as_tensor(grid)
    if x.ndim != 4:
        raise ShapeError(f"grid_sample input must be [B,C,H,W], got rank {x.ndim}")
    if grid.ndim != 4 or grid.shape[-1] != 2:
        raise ShapeError(f"grid must be [B,H',W',2], got {grid.shape}")
    if grid.shape[0] != x.shape[0]:
        raise ShapeError(f"batch dimension mismatch: input {x.shape[0]}, grid {grid.shape[0]}")
    return _GridSample.apply(x, grid)


def affine_grid(theta: ArrayLike, height: int, width: int) -> Tensor:
    """Sampling grid [B,H,W,2] for affine parameters ``theta`` [B,2,3]."""
    theta = as_tensor(theta)
    if theta.ndim != 3 or theta.shape[1:] != (2, 3):
        raise ShapeError(f"theta must be [B,2,3], got {theta.shape}")
    xs = (2.0 * np.arange(width) + 1.0) / width - 1.0
    ys = (2.0 * np.arange(height) + 1.0) / height - 1.0
    gx, gy = np.meshgrid(xs, ys)
    base = np.stack([gx.ravel(), gy.ravel(), np.ones(height * width)], axis=1)  # [HW,3]
    grid = matmul(base, transpose(theta, (0, 2, 1)))  # [B,HW,2]
    return reshape(grid, (theta.shape[0], height, width, 2))


class _DeformConv2d(Function):
    def forward(
        self,
        x: np.ndarray,
        w: np.ndarray,
        b: np.ndarray,
        offsets: np.ndarray,
        *,
        stride: int,
        padding: int,
    ) -> np.ndarray:
        bsz = x.shape[0]
        cout, cin, kh, kw = w.shape
        ho, wo = offsets.shape[2:]
        taps = kh * kw
        ti, tj = np.divmod(np.arange(taps), kw)
        base_y = (np.arange(ho) * stride - padding)[None, :, None] + ti[:, None, None]
        base_x = (np.arange(wo) * stride - padding)[None, None, :] + tj[:, None, None]
        off = offsets.reshape(bsz, taps, 2, ho, wo)
        self.py = base_y[None] + off[:, :, 0]
        px = base_x[None] + off[:, :, 1]
        self.cols, self.cache = _bilinear_sample(x, self.py, px)  # [B,C,K,Ho,Wo]
        self.w2 = w.reshape(cout, cin, taps)
        out = np.einsum("bckhw,ock->bohw", self.cols, self.w2, optimize=True)
        return out + b[None, :, None, None]

    def backward(self, grad: np.ndarray):
        x, w, b, offsets = self.inputs
        gcols = np.einsum("bohw,ock->bckhw", grad, self.w2, optimize=True)
        gw = np.einsum("bohw,bckhw->ock", grad, self.cols, optimize=True).reshape(w.shape)
        g_img, g_py, g_px = _bilinear_backward(x.shape, self.py, self.cache, gcols)
        g_off = np.stack([g_py, g_px], axis=2).reshape(offsets.shape)
        return g_img, gw, grad.sum(axis=(0, 2, 3)), g_off


def deform_conv2d(
    x: ArrayLike,
    weight: ArrayLike,
    offsets: ArrayLike,
    bias: Optional[ArrayLike] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Deformable convolution.

    ``offsets`` is [B, 2*kH*kW, H', W'] holding (dy, dx) per kernel tap in
    row-major tap order. Each tap reads the input bilinearly at its integer
    location plus its offset; zero offsets reproduce :func:`conv2d`.

    Raises:
        ShapeError: if the offset channel count is not 2*kH*kW or the offset
            map is not aligned with the output.
    """
    x, weight, offsets = as_tensor(x), as_tensor(weight), as_tensor(offsets)
    _check_conv_shapes(x, weight, stride, padding, in_axis=1)
    kh, kw = weight.shape[2:]
    if offsets.ndim != 4 or offsets.shape[1] != 2 * kh * kw:
        raise ShapeError(
            f"offset channel count must be 2*kH*kW={2 * kh * kw}, got {offsets.shape[1] if offsets.ndim == 4 else offsets.shape}"
        )
    ho = (x.shape[2] + 2 * padding - kh) // stride + 1
    wo = (x.shape[3] + 2 * padding - kw) // stride + 1
    if offsets.shape[0] != x.shape[0] or offsets.shape[2:] != (ho, wo):
        raise ShapeError(f"offsets must be [{x.shape[0]},{2 * kh * kw},{ho},{wo}], got {offsets.shape}")
    if bias is None:
        bias = np.zeros(weight.shape[0])
    return _DeformConv2d.apply(x, weight, bias, offsets, stride=stride, padding=padding)


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


class _BatchNorm2d(Function):
    def forward(self, x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, *, eps: float) -> np.ndarray:
        self.batch_mean = x.mean(axis=(0, 2, 3))
        self.batch_var = x.var(axis=(0, 2, 3))
        self.inv_std = 1.0 / np.sqrt(self.batch_var + eps)
        self.xhat = (x - self.batch_mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        return gamma[None, :, None, None] * self.xhat + beta[None, :, None, None]

    def backward(self, grad: np.ndarray):
        _, gamma, _ = self.inputs
        n = grad.shape[0] * grad.shape[2] * grad.shape[3]
        gxhat = grad * gamma.data[None, :, None, None]
        s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (gxhat * self.xhat).sum(axis=(0, 2, 3), keepdims=True)
        gx = self.inv_std[None, :, None, None] / n * (n * gxhat - s1 - self.xhat * s2)
        return gx, (grad * self.xhat).sum(axis=(0, 2, 3)), grad.sum(axis=(0, 2, 3))


def batchnorm2d(
    x: ArrayLike,
    gamma: ArrayLike,
    beta: ArrayLike,
    eps: float = 1e-5,
) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Training-mode batch norm over (B, H, W) per channel.

    Returns:
        Tuple of (output, batch_mean, batch_var) so callers can update running stats.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d input must be [B,C,H,W], got rank {x.ndim}")
    out = _BatchNorm2d.apply(x, gamma, beta, eps=eps)
    fn = out._creator
    if fn is None:
        mean_ = x.data.mean(axis=(0, 2, 3))
        var_ = x.data.var(axis=(0, 2, 3))
        return out, mean_, var_
    return out, fn.batch_mean, fn.batch_var


# ---------------------------------------------------------------------------
# Spectral transforms
# ---------------------------------------------------------------------------


class _SpectralPart(Function):
    """One part (real or imaginary) of fft2/ifft2 of a complex input."""

    def forward(self, re: np.ndarray, im: np.ndarray, *, inverse: bool, part: int) -> np.ndarray:
        self.inverse, self.part = inverse, part
        z = re + 1j * im
        out = np.fft.ifft2(z) if inverse else np.fft.fft2(z)
        return np.ascontiguousarray(out.real if part == 0 else out.imag)

    def backward(self, grad: np.ndarray):
        g = grad if self.part == 0 else 1j * grad
        h, w = grad.shape[-2:]
        gz = np.fft.fft2(g) / (h * w) if self.inverse else np.fft.ifft2(g) * (h * w)
        return np.ascontiguousarray(gz.real), np.ascontiguousarray(gz.imag)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _check_spectral_dims(shape: Tuple[int, ...]) -> None:
    if len(shape) < 2:
        raise ShapeError(f"fft2 needs at least 2 dims, got shape {shape}")
    h, w = shape[-2:]
    if not _is_power_of_two(h):
        raise SpectralSizeError(f"fft2 height must be a power of two, got H={h}")
    if not _is_power_of_two(w):
        raise SpectralSizeError(f"fft2 width must be a power of two, got W={w}")


def next_power_of_two(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def fft2(x: Any) -> ComplexTensor:
    """2-D DFT over the last two axes (unnormalised forward transform)."""
    if isinstance(x, ComplexTensor):
        re, im = x.real, x.imag
    else:
        re = as_tensor(x)
        im = Tensor(np.zeros(re.shape))
    _check_spectral_dims(re.shape)
    return ComplexTensor(
        _SpectralPart.apply(re, im, inverse=False, part=0),
        _SpectralPart.apply(re, im, inverse=False, part=1),
    )


def ifft2(z: ComplexTensor) -> ComplexTensor:
    """Inverse of :func:`fft2` (carries the 1/(H*W) factor)."""
    _check_spectral_dims(z.shape)
    return ComplexTensor(
        _SpectralPart.apply(z.real, z.imag, inverse=True, part=0),
        _SpectralPart.apply(z.real, z.imag, inverse=True, part=1),
    )


def ifft2_real(z: ComplexTensor) -> Tensor:
    """Real part of :func:`ifft2`; the only part the spectral transform keeps."""
    _check_spectral_dims(z.shape)
    return _SpectralPart.apply(z.real, z.imag, inverse=True, part=0)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


class _BCEWithLogits(Function):
    def forward(self, z: np.ndarray, *, target: float) -> np.ndarray:
        self.target = target
        return np.asarray(np.mean(np.maximum(z, 0) - z * target + np.log1p(np.exp(-np.abs(z)))))

    def backward(self, grad: np.ndarray):
        z = self.inputs[0].data
        return (grad * (_stable_sigmoid(z) - self.target) / z.size,)


def bce_with_logits(logits: ArrayLike, target: float) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a constant label."""
    return _BCEWithLogits.apply(logits, target=float(target))


def split_channels(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    """Split along axis 1 into consecutive chunks of the given sizes."""
    if int(np.sum(sizes)) != x.shape[1]:
        raise ShapeError(f"channel split {list(sizes)} does not cover {x.shape[1]} channels")
    out, start = [], 0
    for size in sizes:
        out.append(getitem(x, (slice(None), slice(start, start + size))))
        start += size
    return out
