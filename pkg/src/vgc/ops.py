"""Dense NCHW tensor operations with hand-written backward passes.

Activations are plain ``numpy.ndarray`` in (batch, channels, height, width)
layout; learned parameters carry an explicit gradient buffer via `Param`.
Every forward here has a matching backward that is checked against central
finite differences in the test suite.

Convolution geometry:
  * ``affine``  - stride 1, zero-padded so spatial extent is preserved
  * ``down``    - stride 2, exactly halves H and W (even extents required)
  * ``up``      - stride 2 transposed convolution, exactly doubles H and W
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MODES = ("affine", "down", "up")


@dataclass
class Param:
    """A learnable array plus its accumulated gradient."""

    data: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        if self.grad.shape != self.data.shape:
            raise ValueError(
                f"grad shape {self.grad.shape} != data shape {self.data.shape}"
            )

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass
class ConvKernel:
    """Convolution weights (out_ch, in_ch, kh, kw) + bias (out_ch,)."""

    weights: np.ndarray
    bias: np.ndarray
    stride: int
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown conv mode {self.mode!r}, expected {MODES}")
        if self.weights.ndim != 4:
            raise ValueError(f"weights must be 4-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match out_ch "
                f"{self.weights.shape[0]}"
            )
        if self.mode == "affine" and self.stride != 1:
            raise ValueError("affine convolution requires stride 1")
        if self.mode in ("down", "up") and self.stride != 2:
            raise ValueError(f"{self.mode} convolution requires stride 2")
        kh, kw = self.weights.shape[2:]
        if kh < self.stride or kw < self.stride:
            raise ValueError("kernel extent must be >= stride")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


def _pad_amounts(k: int, stride: int) -> tuple[int, int]:
    # total padding chosen so output extent is exactly input/stride
    total = k - stride
    before = total // 2
    return before, total - before


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    """Padded sliding windows flattened for one matmul per convolution."""
    n, c, h, wd = x.shape
    ph = _pad_amounts(kh, stride)
    pw = _pad_amounts(kw, stride)
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * oh * ow, c * kh * kw), oh, ow


def _corr2d(
    x: np.ndarray, w: np.ndarray, stride: int, cols=None
) -> np.ndarray:
    """Strided cross-correlation, padded so out extent = in extent / stride."""
    n = x.shape[0]
    o, _, kh, kw = w.shape
    if cols is None:
        cols, oh, ow = _im2col(x, kh, kw, stride)
    else:
        cols, oh, ow = cols
    y = cols @ w.reshape(o, -1).T
    return y.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)


def _corr2d_input_grad(
    dy: np.ndarray, w: np.ndarray, stride: int, in_h: int, in_w: int
) -> np.ndarray:
    """Adjoint of `_corr2d` with respect to its input (col2im scatter)."""
    n, o, oh, ow = dy.shape
    _, c, kh, kw = w.shape
    if stride == 1 and (oh, ow) == (in_h, in_w):
        # stride-1 adjoint is itself a same-padded correlation with the
        # spatially flipped, channel-swapped kernel; only exact when the
        # flipped padding matches, i.e. for odd kernels
        pb = _pad_amounts(kh, 1)[0]
        qb = _pad_amounts(kw, 1)[0]
        if (kh - 1 - pb, kw - 1 - qb) == (pb, qb):
            wt = np.ascontiguousarray(
                np.swapaxes(w, 0, 1)[:, :, ::-1, ::-1]
            )
            return _corr2d(dy, wt, 1)
    ph = _pad_amounts(kh, stride)
    pw = _pad_amounts(kw, stride)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
    dcols = dy_mat @ w.reshape(o, -1)
    dcols = dcols.reshape(n, oh, ow, c, kh, kw)
    dxp = np.zeros((n, c, in_h + ph[0] + ph[1], in_w + pw[0] + pw[1]), dtype=dy.dtype)
    for di in range(kh):
        for dj in range(kw):
            dxp[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride] += (
                dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
            )
    return dxp[:, :, ph[0] : ph[0] + in_h, pw[0] : pw[0] + in_w]


def _corr2d_weight_grad(
    x: np.ndarray, dy: np.ndarray, stride: int, kh: int, kw: int, cols=None
) -> np.ndarray:
    c = x.shape[1]
    n, o, oh, ow = dy.shape
    if cols is None:
        cols, _, _ = _im2col(x, kh, kw, stride)
    else:
        cols = cols[0]
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
    return (dy_mat.T @ cols).reshape(o, c, kh, kw)


def _check_input(x: np.ndarray, kernel: ConvKernel):
    if x.ndim != 4:
        raise ValueError(f"input must be 4-D NCHW, got shape {x.shape}")
    if x.shape[1] != kernel.in_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels but kernel expects "
            f"{kernel.in_channels}"
        )
    if kernel.mode == "down" and (x.shape[2] % 2 or x.shape[3] % 2):
        raise ValueError(
            f"down-sampling convolution requires even spatial extents, "
            f"got {x.shape[2]}x{x.shape[3]}"
        )


def conv_apply(x: np.ndarray, kernel: ConvKernel):
    """Forward pass returning (output, context); the context lets the
    backward reuse the column matrix instead of rebuilding it."""
    _check_input(x, kernel)
    w, b, s = kernel.weights, kernel.bias, kernel.stride
    if kernel.mode == "up":
        # transposed convolution = adjoint of the matching down convolution
        v = np.swapaxes(w, 0, 1)
        y = _corr2d_input_grad(x, v, s, x.shape[2] * s, x.shape[3] * s)
        ctx = {"x": x, "cols": None}
    else:
        cols = _im2col(x, w.shape[2], w.shape[3], s)
        y = _corr2d(x, w, s, cols=cols)
        ctx = {"x": x, "cols": cols}
    return y + b[None, :, None, None], ctx


def conv_forward(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Apply `kernel` to `x`; output extent per mode (same / halved / doubled)."""
    return conv_apply(x, kernel)[0]


def conv_output_shape(in_shape, kernel: ConvKernel):
    n, c, h, w = in_shape
    if kernel.mode == "affine":
        return (n, kernel.out_channels, h, w)
    if kernel.mode == "down":
        return (n, kernel.out_channels, h // 2, w // 2)
    return (n, kernel.out_channels, h * 2, w * 2)


def conv_backward_ctx(output_grad: np.ndarray, ctx: dict, kernel: ConvKernel):
    saved_input = ctx["x"]
    _check_input(saved_input, kernel)
    expect = conv_output_shape(saved_input.shape, kernel)
    if output_grad.shape != expect:
        raise ValueError(
            f"output_grad shape {output_grad.shape} does not match conv output "
            f"{expect}"
        )
    w, s = kernel.weights, kernel.stride
    db = output_grad.sum(axis=(0, 2, 3))
    kh, kw = w.shape[2:]
    if kernel.mode == "up":
        v = np.swapaxes(w, 0, 1)
        cols_dy = _im2col(output_grad, kh, kw, s)
        dx = _corr2d(output_grad, v, s, cols=cols_dy)
        dv = _corr2d_weight_grad(output_grad, saved_input, s, kh, kw, cols=cols_dy)
        dw = np.swapaxes(dv, 0, 1)
    else:
        dx = _corr2d_input_grad(
            output_grad, w, s, saved_input.shape[2], saved_input.shape[3]
        )
        dw = _corr2d_weight_grad(saved_input, output_grad, s, kh, kw,
                                 cols=ctx["cols"])
    return dx, dw, db


def conv_backward(
    output_grad: np.ndarray, saved_input: np.ndarray, kernel: ConvKernel
):
    """Gradients of a scalar loss through `conv_forward`.

    Returns (input_grad, weight_grad, bias_grad).
    """
    return conv_backward_ctx(output_grad, {"x": saved_input, "cols": None}, kernel)


# --- elementwise suite -----------------------------------------------------
# Forward/VJP pairs for the handful of pointwise ops the transforms need.


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


def add(a, b):
    _check_same_shape(a, b, "add")
    return a + b


def add_vjp(g):
    return g, g


def mul(a, b):
    _check_same_shape(a, b, "mul")
    return a * b


def mul_vjp(g, a, b):
    return g * b, g * a


def square(x):
    return x * x


def square_vjp(g, x):
    return 2.0 * g * x


def sqrt(x):
    if np.any(x <= 0):
        raise ValueError("sqrt requires strictly positive input")
    return np.sqrt(x)


def sqrt_vjp(g, y):
    # y is the forward output sqrt(x)
    return g / (2.0 * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_vjp(g, x):
    return np.where(x > 0, g, 0.0)


def scale(x, s: float):
    return x * s


def scale_vjp(g, s: float):
    return g * s


def clamp(x, lo: float, hi: float):
    return np.clip(x, lo, hi)


def clamp_vjp(g, x, lo: float, hi: float):
    return np.where((x > lo) & (x < hi), g, 0.0)
