"""Divisive-normalization transforms and the residual blocks built on them.

The forward transforms act independently at each spatial location:

  normalize:   w_i = v_i / sqrt(beta_i + sum_j gamma_ij * v_j^2)
  denormalize: v_i = w_i * sqrt(beta_i + sum_j gamma_ij * w_j^2)

``beta`` must stay >= a small positive floor and ``gamma`` must stay
non-negative so the radicand is strictly positive; the trainer re-projects
parameters after every optimizer step and the forward passes reject
violations outright.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .ops import ConvKernel

BETA_FLOOR = 1e-6

VARIANTS = ("ResGDN", "ResIGDN", "ResReLU")


@dataclass
class GdnParams:
    beta: np.ndarray  # (C,)
    gamma: np.ndarray  # (C, C)
    epsilon_floor: float = BETA_FLOOR

    def validate(self):
        if self.beta.ndim != 1 or self.gamma.shape != (self.beta.size, self.beta.size):
            raise ValueError(
                f"inconsistent parameter shapes: beta {self.beta.shape}, "
                f"gamma {self.gamma.shape}"
            )
        if np.any(self.beta < self.epsilon_floor):
            raise ValueError(
                f"beta below positivity floor {self.epsilon_floor} "
                f"(min {self.beta.min()})"
            )
        if np.any(self.gamma < 0):
            raise ValueError(f"gamma has negative entries (min {self.gamma.min()})")

    @property
    def channels(self) -> int:
        return self.beta.size


def _check_channels(x: np.ndarray, p: GdnParams):
    p.validate()
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ValueError(
            f"input shape {x.shape} incompatible with {p.channels}-channel params"
        )


def _radicand(x: np.ndarray, p: GdnParams) -> np.ndarray:
    x2 = x * x
    s = np.einsum("ij,njhw->nihw", p.gamma, x2, optimize=True)
    return s + p.beta[None, :, None, None]


def gdn_forward(v: np.ndarray, p: GdnParams) -> np.ndarray:
    _check_channels(v, p)
    return v / np.sqrt(_radicand(v, p))


def gdn_backward(output_grad: np.ndarray, saved_v: np.ndarray, p: GdnParams):
    """Returns (v_grad, beta_grad, gamma_grad)."""
    _check_channels(saved_v, p)
    if output_grad.shape != saved_v.shape:
        raise ValueError(
            f"output_grad shape {output_grad.shape} != input shape {saved_v.shape}"
        )
    s = _radicand(saved_v, p)
    t = output_grad * saved_v * s ** -1.5
    dv = output_grad / np.sqrt(s) - saved_v * np.einsum(
        "ij,nihw->njhw", p.gamma, t, optimize=True
    )
    dbeta = -0.5 * t.sum(axis=(0, 2, 3))
    dgamma = -0.5 * np.einsum(
        "nihw,njhw->ij", t, saved_v * saved_v, optimize=True
    )
    return dv, dbeta, dgamma


def igdn_forward(w: np.ndarray, p: GdnParams) -> np.ndarray:
    _check_channels(w, p)
    return w * np.sqrt(_radicand(w, p))


def igdn_backward(output_grad: np.ndarray, saved_w: np.ndarray, p: GdnParams):
    """Returns (w_grad, beta_grad, gamma_grad)."""
    _check_channels(saved_w, p)
    if output_grad.shape != saved_w.shape:
        raise ValueError(
            f"output_grad shape {output_grad.shape} != input shape {saved_w.shape}"
        )
    s = _radicand(saved_w, p)
    r = np.sqrt(s)
    u = output_grad * saved_w / r
    dw = output_grad * r + saved_w * np.einsum(
        "ij,nihw->njhw", p.gamma, u, optimize=True
    )
    dbeta = 0.5 * u.sum(axis=(0, 2, 3))
    dgamma = 0.5 * np.einsum("nihw,njhw->ij", u, saved_w * saved_w, optimize=True)
    return dw, dbeta, dgamma


# --- residual blocks ---------------------------------------------------------


@dataclass
class ResBlockParams:
    """Shortcut block: output = T(u) + u.

    T per variant:
      ResGDN  - (affine conv -> normalize) twice
      ResIGDN - (denormalize -> affine conv) twice
      ResReLU - (affine conv -> relu) twice; norm params unused
    """

    conv1: ConvKernel
    norm1: GdnParams | None
    conv2: ConvKernel
    norm2: GdnParams | None
    variant: str

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown block variant {self.variant!r}")
        for k in (self.conv1, self.conv2):
            if k.mode != "affine":
                raise ValueError("residual block convolutions must be affine")
            if k.in_channels != k.out_channels:
                raise ValueError(
                    f"residual block convs must preserve channel count, got "
                    f"{k.in_channels}->{k.out_channels}"
                )
        if self.conv1.in_channels != self.conv2.in_channels:
            raise ValueError("both block convs must share the channel width")
        if self.variant != "ResReLU" and (self.norm1 is None or self.norm2 is None):
            raise ValueError(f"{self.variant} block requires normalization params")

    @property
    def channels(self) -> int:
        return self.conv1.in_channels


def res_block_apply(u: np.ndarray, p: ResBlockParams):
    """Forward pass returning (output, saved context for the backward)."""
    p.validate()
    if u.ndim != 4 or u.shape[1] != p.channels:
        raise ValueError(
            f"input shape {u.shape} incompatible with {p.channels}-wide block"
        )
    ctx = {"u": u}
    if p.variant == "ResGDN":
        a, k1 = ops.conv_apply(u, p.conv1)
        b = gdn_forward(a, p.norm1)
        c, k2 = ops.conv_apply(b, p.conv2)
        t = gdn_forward(c, p.norm2)
    elif p.variant == "ResIGDN":
        a = igdn_forward(u, p.norm1)
        b, k1 = ops.conv_apply(a, p.conv1)
        c = igdn_forward(b, p.norm2)
        t, k2 = ops.conv_apply(c, p.conv2)
    else:  # ResReLU
        a, k1 = ops.conv_apply(u, p.conv1)
        b = ops.relu(a)
        c, k2 = ops.conv_apply(b, p.conv2)
        t = ops.relu(c)
    ctx.update(a=a, b=b, c=c, k1=k1, k2=k2)
    return t + u, ctx


def res_block_forward(u: np.ndarray, p: ResBlockParams) -> np.ndarray:
    return res_block_apply(u, p)[0]


def res_block_backward(output_grad: np.ndarray, ctx: dict, p: ResBlockParams):
    """Returns (input_grad, grads) where grads has keys
    w1, b1, w2, b2 and, for normalized variants, beta1, gamma1, beta2, gamma2.
    """
    u, a, b, c = ctx["u"], ctx["a"], ctx["b"], ctx["c"]
    k1, k2 = ctx["k1"], ctx["k2"]
    g = output_grad
    grads = {}
    if p.variant == "ResGDN":
        dc, grads["beta2"], grads["gamma2"] = gdn_backward(g, c, p.norm2)
        db_, grads["w2"], grads["b2"] = ops.conv_backward_ctx(dc, k2, p.conv2)
        da, grads["beta1"], grads["gamma1"] = gdn_backward(db_, a, p.norm1)
        du, grads["w1"], grads["b1"] = ops.conv_backward_ctx(da, k1, p.conv1)
    elif p.variant == "ResIGDN":
        dc, grads["w2"], grads["b2"] = ops.conv_backward_ctx(g, k2, p.conv2)
        db_, grads["beta2"], grads["gamma2"] = igdn_backward(dc, b, p.norm2)
        da, grads["w1"], grads["b1"] = ops.conv_backward_ctx(db_, k1, p.conv1)
        du, grads["beta1"], grads["gamma1"] = igdn_backward(da, u, p.norm1)
    else:
        dc = ops.relu_vjp(g, c)
        db_, grads["w2"], grads["b2"] = ops.conv_backward_ctx(dc, k2, p.conv2)
        da = ops.relu_vjp(db_, a)
        du, grads["w1"], grads["b1"] = ops.conv_backward_ctx(da, k1, p.conv1)
    return du + output_grad, grads
