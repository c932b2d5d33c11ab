"""Five-stage analysis (encoder) and synthesis (decoder) transforms.

Encoder stage schedule (input N x 3 x h x w, h and w divisible by 8):
  stage 0:    affine conv (3 -> n)      + normalize
  stages 1-3: stride-2 down conv (n->n) + normalize + residual block
  stage 4:    affine conv (n -> alpha_c) + normalize
yielding a code map of shape N x alpha_c x h/8 x w/8.

The decoder mirrors this with denormalize + transposed convolutions and
clamps its output to [-1, 1]. With block_variant="noRes" the residual
blocks are dropped; "ResReLU" swaps the normalization inside the blocks
for plain ReLU.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import gdn, ops
from .gdn import GdnParams, ResBlockParams
from .ops import ConvKernel, Param

BLOCK_VARIANTS = ("ResGDN", "ResReLU", "noRes")
DOWN_STAGES = 3


@dataclass
class CodecConfig:
    alpha_c: int = 8
    hidden_width: int = 64
    affine_kernel: int = 3
    resample_kernel: int = 4
    block_variant: str = "ResGDN"

    def __post_init__(self):
        if self.block_variant not in BLOCK_VARIANTS:
            raise ValueError(
                f"block_variant must be one of {BLOCK_VARIANTS}, "
                f"got {self.block_variant!r}"
            )
        if not (1 <= self.alpha_c <= 255):
            raise ValueError("alpha_c must be in [1, 255]")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be positive")
        if self.affine_kernel < 1 or self.resample_kernel < 2:
            raise ValueError("kernel sizes too small for their stride")

    @property
    def alpha(self) -> int:
        # spatial reduction factor fixed by the 3 resampling stages
        return 2 ** DOWN_STAGES

    def encoder_conv_count(self) -> int:
        blocks = 0 if self.block_variant == "noRes" else DOWN_STAGES * 2
        return 5 + blocks

    def to_dict(self) -> dict:
        return {
            "alpha_c": self.alpha_c,
            "hidden_width": self.hidden_width,
            "affine_kernel": self.affine_kernel,
            "resample_kernel": self.resample_kernel,
            "block_variant": self.block_variant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**d)

    def canonical_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in sorted(self.to_dict().items()))

    def digest(self) -> bytes:
        """16-byte architecture fingerprint embedded in checkpoints and streams."""
        return hashlib.sha256(self.canonical_text().encode()).digest()[:16]


def _init_conv(rng, in_ch, out_ch, k, stride, mode, dtype):
    fan_in = in_ch * k * k
    w = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(out_ch, in_ch, k, k))
    return Param(w.astype(dtype)), Param(np.zeros(out_ch, dtype=dtype))


def _init_norm(rng, ch, dtype):
    beta = Param(np.ones(ch, dtype=dtype))
    gamma = Param((0.1 * np.eye(ch)).astype(dtype))
    return beta, gamma


class ConvLayer:
    def __init__(self, rng, in_ch, out_ch, k, stride, mode, dtype):
        self.w, self.b = _init_conv(rng, in_ch, out_ch, k, stride, mode, dtype)
        self.stride = stride
        self.mode = mode
        self._ctx = None

    @property
    def kernel(self) -> ConvKernel:
        return ConvKernel(self.w.data, self.b.data, self.stride, self.mode)

    def forward(self, x):
        y, self._ctx = ops.conv_apply(x, self.kernel)
        return y

    def backward(self, dy):
        dx, dw, db = ops.conv_backward_ctx(dy, self._ctx, self.kernel)
        self.w.grad += dw
        self.b.grad += db
        return dx

    def params(self):
        return [("w", self.w), ("b", self.b)]


class NormLayer:
    """normalize (encoder side) or denormalize (decoder side)."""

    def __init__(self, rng, ch, inverse, dtype):
        self.beta, self.gamma = _init_norm(rng, ch, dtype)
        self.inverse = inverse
        self._x = None

    @property
    def gdn_params(self) -> GdnParams:
        return GdnParams(self.beta.data, self.gamma.data)

    def project(self):
        np.maximum(self.beta.data, gdn.BETA_FLOOR, out=self.beta.data)
        np.maximum(self.gamma.data, 0.0, out=self.gamma.data)

    def forward(self, x):
        self._x = x
        fn = gdn.igdn_forward if self.inverse else gdn.gdn_forward
        return fn(x, self.gdn_params)

    def backward(self, dy):
        fn = gdn.igdn_backward if self.inverse else gdn.gdn_backward
        dx, dbeta, dgamma = fn(dy, self._x, self.gdn_params)
        self.beta.grad += dbeta
        self.gamma.grad += dgamma
        return dx

    def params(self):
        return [("beta", self.beta), ("gamma", self.gamma)]


class ResBlockLayer:
    def __init__(self, rng, ch, k, variant, dtype):
        self.variant = variant
        self.w1, self.b1 = _init_conv(rng, ch, ch, k, 1, "affine", dtype)
        self.w2, self.b2 = _init_conv(rng, ch, ch, k, 1, "affine", dtype)
        if variant == "ResReLU":
            self.beta1 = self.gamma1 = self.beta2 = self.gamma2 = None
        else:
            self.beta1, self.gamma1 = _init_norm(rng, ch, dtype)
            self.beta2, self.gamma2 = _init_norm(rng, ch, dtype)
        self._ctx = None

    @property
    def block_params(self) -> ResBlockParams:
        norm1 = norm2 = None
        if self.variant != "ResReLU":
            norm1 = GdnParams(self.beta1.data, self.gamma1.data)
            norm2 = GdnParams(self.beta2.data, self.gamma2.data)
        return ResBlockParams(
            ConvKernel(self.w1.data, self.b1.data, 1, "affine"),
            norm1,
            ConvKernel(self.w2.data, self.b2.data, 1, "affine"),
            norm2,
            self.variant,
        )

    def forward(self, x):
        y, self._ctx = gdn.res_block_apply(x, self.block_params)
        return y

    def backward(self, dy):
        dx, grads = gdn.res_block_backward(dy, self._ctx, self.block_params)
        self.w1.grad += grads["w1"]
        self.b1.grad += grads["b1"]
        self.w2.grad += grads["w2"]
        self.b2.grad += grads["b2"]
        if self.variant != "ResReLU":
            self.beta1.grad += grads["beta1"]
            self.gamma1.grad += grads["gamma1"]
            self.beta2.grad += grads["beta2"]
            self.gamma2.grad += grads["gamma2"]
        return dx

    def project(self):
        if self.variant == "ResReLU":
            return
        for beta, gamma in ((self.beta1, self.gamma1), (self.beta2, self.gamma2)):
            np.maximum(beta.data, gdn.BETA_FLOOR, out=beta.data)
            np.maximum(gamma.data, 0.0, out=gamma.data)

    def params(self):
        out = [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]
        if self.variant != "ResReLU":
            out += [
                ("beta1", self.beta1),
                ("gamma1", self.gamma1),
                ("beta2", self.beta2),
                ("gamma2", self.gamma2),
            ]
        return out


class _Network:
    """Shared plumbing: ordered layer list with named parameters."""

    def __init__(self):
        self.layers: list[tuple[str, object]] = []

    def named_params(self):
        for lname, layer in self.layers:
            for pname, p in layer.params():
                yield f"{lname}/{pname}", p

    def named_params_prefixed(self, prefix: str):
        for name, p in self.named_params():
            yield f"{prefix}/{name}", p

    @property
    def dtype(self):
        return next(iter(self.named_params()))[1].data.dtype

    def zero_grads(self):
        for _, p in self.named_params():
            p.zero_grad()

    def project_constraints(self):
        # clamp normalization parameters back onto their feasible set
        for _, layer in self.layers:
            proj = getattr(layer, "project", None)
            if proj is not None:
                proj()

    def param_count(self) -> int:
        return sum(p.data.size for _, p in self.named_params())

    def conv_layer_count(self) -> int:
        n = 0
        for _, layer in self.layers:
            if isinstance(layer, ConvLayer):
                n += 1
            elif isinstance(layer, ResBlockLayer):
                n += 2
        return n


class Encoder(_Network):
    def __init__(self, config: CodecConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        n, ak, rk = config.hidden_width, config.affine_kernel, config.resample_kernel
        self.layers.append(
            ("stage0/conv", ConvLayer(rng, 3, n, ak, 1, "affine", dtype))
        )
        self.layers.append(("stage0/norm", NormLayer(rng, n, False, dtype)))
        for k in range(1, DOWN_STAGES + 1):
            self.layers.append(
                (f"stage{k}/conv", ConvLayer(rng, n, n, rk, 2, "down", dtype))
            )
            self.layers.append((f"stage{k}/norm", NormLayer(rng, n, False, dtype)))
            if config.block_variant != "noRes":
                self.layers.append(
                    (
                        f"stage{k}/block",
                        ResBlockLayer(rng, n, ak, config.block_variant, dtype),
                    )
                )
        self.layers.append(
            ("stage4/conv", ConvLayer(rng, n, config.alpha_c, ak, 1, "affine", dtype))
        )
        self.layers.append(("stage4/norm", NormLayer(rng, config.alpha_c, False, dtype)))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Map a normalized image batch to its code map."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected N x 3 x h x w input, got {x.shape}")
        if x.shape[2] % self.config.alpha or x.shape[3] % self.config.alpha:
            raise ValueError(
                f"spatial extents must be divisible by {self.config.alpha}, "
                f"got {x.shape[2]}x{x.shape[3]} (pad the image first)"
            )
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dcode: np.ndarray) -> np.ndarray:
        for _, layer in reversed(self.layers):
            dcode = layer.backward(dcode)
        return dcode


class Decoder(_Network):
    def __init__(self, config: CodecConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.config = config
        n, ak, rk = config.hidden_width, config.affine_kernel, config.resample_kernel
        block_variant = (
            "ResReLU" if config.block_variant == "ResReLU" else "ResIGDN"
        )
        self.layers.append(("stage0/norm", NormLayer(rng, config.alpha_c, True, dtype)))
        self.layers.append(
            ("stage0/conv", ConvLayer(rng, config.alpha_c, n, ak, 1, "affine", dtype))
        )
        for k in range(1, DOWN_STAGES + 1):
            self.layers.append((f"stage{k}/norm", NormLayer(rng, n, True, dtype)))
            self.layers.append(
                (f"stage{k}/conv", ConvLayer(rng, n, n, rk, 2, "up", dtype))
            )
            if config.block_variant != "noRes":
                self.layers.append(
                    (f"stage{k}/block", ResBlockLayer(rng, n, ak, block_variant, dtype))
                )
        self.layers.append(("stage4/norm", NormLayer(rng, n, True, dtype)))
        self.layers.append(
            ("stage4/conv", ConvLayer(rng, n, 3, ak, 1, "affine", dtype))
        )
        self._pre_clamp = None

    def forward(self, code: np.ndarray) -> np.ndarray:
        """Map a (dequantized) code map back to a [-1, 1] image batch."""
        if code.ndim != 4 or code.shape[1] != self.config.alpha_c:
            raise ValueError(
                f"expected N x {self.config.alpha_c} x H x W code map, "
                f"got {code.shape}"
            )
        x = code
        for _, layer in self.layers:
            x = layer.forward(x)
        self._pre_clamp = x
        return ops.clamp(x, -1.0, 1.0)

    def backward(self, dimage: np.ndarray) -> np.ndarray:
        d = ops.clamp_vjp(dimage, self._pre_clamp, -1.0, 1.0)
        for _, layer in reversed(self.layers):
            d = layer.backward(d)
        return d


def build_codec(config: CodecConfig, seed: int, dtype=np.float32):
    """Deterministically construct matching encoder/decoder parameter sets."""
    rng = np.random.default_rng(seed)
    return Encoder(config, rng, dtype), Decoder(config, rng, dtype)
