"""Uniform scalar quantization with stochastic rounding and a zero-point.

Per channel, the step is delta = (cmax - cmin) / (2^B - 1) and the integer
zero-point z is chosen so that the real value 0 maps to grid index z with
no error. After rounding z, cmin/cmax are re-anchored onto the grid
(cmin = -z * delta) and stored as float32 so that encoder and decoder
derive bit-identical reconstruction values from the serialized spec.

Rounding rules (fixed for cross-platform reproducibility):
  * deterministic mode (inference): half away from zero
  * stochastic mode (training):  q = floor(c/delta + u) + z with
    u ~ Uniform[0, 1), i.e. noise of width one bin; equivalently
    Round((c + eps)/delta) + z with eps ~ Uniform[-delta/2, delta/2) and
    the measure-zero half-tie resolved upward.  This keeps quantization of
    exact zero noise-free for every draw and makes the rounded value an
    unbiased estimate of c/delta.

Channels with cmax == cmin degenerate to a single literal value
(delta == 0 flags this), bypassing the step formula.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_BITS, MAX_BITS = 1, 8


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.trunc(x + np.copysign(0.5, x))


def _check_bits(bits: int):
    if not (MIN_BITS <= int(bits) <= MAX_BITS):
        raise ValueError(f"bit depth must be in [{MIN_BITS}, {MAX_BITS}], got {bits}")


@dataclass(frozen=True)
class QuantSpec:
    bits: int
    delta: float  # 0.0 marks a constant channel
    zero_point: int
    cmin: float
    cmax: float

    def __post_init__(self):
        _check_bits(self.bits)
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not self.is_constant and not (0 <= self.zero_point <= self.qmax):
            raise ValueError(
                f"zero_point {self.zero_point} outside [0, {self.qmax}]"
            )
        if self.cmax < self.cmin:
            raise ValueError("cmax < cmin")

    @property
    def qmax(self) -> int:
        return (1 << self.bits) - 1

    @property
    def is_constant(self) -> bool:
        return self.delta == 0.0


@dataclass
class QuantizedChannel:
    values: np.ndarray  # integer grid indices in [0, 2^B - 1]
    spec: QuantSpec

    def __post_init__(self):
        if not self.spec.is_constant and (
            self.values.min(initial=0) < 0
            or self.values.max(initial=0) > self.spec.qmax
        ):
            raise ValueError("quantized values outside representable range")


def derive_spec(channel: np.ndarray, bits: int) -> QuantSpec:
    """Compute the per-channel quantizer grid from the channel extrema."""
    _check_bits(bits)
    if channel.size == 0:
        raise ValueError("cannot derive a quantizer spec from an empty channel")
    if not np.all(np.isfinite(channel)):
        raise ValueError("channel contains non-finite values")
    cmin = float(channel.min())
    cmax = float(channel.max())
    if cmax == cmin:
        v = float(np.float32(cmin))
        return QuantSpec(bits, 0.0, 0, v, v)
    qmax = (1 << bits) - 1
    delta0 = (cmax - cmin) / qmax
    zbar = -cmin / delta0
    z = int(np.clip(round_half_away(np.float64(zbar)), 0, qmax))
    lo = float(np.float32(-z * delta0))
    hi = float(np.float32(-z * delta0 + delta0 * qmax))
    if hi == lo:  # float32 underflow of a microscopic range
        return QuantSpec(bits, 0.0, 0, lo, lo)
    return QuantSpec(bits, (hi - lo) / qmax, z, lo, hi)


def quantize_deterministic(channel: np.ndarray, spec: QuantSpec) -> QuantizedChannel:
    """Noise-free quantization (the inference / bitstream path)."""
    if spec.is_constant:
        return QuantizedChannel(np.zeros(channel.shape, dtype=np.uint8), spec)
    q = round_half_away(np.asarray(channel, dtype=np.float64) / spec.delta)
    q = np.clip(q + spec.zero_point, 0, spec.qmax)
    return QuantizedChannel(q.astype(np.uint8), spec)


def quantize_stochastic(
    channel: np.ndarray, spec: QuantSpec, rng_seed: int
) -> QuantizedChannel:
    """Stochastically rounded quantization, reproducible for a given seed."""
    if spec.is_constant:
        return QuantizedChannel(np.zeros(channel.shape, dtype=np.uint8), spec)
    rng = np.random.default_rng(rng_seed)
    u = rng.random(channel.shape)
    q_pre = np.floor(np.asarray(channel, dtype=np.float64) / spec.delta + u)
    q = np.clip(q_pre + spec.zero_point, 0, spec.qmax)
    return QuantizedChannel(q.astype(np.uint8), spec)


def dequantize(q: QuantizedChannel) -> np.ndarray:
    """Exact affine reconstruction delta * (q - z)."""
    if q.spec.is_constant:
        return np.full(q.values.shape, q.spec.cmin, dtype=np.float64)
    return q.spec.delta * (q.values.astype(np.float64) - q.spec.zero_point)


def ste_backward(
    output_grad: np.ndarray, clamp_mask: np.ndarray | None = None
) -> np.ndarray:
    """Straight-through gradient: identity, optionally zeroing clamped slots."""
    if clamp_mask is None:
        return output_grad
    if clamp_mask.shape != output_grad.shape:
        raise ValueError(
            f"clamp mask shape {clamp_mask.shape} != grad shape {output_grad.shape}"
        )
    return np.where(clamp_mask, 0.0, output_grad)


# --- batched training path ---------------------------------------------------


def quantize_dequantize_batch(
    code: np.ndarray,
    bits: int,
    rng: np.random.Generator | None = None,
):
    """Quantize-dequantize every (sample, channel) plane of a code map batch.

    Specs are derived per plane exactly as `derive_spec` does. Passing an rng
    selects stochastic rounding (one uniform draw per element); None selects
    the deterministic path. Returns (dequantized float64 array, clamp mask).
    """
    _check_bits(bits)
    if code.ndim != 4:
        raise ValueError(f"expected N x C x H x W code map, got {code.shape}")
    qmax = (1 << bits) - 1
    c64 = np.asarray(code, dtype=np.float64)
    cmin = c64.min(axis=(2, 3))
    cmax = c64.max(axis=(2, 3))
    flat = cmax == cmin
    delta0 = np.where(flat, 1.0, (cmax - cmin) / qmax)
    z = np.clip(round_half_away(-cmin / delta0), 0, qmax)
    lo = (-z * delta0).astype(np.float32).astype(np.float64)
    hi = (-z * delta0 + delta0 * qmax).astype(np.float32).astype(np.float64)
    flat |= hi == lo
    delta = np.where(flat, 1.0, (hi - lo) / qmax)

    d4 = delta[:, :, None, None]
    z4 = z[:, :, None, None]
    if rng is None:
        q_pre = round_half_away(c64 / d4) + z4
    else:
        q_pre = np.floor(c64 / d4 + rng.random(c64.shape)) + z4
    q = np.clip(q_pre, 0, qmax)
    mask = q_pre != q
    deq = d4 * (q - z4)
    if np.any(flat):
        f4 = flat[:, :, None, None]
        literal = cmin.astype(np.float32).astype(np.float64)[:, :, None, None]
        deq = np.where(f4, literal, deq)
        mask = mask & ~f4
    return deq, mask
