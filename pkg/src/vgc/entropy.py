"""Lossless coding of quantized symbol planes and small integer streams.

Plane pipeline: raster-order neighbor prediction (left, falling back to
above in the first column), residual folding onto the bounded alphabet
[0, 2^B - 1], then adaptive binary range coding of the folded value's B
bits, most significant first. Binary contexts are (previous folded value
bucketed into {0, small, large}) x (bit position), each an adaptive
Krichevsky-Trofimov counter pair.

The range coder is the byte-wise carry-counting kind: 32-bit range, 64-bit
low with a pending-0xFF cache, 16-bit probabilities. Encoder and decoder
renormalize in lockstep, so the decoder consumes exactly the bytes the
encoder produced.

Payload layout: one mode byte then the body.
  mode 0 - range-coded body
  mode 1 - raw bit-packed symbols (fallback when modeling does not pay,
           bounding every payload at raw size + 1 byte)
  mode 2 - constant plane, body is the single symbol value
An empty plane is just the mode byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecodeError

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF

MODE_CODED = 0
MODE_RAW = 1
MODE_CONST = 2

_RESCALE_AT = 4096


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def encode_bit(self, p0: int, bit: int):
        # p0 = 16-bit probability of bit == 0, in [1, 0xFFFF]
        bound = (self.range >> 16) * p0
        if bit:
            self.low += bound
            self.range -= bound
        else:
            self.range = bound
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            self.out.append((self.cache + carry) & 0xFF)
            filler = (0xFF + carry) & 0xFF
            for _ in range(self.cache_size - 1):
                self.out.append(filler)
            self.cache_size = 0
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low << 8) & _MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset
        self.range = _MASK32
        self.code = 0
        for _ in range(5):
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise DecodeError("range-coded payload truncated", offset=self.pos)
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode_bit(self, p0: int) -> int:
        bound = (self.range >> 16) * p0
        if self.code < bound:
            bit = 0
            self.range = bound
        else:
            bit = 1
            self.code -= bound
            self.range -= bound
        while self.range < _TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
        return bit


class BitModels:
    """A bank of adaptive binary contexts (KT counters)."""

    def __init__(self, n: int):
        self.c0 = [0] * n
        self.c1 = [0] * n

    def p0(self, ctx: int) -> int:
        c0, c1 = self.c0[ctx], self.c1[ctx]
        p = ((2 * c0 + 1) << 16) // (2 * (c0 + c1) + 2)
        return min(max(p, 1), 0xFFFF)

    def update(self, ctx: int, bit: int):
        if bit:
            self.c1[ctx] += 1
        else:
            self.c0[ctx] += 1
        if self.c0[ctx] + self.c1[ctx] >= _RESCALE_AT:
            self.c0[ctx] = (self.c0[ctx] + 1) >> 1
            self.c1[ctx] = (self.c1[ctx] + 1) >> 1


@dataclass
class SymbolPlane:
    width: int
    height: int
    bits: int
    symbols: np.ndarray  # (height, width) integers in [0, 2^bits - 1]

    def __post_init__(self):
        if not (1 <= self.bits <= 8):
            raise ValueError(f"bits must be in [1, 8], got {self.bits}")
        if self.symbols.shape != (self.height, self.width):
            raise ValueError(
                f"symbol array shape {self.symbols.shape} != "
                f"{(self.height, self.width)}"
            )
        if self.symbols.size and (
            self.symbols.min() < 0 or self.symbols.max() >= (1 << self.bits)
        ):
            raise ValueError(f"symbols exceed {self.bits}-bit range")


def _fold(e: int, pred: int, maxv: int) -> int:
    # bijection from residuals in [-pred, maxv - pred] onto [0, maxv]
    lim = min(pred, maxv - pred)
    mag = -e if e < 0 else e
    if mag <= lim:
        return 2 * mag - (1 if e < 0 else 0)
    if e > 0:
        return lim + e
    return lim - e


def _unfold(f: int, pred: int, maxv: int) -> int:
    lim = min(pred, maxv - pred)
    if f <= 2 * lim:
        mag = (f + 1) >> 1
        e = -mag if f & 1 else mag
    elif pred <= maxv - pred:
        e = f - lim
    else:
        e = lim - f
    return pred + e


def _bucket(prev_fold: int) -> int:
    if prev_fold == 0:
        return 0
    return 1 if prev_fold <= 2 else 2


def _predictions(sym: np.ndarray) -> np.ndarray:
    pred = np.empty_like(sym)
    pred[0, 0] = 0
    pred[1:, 0] = sym[:-1, 0]
    pred[:, 1:] = sym[:, :-1]
    return pred


def _pack_raw(flat: np.ndarray, bits: int) -> bytes:
    planes = (flat[:, None] >> np.arange(bits - 1, -1, -1)[None, :]) & 1
    return np.packbits(planes.astype(np.uint8).reshape(-1)).tobytes()


def _unpack_raw(data: bytes, count: int, bits: int, offset: int) -> np.ndarray:
    need = (count * bits + 7) // 8
    if len(data) - offset < need:
        raise DecodeError("raw plane body truncated", offset=len(data))
    arr = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    bit_stream = np.unpackbits(arr)[: count * bits].reshape(count, bits)
    weights = 1 << np.arange(bits - 1, -1, -1)
    return (bit_stream.astype(np.int64) * weights).sum(axis=1)


def encode_plane(plane: SymbolPlane) -> bytes:
    """Losslessly encode a plane; `decode_plane` inverts it bit-exactly."""
    sym = np.asarray(plane.symbols, dtype=np.int64)
    if sym.size == 0:
        return bytes([MODE_RAW])
    if sym.min() == sym.max():
        return bytes([MODE_CONST, int(sym.flat[0])])

    bits = plane.bits
    maxv = (1 << bits) - 1
    preds = _predictions(sym).reshape(-1).tolist()
    flat = sym.reshape(-1)

    models = BitModels(3 * bits)
    enc = RangeEncoder()
    prev_fold = 0
    bit_range = range(bits - 1, -1, -1)
    for s, pred in zip(flat.tolist(), preds):
        f = _fold(s - pred, pred, maxv)
        base = _bucket(prev_fold) * bits
        for pos in bit_range:
            ctx = base + pos
            bit = (f >> pos) & 1
            enc.encode_bit(models.p0(ctx), bit)
            models.update(ctx, bit)
        prev_fold = f
    coded = enc.finish()

    raw = _pack_raw(flat, bits)
    if len(raw) < len(coded):
        return bytes([MODE_RAW]) + raw
    return bytes([MODE_CODED]) + coded


def decode_plane(data: bytes, width: int, height: int, bits: int) -> SymbolPlane:
    """Bit-exact inverse of `encode_plane` for matching dimensions."""
    if len(data) < 1:
        raise DecodeError("empty plane payload", offset=0)
    mode = data[0]
    count = width * height
    if count == 0:
        return SymbolPlane(width, height, bits, np.zeros((height, width), np.int64))
    maxv = (1 << bits) - 1

    if mode == MODE_CONST:
        if len(data) < 2:
            raise DecodeError("constant plane body missing", offset=1)
        value = data[1]
        if value > maxv:
            raise DecodeError(f"constant value {value} exceeds {bits}-bit range", offset=1)
        sym = np.full((height, width), value, dtype=np.int64)
        return SymbolPlane(width, height, bits, sym)

    if mode == MODE_RAW:
        flat = _unpack_raw(data, count, bits, offset=1)
        if flat.max() > maxv:
            raise DecodeError(f"raw symbols exceed {bits}-bit range", offset=1)
        return SymbolPlane(width, height, bits, flat.reshape(height, width))

    if mode != MODE_CODED:
        raise DecodeError(f"unknown plane mode {mode}", offset=0)

    models = BitModels(3 * bits)
    dec = RangeDecoder(data, offset=1)
    out = np.empty((height, width), dtype=np.int64)
    prev_fold = 0
    bit_range = range(bits - 1, -1, -1)
    for i in range(height):
        row = out[i]
        above = out[i - 1, 0] if i else 0
        for j in range(width):
            pred = int(row[j - 1]) if j else int(above)
            base = _bucket(prev_fold) * bits
            f = 0
            for pos in bit_range:
                ctx = base + pos
                bit = dec.decode_bit(models.p0(ctx))
                models.update(ctx, bit)
                f |= bit << pos
            s = _unfold(f, pred, maxv)
            if s < 0 or s > maxv:
                raise DecodeError("decoded symbol out of range", offset=dec.pos)
            row[j] = s
            prev_fold = f
    return SymbolPlane(width, height, bits, out)


# --- signed integer streams (used by the residual-layer coefficients) --------

_PREFIX_CTXS = 16


def encode_ints(values) -> bytes:
    """Adaptive exp-Golomb coding of a signed integer sequence."""
    models = BitModels(_PREFIX_CTXS + 2)  # prefix positions + suffix + sign
    suffix_ctx = _PREFIX_CTXS
    sign_ctx = _PREFIX_CTXS + 1
    enc = RangeEncoder()
    for v in np.asarray(values, dtype=np.int64).reshape(-1).tolist():
        mag = -v if v < 0 else v
        k = mag + 1
        nbits = k.bit_length()
        for j in range(nbits - 1):
            ctx = min(j, _PREFIX_CTXS - 1)
            enc.encode_bit(models.p0(ctx), 1)
            models.update(ctx, 1)
        ctx = min(nbits - 1, _PREFIX_CTXS - 1)
        enc.encode_bit(models.p0(ctx), 0)
        models.update(ctx, 0)
        for pos in range(nbits - 2, -1, -1):
            bit = (k >> pos) & 1
            enc.encode_bit(models.p0(suffix_ctx), bit)
            models.update(suffix_ctx, bit)
        if mag:
            bit = 1 if v < 0 else 0
            enc.encode_bit(models.p0(sign_ctx), bit)
            models.update(sign_ctx, bit)
    return enc.finish()


def decode_ints(data: bytes, count: int, offset: int = 0) -> np.ndarray:
    """Inverse of `encode_ints`; returns an int64 array of length `count`."""
    models = BitModels(_PREFIX_CTXS + 2)
    suffix_ctx = _PREFIX_CTXS
    sign_ctx = _PREFIX_CTXS + 1
    dec = RangeDecoder(data, offset=offset)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        nbits = 1
        while True:
            ctx = min(nbits - 1, _PREFIX_CTXS - 1)
            bit = dec.decode_bit(models.p0(ctx))
            models.update(ctx, bit)
            if not bit:
                break
            nbits += 1
            if nbits > 63:
                raise DecodeError("integer prefix overran", offset=dec.pos)
        k = 1
        for _ in range(nbits - 1):
            bit = dec.decode_bit(models.p0(suffix_ctx))
            models.update(suffix_ctx, bit)
            k = (k << 1) | bit
        mag = k - 1
        if mag:
            bit = dec.decode_bit(models.p0(sign_ctx))
            models.update(sign_ctx, bit)
            out[i] = -mag if bit else mag
        else:
            out[i] = 0
    return out
