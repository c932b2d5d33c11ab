"""End-to-end image <-> stream pipeline tying the pieces together.

Encoding: reflect-pad the image to a multiple of 8, run the analysis
transform, quantize each code-map channel deterministically at the chosen
bit depth, entropy-code the planes, optionally code the residual between
the input and the base reconstruction, and pack everything into the
container. Decoding inverts each step; both sides derive the dequantized
code map from the serialized float32 extrema, so they reconstruct the same
base image bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import bitstream, images, residual
from .entropy import SymbolPlane, decode_plane, encode_plane
from .errors import ConfigMismatchError
from .network import Decoder, Encoder
from .quantizer import (
    QuantizedChannel,
    dequantize,
    derive_spec,
    quantize_deterministic,
)

MIN_EXTENT = 8


def pad_to_multiple(img: np.ndarray, multiple: int = 8):
    """Reflect-pad (H, W, 3) on the bottom/right. Returns (padded, pad_h, pad_w)."""
    h, w = img.shape[:2]
    if h < MIN_EXTENT or w < MIN_EXTENT:
        raise ValueError(f"images must be at least {MIN_EXTENT}x{MIN_EXTENT}, got {h}x{w}")
    pad_h = (multiple - h % multiple) % multiple
    pad_w = (multiple - w % multiple) % multiple
    if pad_h or pad_w:
        img = np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")
    return img, pad_h, pad_w


def encode_image(
    img: np.ndarray,
    encoder: Encoder,
    decoder: Decoder,
    bits: int,
    qp: int | None = 25,
    with_enhancement: bool = True,
) -> bytes:
    """Compress an (H, W, 3) uint8 image into a container stream."""
    h, w = img.shape[:2]
    padded, pad_h, pad_w = pad_to_multiple(img)
    dtype = encoder.dtype
    x = images.to_unit(padded, dtype=dtype)[None]

    code = encoder.forward(x)[0]
    specs, payloads, deq = [], [], np.empty_like(code, dtype=np.float64)
    for i in range(code.shape[0]):
        spec = derive_spec(code[i], bits)
        q = quantize_deterministic(code[i], spec)
        plane = SymbolPlane(code.shape[2], code.shape[1], bits,
                            q.values.astype(np.int64))
        specs.append(spec)
        payloads.append(encode_plane(plane))
        deq[i] = dequantize(q)

    enh_header = None
    enh_payload = None
    if with_enhancement:
        if qp is None:
            raise ValueError("enhancement layer requested without a qp")
        recon = decoder.forward(deq[None].astype(dtype))[0]
        r = x[0].astype(np.float64) - recon.astype(np.float64)
        enh_header, enh_payload = residual.encode_residual(r, qp)

    header = bitstream.StreamHeader(
        height=h, width=w, pad_h=pad_h, pad_w=pad_w, bits=bits,
        alpha_c=encoder.config.alpha_c, config_hash=encoder.config.digest(),
        specs=specs, enhancement=enh_header,
    )
    return bitstream.write_stream(header, payloads, enh_payload)


def decode_image(data: bytes, decoder: Decoder) -> np.ndarray:
    """Decompress a container stream back to an (H, W, 3) uint8 image."""
    header, payloads, enh_payload = bitstream.read_stream(data)
    expected = decoder.config.digest()
    if header.config_hash != expected:
        raise ConfigMismatchError(
            f"stream was produced by a different architecture: stream hash "
            f"{header.config_hash.hex()}, decoder expects {expected.hex()}"
        )
    hp, wp = header.height + header.pad_h, header.width + header.pad_w
    ch, cw = hp // 8, wp // 8
    code = np.empty((header.alpha_c, ch, cw), dtype=np.float64)
    for i, (payload, spec) in enumerate(zip(payloads, header.specs)):
        plane = decode_plane(payload, cw, ch, header.bits)
        code[i] = dequantize(
            QuantizedChannel(plane.symbols.astype(np.uint8), spec)
        )

    recon = decoder.forward(code[None].astype(decoder.dtype))[0].astype(np.float64)
    if enh_payload is not None:
        r = residual.decode_residual(header.enhancement, enh_payload, hp, wp)
        recon = np.clip(recon + r, -1.0, 1.0)
    out = images.from_unit(recon)
    return out[: header.height, : header.width]
