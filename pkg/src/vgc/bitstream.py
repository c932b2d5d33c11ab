"""Deterministic stream container binding the coded image together.

Byte layout (little-endian throughout):

  offset  size  field
  0       4     magic "VGC1"
  4       1     container version (1)
  5       4     image height (pre-padding)
  9       4     image width
  13      2     pad rows added on the bottom
  15      2     pad columns added on the right
  17      1     quantizer bit depth B
  18      1     code-map channel count alpha_c
  19      16    architecture fingerprint (CodecConfig digest)
  35      10*n  per-channel quantizer records: B byte (0 = constant
                channel), cmin float32, cmax float32, zero-point byte
  ...     1     enhancement flag
  [...]   10    enhancement record if flagged: rmin f32, rmax f32, qp, block
  ...     4     crc32 of every header byte above
  then per channel:  u32 length + payload + u32 crc32(payload)
  then, if flagged:  u32 length + enhancement payload + u32 crc32

Every byte of a stream is covered by either the header checksum or a
payload checksum, so any single mutation is detected rather than silently
mis-decoded.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from .errors import DecodeError
from .quantizer import QuantSpec
from .residual import ResidualHeader

MAGIC = b"VGC1"
VERSION = 1


@dataclass
class StreamHeader:
    height: int
    width: int
    pad_h: int
    pad_w: int
    bits: int
    alpha_c: int
    config_hash: bytes
    specs: list  # one QuantSpec per channel
    enhancement: ResidualHeader | None = None
    version: int = VERSION

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image extents must be positive")
        if not (1 <= self.bits <= 8):
            raise ValueError("bit depth must be in [1, 8]")
        if len(self.config_hash) != 16:
            raise ValueError("config hash must be 16 bytes")
        if len(self.specs) != self.alpha_c:
            raise ValueError(
                f"{len(self.specs)} quantizer records for {self.alpha_c} channels"
            )


def _pack_header(h: StreamHeader) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<BIIHHBB", h.version, h.height, h.width,
                       h.pad_h, h.pad_w, h.bits, h.alpha_c)
    out += h.config_hash
    for s in h.specs:
        b = 0 if s.is_constant else s.bits
        out += struct.pack("<BffB", b, s.cmin, s.cmax,
                           0 if s.is_constant else s.zero_point)
    if h.enhancement is None:
        out += b"\x00"
    else:
        r = h.enhancement
        out += b"\x01"
        out += struct.pack("<ffBB", r.rmin, r.rmax, r.qp, r.block)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"stream truncated while reading {what}",
                              offset=self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _parse_header(r: _Reader) -> StreamHeader:
    # raw field pass first; nothing is interpreted until the crc is verified
    if r.take(4, "magic") != MAGIC:
        raise DecodeError("bad magic; not a vgc stream", offset=0)
    version, height, width, pad_h, pad_w, bits, alpha_c = r.unpack(
        "<BIIHHBB", "fixed header"
    )
    if version != VERSION:
        raise DecodeError(f"unsupported container version {version}", offset=4)
    config_hash = r.take(16, "config hash")
    raw_specs = [r.unpack("<BffB", f"quantizer record {i}") for i in range(alpha_c)]
    (flag,) = r.unpack("<B", "enhancement flag")
    raw_enh = None
    if flag == 1:
        raw_enh = r.unpack("<ffBB", "enhancement record")
    elif flag != 0:
        raise DecodeError(f"bad enhancement flag {flag}", offset=r.pos - 1)
    crc_offset = r.pos
    (crc,) = r.unpack("<I", "header checksum")
    if zlib.crc32(r.data[:crc_offset]) != crc:
        raise DecodeError("header checksum mismatch", offset=crc_offset)

    try:
        specs = []
        for i, (b, cmin, cmax, z) in enumerate(raw_specs):
            if b == 0:
                specs.append(QuantSpec(bits, 0.0, 0, cmin, cmin))
            else:
                if b != bits:
                    raise ValueError(
                        f"channel {i} bit depth {b} != stream depth {bits}"
                    )
                qmax = (1 << b) - 1
                specs.append(QuantSpec(b, (cmax - cmin) / qmax, z, cmin, cmax))
        enhancement = None if raw_enh is None else ResidualHeader(*raw_enh)
        return StreamHeader(height, width, pad_h, pad_w, bits, alpha_c,
                            config_hash, specs, enhancement, version)
    except ValueError as e:
        raise DecodeError(f"inconsistent header: {e}", offset=crc_offset) from e


def _pack_frame(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload + struct.pack(
        "<I", zlib.crc32(payload)
    )


def _parse_frame(r: _Reader, what: str) -> bytes:
    (n,) = r.unpack("<I", f"{what} length")
    payload = r.take(n, what)
    (crc,) = r.unpack("<I", f"{what} checksum")
    if zlib.crc32(payload) != crc:
        raise DecodeError(f"{what} checksum mismatch", offset=r.pos - 4)
    return payload


def write_stream(
    header: StreamHeader,
    channel_payloads: list[bytes],
    enhancement_payload: bytes | None = None,
) -> bytes:
    """Serialize the container; byte-identical output for identical inputs."""
    if len(channel_payloads) != header.alpha_c:
        raise ValueError(
            f"{len(channel_payloads)} payloads for {header.alpha_c} channels"
        )
    if (enhancement_payload is None) != (header.enhancement is None):
        raise ValueError("enhancement payload and header record must pair up")
    out = bytearray(_pack_header(header))
    for p in channel_payloads:
        out += _pack_frame(p)
    if enhancement_payload is not None:
        out += _pack_frame(enhancement_payload)
    return bytes(out)


def read_stream(data: bytes):
    """Exact inverse of `write_stream`.

    Returns (header, channel_payloads, enhancement_payload | None).
    """
    r = _Reader(data)
    header = _parse_header(r)
    payloads = [_parse_frame(r, f"channel {i} payload")
                for i in range(header.alpha_c)]
    enhancement = None
    if header.enhancement is not None:
        enhancement = _parse_frame(r, "enhancement payload")
    if r.pos != len(data):
        raise DecodeError(
            f"{len(data) - r.pos} trailing bytes after stream end", offset=r.pos
        )
    return header, payloads, enhancement


def bpp(stream: bytes, height: int, width: int) -> float:
    """Bits per pixel of the whole stream."""
    return 8.0 * len(stream) / (height * width)


def bpp_report(data: bytes, height: int, width: int) -> dict:
    """Total bpp split into base and enhancement shares (exact partition)."""
    header, payloads, enhancement = read_stream(data)
    enh_bytes = 0 if enhancement is None else len(enhancement) + 8
    total = bpp(data, height, width)
    enh = 8.0 * enh_bytes / (height * width)
    return {
        "bpp": total,
        "bpp_base": total - enh,
        "bpp_enhancement": enh,
        "base_fraction": (total - enh) / total if total else 0.0,
    }
