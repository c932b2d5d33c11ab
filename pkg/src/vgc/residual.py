"""Lossy enhancement-layer codec for the base-layer reconstruction error.

The residual image is range-rescaled to an 8-bit grid (its min/max travel
in the header for the inverse map), split into 8x8 blocks per channel,
transformed with an orthonormal DCT-II, uniformly quantized with a step
derived from the quality parameter as step = 2^((qp - 4) / 6), and the
coefficients are entropy coded as one signed-integer stream in a fixed
diagonal scan order. Low qp = fine quantization = larger payload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import entropy
from .quantizer import round_half_away

BLOCK = 8
QP_MIN, QP_MAX = 1, 51


def qp_step(qp: int) -> float:
    return float(2.0 ** ((qp - 4) / 6.0))


@dataclass(frozen=True)
class ResidualHeader:
    rmin: float
    rmax: float
    qp: int
    block: int = BLOCK

    def __post_init__(self):
        if not (QP_MIN <= self.qp <= QP_MAX):
            raise ValueError(f"qp must be in [{QP_MIN}, {QP_MAX}], got {self.qp}")
        if self.rmin > self.rmax:
            raise ValueError("rmin > rmax")
        if self.block != BLOCK:
            raise ValueError(f"unsupported block size {self.block}")


def _dct_matrix() -> np.ndarray:
    u = np.arange(BLOCK)[:, None]
    x = np.arange(BLOCK)[None, :]
    d = np.cos((2 * x + 1) * u * np.pi / (2 * BLOCK)) * np.sqrt(2.0 / BLOCK)
    d[0] /= np.sqrt(2.0)
    return d


_DCT = _dct_matrix()


def _zigzag_order():
    order = []
    for s in range(2 * BLOCK - 1):
        diag = [(i, s - i) for i in range(BLOCK) if 0 <= s - i < BLOCK]
        if s % 2 == 0:
            diag.reverse()
        order.extend(diag)
    return np.array([i * BLOCK + j for i, j in order])


_ZIGZAG = _zigzag_order()
_UNZIGZAG = np.argsort(_ZIGZAG)


def _blockify(ch: np.ndarray) -> np.ndarray:
    h, w = ch.shape
    nb_h, nb_w = h // BLOCK, w // BLOCK
    return (
        ch.reshape(nb_h, BLOCK, nb_w, BLOCK)
        .transpose(0, 2, 1, 3)
        .reshape(nb_h * nb_w, BLOCK, BLOCK)
    )


def _unblockify(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    nb_h, nb_w = h // BLOCK, w // BLOCK
    return (
        blocks.reshape(nb_h, nb_w, BLOCK, BLOCK)
        .transpose(0, 2, 1, 3)
        .reshape(h, w)
    )


def _padded_extent(n: int) -> int:
    return ((n + BLOCK - 1) // BLOCK) * BLOCK


def encode_residual(r: np.ndarray, qp: int):
    """Encode a 3 x H x W residual. Returns (ResidualHeader, payload bytes)."""
    if r.ndim != 3 or r.shape[0] != 3:
        raise ValueError(f"expected 3 x H x W residual, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("residual contains non-finite values")
    rmin = float(np.float32(r.min()))
    rmax = float(np.float32(r.max()))
    header = ResidualHeader(rmin, rmax, qp)
    if rmax == rmin:
        return header, b""

    scaled = (np.asarray(r, np.float64) - rmin) / (rmax - rmin) * 255.0
    img = np.clip(round_half_away(scaled), 0, 255)

    _, h, w = img.shape
    hp, wp = _padded_extent(h), _padded_extent(w)
    img = np.pad(img, ((0, 0), (0, hp - h), (0, wp - w)), mode="edge")

    step = qp_step(qp)
    chunks = []
    for c in range(3):
        blocks = _blockify(img[c])
        coef = np.einsum("ux,bxy,vy->buv", _DCT, blocks, _DCT, optimize=True)
        q = round_half_away(coef / step).astype(np.int64)
        chunks.append(q.reshape(-1, BLOCK * BLOCK)[:, _ZIGZAG].reshape(-1))
    return header, entropy.encode_ints(np.concatenate(chunks))


def decode_residual(header: ResidualHeader, data: bytes, height: int, width: int):
    """Reconstruct the 3 x height x width residual from its payload."""
    if header.rmax == header.rmin:
        return np.full((3, height, width), header.rmin, dtype=np.float64)

    hp, wp = _padded_extent(height), _padded_extent(width)
    per_channel = (hp // BLOCK) * (wp // BLOCK) * BLOCK * BLOCK
    ints = entropy.decode_ints(data, 3 * per_channel)

    step = qp_step(header.qp)
    img = np.empty((3, hp, wp), dtype=np.float64)
    for c in range(3):
        q = ints[c * per_channel : (c + 1) * per_channel].reshape(-1, BLOCK * BLOCK)
        coef = (q[:, _UNZIGZAG].reshape(-1, BLOCK, BLOCK)).astype(np.float64) * step
        blocks = np.einsum("xu,buv,yv->bxy", _DCT.T, coef, _DCT.T, optimize=True)
        img[c] = _unblockify(blocks, hp, wp)
    img = np.clip(img[:, :height, :width], 0.0, 255.0)
    return img / 255.0 * (header.rmax - header.rmin) + header.rmin
