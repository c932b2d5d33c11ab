"""Distortion losses and quality metrics: L2 norm, PSNR, MS-SSIM, and the
multi-rate composite objective.

MS-SSIM here is the conventional multiscale form: an 11-tap Gaussian window
(sigma 1.5) applied in 'valid' mode, contrast/structure terms at every
dyadic scale, luminance at the coarsest scale only, combined with the
standard exponent weights. The map means can in principle go non-positive
(strongly anti-correlated inputs); in that case fractional powers are
undefined and the score short-circuits to 0 with a zero gradient.

The gradient of MS-SSIM is taken with respect to the *second* image (the
reconstruction); the score itself is symmetric in its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

STANDARD_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class MsSsimConfig:
    scales: int = 5
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 2.0  # dynamic range of the pixel domain ([-1,1] -> 2)
    weights: tuple | None = None  # None -> standard weights for `scales`

    def __post_init__(self):
        if not (1 <= self.scales <= len(STANDARD_WEIGHTS)):
            raise ValueError(f"scales must be in [1, {len(STANDARD_WEIGHTS)}]")
        if self.window % 2 == 0 or self.window < 3:
            raise ValueError("window must be odd and >= 3")
        if self.weights is not None:
            if len(self.weights) != self.scales:
                raise ValueError("need one weight per scale")
            if any(w <= 0 for w in self.weights):
                raise ValueError("weights must be positive")

    def resolved_weights(self) -> np.ndarray:
        if self.weights is not None:
            return np.asarray(self.weights, dtype=np.float64)
        w = np.asarray(STANDARD_WEIGHTS[: self.scales], dtype=np.float64)
        return w / w.sum()

    def min_extent(self) -> int:
        # smallest spatial extent that still fits the window at every scale
        return self.window * (1 << (self.scales - 1))


def max_scales_for_extent(extent: int, window: int = 11) -> int:
    """Largest dyadic scale count whose coarsest level still fits `window`."""
    scales = 0
    while extent >= window and scales < len(STANDARD_WEIGHTS):
        scales += 1
        extent //= 2
    if scales == 0:
        raise ValueError(f"extent {extent} smaller than the {window}-tap window")
    return scales


def _gauss_window(cfg: MsSsimConfig, dtype) -> np.ndarray:
    i = np.arange(cfg.window, dtype=np.float64) - (cfg.window - 1) / 2.0
    g = np.exp(-(i * i) / (2.0 * cfg.sigma * cfg.sigma))
    return (g / g.sum()).astype(dtype)


def _corr1d_valid(x: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    win = sliding_window_view(x, g.size, axis=axis)
    return win @ g


def _filt(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return _corr1d_valid(_corr1d_valid(x, g, 2), g, 3)


def _corr1d_adjoint(d: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0)] * d.ndim
    pad[axis] = (g.size - 1, g.size - 1)
    return _corr1d_valid(np.pad(d, pad), g[::-1], axis)


def _filt_adjoint(d: np.ndarray, g: np.ndarray) -> np.ndarray:
    return _corr1d_adjoint(_corr1d_adjoint(d, g, 3), g, 2)


def _pool2(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, :, : h2 * 2, : w2 * 2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))


def _pool2_adjoint(d: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c, h2, w2 = d.shape
    out = np.zeros((n, c, h, w), dtype=d.dtype)
    out[:, :, : h2 * 2, : w2 * 2] = (
        np.repeat(np.repeat(d, 2, axis=2), 2, axis=3) * 0.25
    )
    return out


def _check_pair(x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim != 4:
        raise ValueError(f"expected N x C x H x W images, got {x.shape}")


def ms_ssim(x: np.ndarray, y: np.ndarray, cfg: MsSsimConfig | None = None) -> float:
    """Multiscale structural similarity of two image batches, in [-1, 1]."""
    return _ms_ssim_core(x, y, cfg or MsSsimConfig(), need_grad=False)[0]


def ms_ssim_with_grad(x: np.ndarray, y: np.ndarray, cfg: MsSsimConfig | None = None):
    """Returns (score, d score / d y)."""
    return _ms_ssim_core(x, y, cfg or MsSsimConfig(), need_grad=True)


def _ms_ssim_core(x, y, cfg: MsSsimConfig, need_grad: bool):
    _check_pair(x, y)
    if min(x.shape[2], x.shape[3]) < cfg.min_extent():
        raise ValueError(
            f"image extent {x.shape[2]}x{x.shape[3]} too small for "
            f"{cfg.scales} scales with an {cfg.window}-tap window; "
            f"use a config with fewer scales (needs >= {cfg.min_extent()} px)"
        )
    g = _gauss_window(cfg, x.dtype)
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    weights = cfg.resolved_weights()

    a, b = x, y
    per_scale = []  # saved forward state per scale
    terms = np.empty(cfg.scales)
    lum_last = 1.0
    for s in range(cfg.scales):
        ma, mb = _filt(a, g), _filt(b, g)
        p, qa, qb = _filt(a * b, g), _filt(a * a, g), _filt(b * b, g)
        a2c = 2.0 * (p - ma * mb) + c2
        b2c = (qa - ma * ma) + (qb - mb * mb) + c2
        cs_map = a2c / b2c
        cs = float(cs_map.mean())
        st = {"a": a, "b": b, "ma": ma, "mb": mb, "a2c": a2c, "b2c": b2c,
              "cs_map": cs_map, "shape": a.shape}
        if s == cfg.scales - 1:
            a1c = 2.0 * ma * mb + c1
            b1c = ma * ma + mb * mb + c1
            l_map = a1c / b1c
            lum_last = float(l_map.mean())
            st.update(a1c=a1c, b1c=b1c, l_map=l_map)
        per_scale.append(st)
        terms[s] = cs
        if s < cfg.scales - 1:
            a, b = _pool2(a), _pool2(b)
    if lum_last <= 0.0 or np.any(terms <= 0.0):
        return (0.0, np.zeros_like(y)) if need_grad else (0.0, None)
    terms[-1] *= lum_last
    value = float(np.prod(terms ** weights))
    if not need_grad:
        return value, None

    # upstream scalar sensitivities per scale
    dterm = value * weights / terms
    dacc = None  # gradient flowing into b at the current (finer) scale
    for s in range(cfg.scales - 1, -1, -1):
        st = per_scale[s]
        npix = st["cs_map"].size
        if s == cfg.scales - 1:
            dcs = dterm[s] * lum_last
            dl = dterm[s] * (terms[s] / lum_last)
        else:
            dcs, dl = dterm[s], 0.0
        a, b, ma, mb = st["a"], st["b"], st["ma"], st["mb"]
        dcs_map = np.full_like(st["cs_map"], dcs / npix)
        da2 = dcs_map / st["b2c"]
        db2 = -dcs_map * st["cs_map"] / st["b2c"]
        dp = 2.0 * da2
        dqb = db2
        dmb = -dp * ma - 2.0 * db2 * mb
        if dl != 0.0:
            dl_map = np.full_like(st["l_map"], dl / npix)
            da1 = dl_map / st["b1c"]
            db1 = -dl_map * st["l_map"] / st["b1c"]
            dmb += 2.0 * ma * da1 + 2.0 * mb * db1
        db = (
            _filt_adjoint(dmb, g)
            + _filt_adjoint(dqb, g) * (2.0 * b)
            + _filt_adjoint(dp, g) * a
        )
        if dacc is not None:
            db = db + _pool2_adjoint(dacc, st["shape"][2], st["shape"][3])
        dacc = db
    return value, dacc.astype(y.dtype, copy=False)


# --- scalar losses -----------------------------------------------------------


def l2_loss(x: np.ndarray, y: np.ndarray) -> float:
    """Euclidean norm of the elementwise difference."""
    _check_pair(x, y)
    return float(np.sqrt(((x - y) ** 2).sum()))


def l2_loss_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of `l2_loss` with respect to y (zero at coincidence)."""
    n = l2_loss(x, y)
    if n == 0.0:
        return np.zeros_like(y)
    return (y - x) / n


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((np.asarray(x, np.float64) - np.asarray(y, np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def variable_rate_loss(
    x: np.ndarray,
    recons: dict[int, np.ndarray],
    rates,
    cfg: MsSsimConfig | None = None,
) -> float:
    """Composite objective 2 * sum_B ||x - x'_B|| - sum_B MS-SSIM(x, x'_B)."""
    rates = list(rates)
    if not rates:
        raise ValueError("rate set must be non-empty")
    missing = [b for b in rates if b not in recons]
    if missing:
        raise ValueError(f"missing reconstructions for bit depths {missing}")
    total = 0.0
    for b in rates:
        total += 2.0 * l2_loss(x, recons[b]) - ms_ssim(x, recons[b], cfg)
    return total
