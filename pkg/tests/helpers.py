"""Shared test utilities: finite differences, naive convolution oracles,
and synthetic image generation."""

import numpy as np


def finite_difference_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f with respect to array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(analytic, reference):
    """Max-norm relative deviation of an analytic gradient from a reference."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    scale = max(np.abs(reference).max(), 1e-12)
    return np.abs(analytic - reference).max() / scale


def pad_amounts(k, stride):
    total = k - stride
    return total // 2, total - total // 2


def conv2d_loop(x, w, b, stride):
    """Scalar-loop strided cross-correlation oracle (affine/down modes)."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = pad_amounts(kh, stride), pad_amounts(kw, stride)
    xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    y = np.zeros((n, o, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for oi in range(o):
            for p in range(oh):
                for q in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += (
                                    xp[ni, ci, p * stride + di, q * stride + dj]
                                    * w[oi, ci, di, dj]
                                )
                    y[ni, oi, p, q] = acc + b[oi]
    return y


def conv2d_transpose_loop(x, w, b, stride):
    """Scalar scatter oracle for the up (transposed) convolution."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    ph, pw = pad_amounts(kh, stride), pad_amounts(kw, stride)
    oh, ow = h * stride, wd * stride
    yp = np.zeros((n, o, oh + ph[0] + ph[1], ow + pw[0] + pw[1]), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for p in range(h):
                for q in range(wd):
                    v = x[ni, ci, p, q]
                    for oi in range(o):
                        for di in range(kh):
                            for dj in range(kw):
                                yp[ni, oi, p * stride + di, q * stride + dj] += (
                                    v * w[oi, ci, di, dj]
                                )
    y = yp[:, :, ph[0] : ph[0] + oh, pw[0] : pw[0] + ow]
    return y + b[None, :, None, None]


def synthetic_image(seed, h, w):
    """Deterministic natural-ish RGB test image (uint8 HxWx3).

    Mixes low-frequency cosine gradients, a few soft blobs, and hard
    rectangle edges so both smooth and structured content is present.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    img = np.zeros((h, w, 3))
    for ch in range(3):
        acc = np.zeros((h, w))
        for _ in range(3):
            fy, fx = rng.uniform(0.5, 3.0, size=2)
            phy, phx = rng.uniform(0, 2 * np.pi, size=2)
            acc += rng.uniform(0.2, 0.9) * np.cos(
                2 * np.pi * (fy * yy + phy / (2 * np.pi))
            ) * np.cos(2 * np.pi * (fx * xx + phx / (2 * np.pi)))
        for _ in range(3):
            cy, cx = rng.uniform(0, 1, size=2)
            s = rng.uniform(0.05, 0.25)
            acc += rng.uniform(-1.0, 1.0) * np.exp(
                -((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s)
            )
        img[:, :, ch] = acc
    # shared rectangles give cross-channel structure and sharp edges
    for _ in range(2):
        y0, x0 = rng.integers(0, max(h - 2, 1)), rng.integers(0, max(w - 2, 1))
        y1 = rng.integers(y0 + 1, h)
        x1 = rng.integers(x0 + 1, w)
        img[y0:y1, x0:x1, :] += rng.uniform(-0.8, 0.8, size=3)[None, None, :]
    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def reference_ms_ssim(x, y, cfg):
    """Independent MS-SSIM oracle: dense 2-D window via shift-and-add loops,
    no separable filtering or stride tricks."""
    i = np.arange(cfg.window, dtype=np.float64) - (cfg.window - 1) / 2.0
    g1 = np.exp(-(i * i) / (2.0 * cfg.sigma**2))
    g1 /= g1.sum()
    win2d = np.outer(g1, g1)
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    weights = cfg.resolved_weights()

    def blur(img):
        n, c, h, w = img.shape
        k = cfg.window
        out = np.zeros((n, c, h - k + 1, w - k + 1))
        for di in range(k):
            for dj in range(k):
                out += win2d[di, dj] * img[:, :, di : di + h - k + 1, dj : dj + w - k + 1]
        return out

    def down(img):
        n, c, h, w = img.shape
        h2, w2 = h // 2, w // 2
        out = np.zeros((n, c, h2, w2))
        for p in range(2):
            for q in range(2):
                out += img[:, :, p : h2 * 2 : 2, q : w2 * 2 : 2]
        return out / 4.0

    a, b = np.asarray(x, np.float64), np.asarray(y, np.float64)
    vals = []
    lum = 1.0
    for s in range(cfg.scales):
        ma, mb = blur(a), blur(b)
        sa2 = blur(a * a) - ma * ma
        sb2 = blur(b * b) - mb * mb
        sab = blur(a * b) - ma * mb
        cs = float(((2 * sab + c2) / (sa2 + sb2 + c2)).mean())
        vals.append(cs)
        if s == cfg.scales - 1:
            lum = float(
                ((2 * ma * mb + c1) / (ma * ma + mb * mb + c1)).mean()
            )
        else:
            a, b = down(a), down(b)
    if lum <= 0 or any(v <= 0 for v in vals):
        return 0.0
    vals[-1] *= lum
    return float(np.prod(np.asarray(vals) ** weights))
