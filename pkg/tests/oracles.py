"""Slow reference implementations used only as test oracles."""
import math

import numpy as np


def box_resample_reference(img, size=32):
    """Average of the input over each output cell, by explicit overlap integration."""
    h, w = img.shape
    out = np.zeros((size, size))
    for r in range(size):
        y0, y1 = r * h / size, (r + 1) * h / size
        for c in range(size):
            x0, x1 = c * w / size, (c + 1) * w / size
            acc = 0.0
            for i in range(int(math.floor(y0)), int(math.ceil(y1))):
                wy = min(y1, i + 1) - max(y0, i)
                if wy <= 0:
                    continue
                for j in range(int(math.floor(x0)), int(math.ceil(x1))):
                    wx = min(x1, j + 1) - max(x0, j)
                    if wx > 0:
                        acc += wy * wx * img[i, j]
            out[r, c] = acc / ((y1 - y0) * (x1 - x0))
    return out


def dct2_reference(x):
    """Orthonormal 2-D type-II DCT straight from the cosine-sum definition."""
    n = x.shape[0]
    k = np.arange(n)
    c = np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / (2 * n))
    scale = np.full(n, math.sqrt(2 / n))
    scale[0] = math.sqrt(1 / n)
    out = np.zeros_like(x, dtype=float)
    for u in range(n):
        for v in range(n):
            out[u, v] = scale[u] * scale[v] * np.sum(x * c[u][:, None] * c[v][None, :])
    return out


def phash_reference(img):
    small = box_resample_reference(np.asarray(img, dtype=float))
    coef = dct2_reference(small)[:8, :8].ravel()
    # coefficients that are exactly zero in exact arithmetic come out as round-off
    tol = 1e-9 * max(np.ptp(small), 1e-300) * 32
    coef[np.abs(coef) <= tol] = 0.0
    ac = sorted(coef[1:])
    med = (ac[30] + ac[31]) / 2 if len(ac) % 2 == 0 else ac[31]
    value = 0
    for i in range(1, 64):
        if coef[i] > med + tol:
            value |= 1 << i
    return value
