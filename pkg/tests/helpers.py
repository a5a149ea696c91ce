"""Independent reference implementations used as test oracles.

Everything here is written against numpy (or plain Python) so the values it
produces do not share code paths with the package under test.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def bilinear_resample_reference(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Brute-force bilinear resize of an (h, w, d) array, half-pixel centres,
    edges clamped."""
    h, w, d = grid.shape
    out = np.zeros((out_h, out_w, d))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[i, j] = (
                (1 - fy) * (1 - fx) * grid[y0, x0]
                + (1 - fy) * fx * grid[y0, x1]
                + fy * (1 - fx) * grid[y1, x0]
                + fy * fx * grid[y1, x1]
            )
    return out


def spectrum_support_fraction(grid: np.ndarray, cutoff: float) -> float:
    """Fraction of spectral energy inside the normalised radial cutoff,
    computed with numpy's FFT."""
    h, w = grid.shape[:2]
    fy = np.fft.fftfreq(h)
    fx = np.fft.fftfreq(w)
    r = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    r = r / r.max()
    power = np.abs(np.fft.fft2(grid, axes=(0, 1))) ** 2
    total = power.sum()
    if total == 0:
        return 1.0
    return float(power[r <= cutoff + 1e-12].sum() / total)


def two_pass_mean_std(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Classic two-pass population mean/std over axis 0."""
    mean = values.sum(axis=0) / values.shape[0]
    var = ((values - mean) ** 2).sum(axis=0) / values.shape[0]
    return mean, np.sqrt(var)


def finite_difference_grads(
    loss_fn,
    params: dict[str, torch.Tensor],
    step: float = 1e-4,
) -> dict[str, torch.Tensor]:
    """Central finite differences of a scalar loss w.r.t. every parameter entry."""
    grads = {}
    with torch.no_grad():
        for name, p in params.items():
            g = torch.zeros_like(p)
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + step
                up = loss_fn()
                flat[i] = original - step
                down = loss_fn()
                flat[i] = original
                gflat[i] = (up - down) / (2 * step)
            grads[name] = g
    return grads


def max_relative_error(
    analytic: dict[str, torch.Tensor], numeric: dict[str, torch.Tensor], floor: float = 1e-5
) -> float:
    # entries below `floor` are at the finite-difference noise level (central
    # differences at fp64 resolve ~1e-10 absolute) and are compared absolutely
    worst = 0.0
    for name in analytic:
        a = analytic[name].reshape(-1)
        f = numeric[name].reshape(-1)
        denom = torch.maximum(a.abs(), f.abs()).clamp(min=floor)
        worst = max(worst, float(((a - f).abs() / denom).max()))
    return worst


def layer_norm_reference(x: np.ndarray, weight: np.ndarray | None, bias: np.ndarray | None, eps: float = 1e-5) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    out = (x - mean) / np.sqrt(var + eps)
    if weight is not None:
        out = out * weight
    if bias is not None:
        out = out + bias
    return out


def gelu_reference(x: np.ndarray) -> np.ndarray:
    from scipy.special import erf

    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def silu_reference(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def softmax_reference(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sinusoidal_embedding_reference(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None].astype(np.float64) * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=-1)
    return emb


def radial_bins_reference(img: np.ndarray) -> np.ndarray:
    """Reference radial power spectrum of an (h, w, d) array via numpy."""
    h, w, d = img.shape
    nbins = (h + 1) // 2
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    radius = np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    idx = np.minimum(np.floor(radius).astype(int), nbins - 1)
    power = (np.abs(np.fft.fft2(img, axes=(0, 1))) ** 2).mean(axis=-1) / (h * w)
    out = np.zeros(nbins)
    for b in range(nbins):
        out[b] = power[idx == b].sum()
    return out
