"""Frequency-level decomposition of token grids.

A token grid is a real tensor of shape ``(h, w, d)`` (or ``(batch, h, w, d)``);
the last dimension holds the per-position token components.  Two interchangeable
low-pass filter families produce the frequency levels: a hard radial mask in the
Fourier domain, and a bilinear downsample/upsample round trip in the spatial
domain.  Level ``F`` always reproduces the input exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

__all__ = [
    "FrequencySchedule",
    "apply_filter",
    "bilinear_resize",
    "decompose",
    "fourier_lowpass",
    "icr_continuous",
    "icr_discrete",
    "radial_power_spectrum",
    "spatial_downup",
]

FOURIER_MASK = "fourier-mask"
SPATIAL_DOWNUP = "spatial-downup"


def _check_grid(grid: torch.Tensor) -> None:
    if grid.ndim not in (3, 4):
        raise ValueError(f"token grid must be (h, w, d) or (batch, h, w, d), got shape {tuple(grid.shape)}")
    if min(grid.shape[-3:]) < 1:
        raise ValueError(f"degenerate grid shape {tuple(grid.shape)}")
    if not torch.isfinite(grid).all():
        raise ValueError("token grid contains non-finite values")


@dataclass(frozen=True)
class FrequencySchedule:
    """Per-level filter parameters for an ``F``-level decomposition.

    ``cutoffs`` holds the radius fractions for the Fourier mask (strictly
    increasing, last entry 1.0); ``sides`` holds target side lengths for the
    spatial filter (strictly increasing, last entry equal to the grid side).
    Exactly one of the two is set, matching ``filter_kind``.
    """

    filter_kind: str
    cutoffs: tuple[float, ...] | None = None
    sides: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.filter_kind == FOURIER_MASK:
            if self.cutoffs is None or self.sides is not None:
                raise ValueError("fourier-mask schedule requires cutoffs and no sides")
            c = self.cutoffs
            if len(c) < 2:
                raise ValueError("need at least 2 frequency levels")
            if any(not (0.0 < v <= 1.0) for v in c):
                raise ValueError(f"cutoffs must lie in (0, 1], got {c}")
            if any(a >= b for a, b in zip(c, c[1:])):
                raise ValueError(f"cutoffs must be strictly increasing, got {c}")
            if c[-1] != 1.0:
                raise ValueError(f"last cutoff must be 1.0 so level F is the identity, got {c[-1]}")
        elif self.filter_kind == SPATIAL_DOWNUP:
            if self.sides is None or self.cutoffs is not None:
                raise ValueError("spatial-downup schedule requires sides and no cutoffs")
            s = self.sides
            if len(s) < 2:
                raise ValueError("need at least 2 frequency levels")
            if any(v < 1 for v in s):
                raise ValueError(f"sides must be >= 1, got {s}")
            if any(a >= b for a, b in zip(s, s[1:])):
                raise ValueError(f"sides must be strictly increasing, got {s}")
        else:
            raise ValueError(f"unknown filter kind {self.filter_kind!r}")

    @property
    def levels(self) -> int:
        return len(self.cutoffs) if self.cutoffs is not None else len(self.sides)  # type: ignore[arg-type]

    @classmethod
    def linear(cls, levels: int, filter_kind: str = SPATIAL_DOWNUP, side: int | None = None) -> "FrequencySchedule":
        """Build the default linear progression: cutoffs ``i/F`` or sides
        rounded from a linear ramp between 1 and the grid side."""
        if levels < 2:
            raise ValueError("need at least 2 frequency levels")
        if filter_kind == FOURIER_MASK:
            return cls(filter_kind, cutoffs=tuple(i / levels for i in range(1, levels + 1)))
        if filter_kind == SPATIAL_DOWNUP:
            if side is None:
                raise ValueError("spatial-downup schedule needs the grid side")
            sides = tuple(round(1 + (side - 1) * (i - 1) / (levels - 1)) for i in range(1, levels + 1))
            return cls(filter_kind, sides=sides)
        raise ValueError(f"unknown filter kind {filter_kind!r}")

    def check_level(self, level: int) -> None:
        if not 1 <= level <= self.levels:
            raise ValueError(f"level {level} out of range [1, {self.levels}]")


def _radial_mask(h: int, w: int, cutoff: float, device: torch.device) -> torch.Tensor:
    fy = torch.fft.fftfreq(h, device=device, dtype=torch.float64)
    fx = torch.fft.fftfreq(w, device=device, dtype=torch.float64)
    r = torch.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    # Normalised so the highest representable (corner) frequency has radius 1;
    # cutoff 1.0 then keeps every coefficient.
    return r <= cutoff * r.max()


def fourier_lowpass(grid: torch.Tensor, level: int, sched: FrequencySchedule) -> torch.Tensor:
    """Hard radial low-pass in the Fourier domain.

    Per channel, coefficients with normalised radial frequency above the
    level's cutoff are zeroed and the inverse transform is taken; the
    imaginary residue (symmetric mask on a real signal, ~1e-16) is dropped.
    """
    _check_grid(grid)
    if sched.filter_kind != FOURIER_MASK:
        raise ValueError(f"schedule has filter kind {sched.filter_kind!r}, expected {FOURIER_MASK!r}")
    sched.check_level(level)
    h, w = grid.shape[-3], grid.shape[-2]
    mask = _radial_mask(h, w, sched.cutoffs[level - 1], grid.device)
    spectrum = torch.fft.fft2(grid, dim=(-3, -2))
    spectrum = spectrum * mask[..., None]
    return torch.fft.ifft2(spectrum, dim=(-3, -2)).real.to(grid.dtype)


def _resize_matrix(n_in: int, n_out: int, dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    # Half-pixel-centred bilinear sampling with edge clamping.
    m = torch.zeros(n_out, n_in, dtype=dtype, device=device)
    scale = n_in / n_out
    for i in range(n_out):
        s = (i + 0.5) * scale - 0.5
        s = min(max(s, 0.0), n_in - 1.0)
        lo = math.floor(s)
        hi = min(lo + 1, n_in - 1)
        frac = s - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def bilinear_resize(grid: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Bilinear resize of ``(..., h, w, d)`` to ``(..., out_h, out_w, d)``."""
    _check_grid(grid)
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    h, w = grid.shape[-3], grid.shape[-2]
    rows = _resize_matrix(h, out_h, grid.dtype, grid.device)
    cols = _resize_matrix(w, out_w, grid.dtype, grid.device)
    out = torch.einsum("oh,...hwd->...owd", rows, grid)
    return torch.einsum("ow,...hwd->...hod", cols, out)


def spatial_downup(grid: torch.Tensor, level: int, sched: FrequencySchedule) -> torch.Tensor:
    """Bilinear resize down to the level's side and back up to the input shape.

    The per-channel mean is restored exactly afterwards: at non-integer resize
    factors bilinear resampling shifts the DC component slightly, and the DC
    component must always pass the filter.
    """
    _check_grid(grid)
    if sched.filter_kind != SPATIAL_DOWNUP:
        raise ValueError(f"schedule has filter kind {sched.filter_kind!r}, expected {SPATIAL_DOWNUP!r}")
    sched.check_level(level)
    h, w = grid.shape[-3], grid.shape[-2]
    side = sched.sides[level - 1]
    if side > max(h, w):
        raise ValueError(f"level side {side} exceeds grid side {max(h, w)}")
    if sched.sides[-1] != max(h, w):
        raise ValueError(f"schedule top side {sched.sides[-1]} does not match grid side {max(h, w)}")
    if side == h == w:
        return grid.clone()
    out = bilinear_resize(bilinear_resize(grid, side, side), h, w)
    mean_shift = grid.mean(dim=(-3, -2), keepdim=True) - out.mean(dim=(-3, -2), keepdim=True)
    return out + mean_shift


def apply_filter(grid: torch.Tensor, level: int, sched: FrequencySchedule) -> torch.Tensor:
    if sched.filter_kind == FOURIER_MASK:
        return fourier_lowpass(grid, level, sched)
    return spatial_downup(grid, level, sched)


def decompose(grid: torch.Tensor, sched: FrequencySchedule) -> list[torch.Tensor]:
    """Return ``[x_1, ..., x_F]``; the last level equals the input."""
    return [apply_filter(grid, level, sched) for level in range(1, sched.levels + 1)]


def radial_power_spectrum(grid: torch.Tensor) -> torch.Tensor:
    """Mean squared Fourier magnitude in ``ceil(h/2)`` annular bins.

    Bins are indexed by the integer radial frequency ``floor(sqrt(ky^2 + kx^2))``
    with everything beyond the last bin folded into it; values are summed per
    bin as ``|X|^2 / (h*w)`` and averaged over channels, so the bins add up to
    the channel-averaged squared-pixel energy (Parseval with the unnormalised
    DFT).
    """
    _check_grid(grid)
    if grid.ndim != 3:
        raise ValueError("radial_power_spectrum expects an unbatched (h, w, d) grid")
    h, w, _ = grid.shape
    if h != w:
        raise ValueError(f"grid must be square, got {h}x{w}")
    nbins = (h + 1) // 2
    ky = torch.fft.fftfreq(h, device=grid.device) * h
    kx = torch.fft.fftfreq(w, device=grid.device) * w
    radius = torch.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    idx = radius.floor().long().clamp(max=nbins - 1)
    power = torch.fft.fft2(grid, dim=(0, 1)).abs().pow(2).mean(dim=-1) / (h * w)
    return torch.bincount(idx.flatten(), weights=power.flatten().to(torch.float64), minlength=nbins)


def icr_discrete(codebook_size: int, downscale: float) -> float:
    """Bit budget of a discrete tokenizer over the raw 8-bit RGB budget."""
    if codebook_size < 2:
        raise ValueError(f"codebook size must be >= 2, got {codebook_size}")
    if downscale < 1:
        raise ValueError(f"downscale factor must be >= 1, got {downscale}")
    return math.log2(codebook_size) / (24.0 * downscale**2)


def icr_continuous(channels: int, downscale: float) -> float:
    """Bit budget of an fp32 continuous tokenizer over the raw 8-bit RGB budget."""
    if channels < 1:
        raise ValueError(f"channel count must be >= 1, got {channels}")
    if downscale < 1:
        raise ValueError(f"downscale factor must be >= 1, got {downscale}")
    return 32.0 * channels / (24.0 * downscale**2)
