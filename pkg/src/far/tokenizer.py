"""Lossless continuous tokenizer: patchify plus per-component standardisation.

Images are ``(height, width, channels)`` tensors with values in [0, 1].
Non-overlapping ``p x p`` patches are flattened row-major (rows, then columns,
then channels) into ``d = p*p*channels`` token components and standardised by
dataset statistics, giving a ``(height/p, width/p, d)`` token grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = ["TokenizerStats", "fit_stats", "patchify", "patchify_batch", "unpatchify", "unpatchify_batch"]

STD_FLOOR = 1e-6


def _check_image(img: torch.Tensor) -> None:
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"image must be (height, width, channels) with 1 or 3 channels, got {tuple(img.shape)}")
    if not torch.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")


@dataclass(frozen=True)
class TokenizerStats:
    """Per-component token mean/std over a training set, plus the patch size."""

    mean: torch.Tensor
    std: torch.Tensor
    patch_size: int

    def __post_init__(self) -> None:
        if self.patch_size < 1:
            raise ValueError(f"patch size must be >= 1, got {self.patch_size}")
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D tensors of equal length")
        if (self.std < STD_FLOOR).any():
            raise ValueError(f"std values must be >= {STD_FLOOR}")

    @property
    def token_dim(self) -> int:
        return self.mean.numel()

    @classmethod
    def identity(cls, patch_size: int, channels: int = 1) -> "TokenizerStats":
        d = patch_size * patch_size * channels
        return cls(torch.zeros(d, dtype=torch.float64), torch.ones(d, dtype=torch.float64), patch_size)


def _to_tokens(images: torch.Tensor, p: int) -> torch.Tensor:
    # (n, H, W, C) -> (n, H/p, W/p, p*p*C), patches row-major, row-major within patch.
    n, height, width, channels = images.shape
    if height % p or width % p:
        raise ValueError(f"image size {height}x{width} not divisible by patch size {p}")
    x = images.reshape(n, height // p, p, width // p, p, channels)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(n, height // p, width // p, p * p * channels)


def patchify_batch(images: torch.Tensor, stats: TokenizerStats) -> torch.Tensor:
    if images.ndim != 4:
        raise ValueError(f"expected (n, height, width, channels), got {tuple(images.shape)}")
    tokens = _to_tokens(images, stats.patch_size)
    if tokens.shape[-1] != stats.token_dim:
        raise ValueError(f"stats cover {stats.token_dim} components, image patches have {tokens.shape[-1]}")
    mean = stats.mean.to(tokens.dtype)
    std = stats.std.to(tokens.dtype)
    return (tokens - mean) / std


def patchify(img: torch.Tensor, stats: TokenizerStats) -> torch.Tensor:
    """Tokenise one image into a standardised ``(h, w, d)`` grid."""
    _check_image(img)
    return patchify_batch(img.unsqueeze(0), stats).squeeze(0)


def unpatchify_batch(grids: torch.Tensor, stats: TokenizerStats, channels: int = 1) -> torch.Tensor:
    if grids.ndim != 4:
        raise ValueError(f"expected (n, h, w, d), got {tuple(grids.shape)}")
    p = stats.patch_size
    n, h, w, d = grids.shape
    if d != p * p * channels or d != stats.token_dim:
        raise ValueError(f"token dim {d} does not match patch size {p} with {channels} channels")
    x = grids * stats.std.to(grids.dtype) + stats.mean.to(grids.dtype)
    x = x.reshape(n, h, w, p, p, channels).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(n, h * p, w * p, channels).clamp(0.0, 1.0)


def unpatchify(grid: torch.Tensor, stats: TokenizerStats, channels: int = 1) -> torch.Tensor:
    """Invert :func:`patchify`; output is clamped to [0, 1]."""
    if grid.ndim != 3:
        raise ValueError(f"expected (h, w, d), got {tuple(grid.shape)}")
    return unpatchify_batch(grid.unsqueeze(0), stats, channels).squeeze(0)


def fit_stats(images: torch.Tensor, patch_size: int) -> TokenizerStats:
    """Component-wise token mean/std (population) over all images, std floored."""
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("need a non-empty (n, height, width, channels) image stack")
    tokens = _to_tokens(images.to(torch.float64), patch_size)
    flat = tokens.reshape(-1, tokens.shape[-1])
    mean = flat.mean(dim=0)
    std = flat.std(dim=0, unbiased=False).clamp(min=STD_FLOOR)
    return TokenizerStats(mean, std, patch_size)
