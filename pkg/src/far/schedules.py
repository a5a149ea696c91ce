"""Frequency-aware mask-ratio schedule and mask sampling.

Lower frequency levels carry less information per token, so training masks a
larger random fraction of them: the lower bound of the mask-ratio interval
falls linearly from ``r_lo`` at level 1 to ``r_hi`` at level F, and each draw
picks a ratio uniformly from ``[r_i, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = ["MaskPlan", "MaskSchedule", "mask_lower_bound", "sample_mask", "sample_mask_batch"]


@dataclass(frozen=True)
class MaskSchedule:
    r_lo: float = 0.7
    r_hi: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.r_hi <= self.r_lo <= 1.0:
            raise ValueError(f"need 0 <= r_hi <= r_lo <= 1, got r_lo={self.r_lo}, r_hi={self.r_hi}")


@dataclass(frozen=True)
class MaskPlan:
    """Boolean grid over token positions; True marks masked/unknown tokens."""

    mask: torch.Tensor
    realized_ratio: float

    def __post_init__(self) -> None:
        if self.mask.dtype != torch.bool or self.mask.ndim != 2:
            raise ValueError("mask must be a 2-D boolean grid")


def mask_lower_bound(level: int, levels: int, sched: MaskSchedule) -> float:
    """Lower bound ``r_i`` of the mask-ratio interval at a frequency level."""
    if levels < 2:
        raise ValueError(f"need at least 2 levels, got {levels}")
    if not 1 <= level <= levels:
        raise ValueError(f"level {level} out of range [1, {levels}]")
    return sched.r_hi + (sched.r_lo - sched.r_hi) * (levels - level) / (levels - 1)


def sample_mask_batch(
    n: int,
    h: int,
    w: int,
    levels_per_sample: torch.Tensor,
    levels: int,
    sched: MaskSchedule,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw one mask per sample: ratio uniform on ``[r_i, 1]``, then
    ``floor(ratio * h * w)`` positions chosen uniformly without replacement.

    Returns the boolean masks ``(n, h, w)`` and the realised ratios ``(n,)``.
    """
    if h < 1 or w < 1 or n < 1:
        raise ValueError("mask dimensions must be positive")
    size = h * w
    lower = torch.tensor(
        [mask_lower_bound(int(lv), levels, sched) for lv in levels_per_sample.tolist()], dtype=torch.float64
    )
    ratio = lower + (1.0 - lower) * torch.rand(n, generator=generator, dtype=torch.float64)
    counts = (ratio * size).floor().long()
    ranks = torch.rand(n, size, generator=generator).argsort(dim=1).argsort(dim=1)
    mask = ranks < counts[:, None]
    return mask.reshape(n, h, w), counts.double() / size


def sample_mask(
    h: int, w: int, level: int, levels: int, sched: MaskSchedule, generator: torch.Generator
) -> MaskPlan:
    mask, ratios = sample_mask_batch(1, h, w, torch.tensor([level]), levels, sched, generator)
    return MaskPlan(mask[0], float(ratios[0]))
