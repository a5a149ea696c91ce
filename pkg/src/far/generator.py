"""Autoregressive inference over frequency levels.

The first step runs the transformer on a fully masked grid at the lowest
planned level; every step samples a full-frequency token estimate through the
per-token diffusion sampler and filters it down to the next planned level to
form the next input.  Because every step predicts the full-frequency grid, the
level path may skip levels, so an image costs exactly ``len(level_path)``
transformer forwards (doubled under classifier-free guidance).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import torch

from .diffloss import DenoiserMlp, NoiseSchedule, allocate_steps, sample_tokens
from .model import FarModel
from .spectral import FrequencySchedule, apply_filter, radial_power_spectrum
from .tokenizer import TokenizerStats, unpatchify_batch

__all__ = [
    "GenerationTrace",
    "SampleConfig",
    "TraceStep",
    "eval_diversity",
    "eval_spectrum_match",
    "generate",
    "generate_batch",
    "plan_levels",
]


def plan_levels(ar_steps: int, levels: int) -> tuple[int, ...]:
    """Evenly spaced level path ending at the top level.

    Rounds a linear ramp over ``[levels/ar_steps, levels]``; collisions after
    rounding are dropped, so the path can be shorter than requested.
    """
    if not 2 <= ar_steps <= levels:
        raise ValueError(f"ar_steps {ar_steps} out of range [2, {levels}]")
    raw = [levels / ar_steps + (levels - levels / ar_steps) * k / (ar_steps - 1) for k in range(ar_steps)]
    path: list[int] = []
    for value in raw:
        rounded = int(math.floor(value + 0.5))
        if not path or rounded > path[-1]:
            path.append(rounded)
    path[-1] = levels
    return tuple(path)


@dataclass(frozen=True)
class SampleConfig:
    """Inference plan: level path, per-level diffusion budgets and sampler knobs."""

    level_path: tuple[int, ...]
    class_id: int = 0
    seed: int = 0
    temperature: float = 1.0
    guidance_scale: float = 1.0
    inference_mask_ratio: float = 0.0
    diffusion_min_steps: int = 40
    diffusion_max_steps: int = 100
    steps_override: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.level_path) < 1:
            raise ValueError("empty level path")
        if any(a >= b for a, b in zip(self.level_path, self.level_path[1:])):
            raise ValueError(f"level path must be strictly increasing, got {self.level_path}")
        if self.steps_override is not None and len(self.steps_override) != len(self.level_path):
            raise ValueError("steps_override must match the level path length")
        if not 0.0 <= self.inference_mask_ratio < 1.0:
            raise ValueError("inference_mask_ratio must lie in [0, 1)")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def steps_for(self, index: int, levels: int) -> int:
        if self.steps_override is not None:
            return self.steps_override[index]
        return allocate_steps(self.level_path[index], levels, self.diffusion_min_steps, self.diffusion_max_steps)


@dataclass(frozen=True)
class TraceStep:
    level: int
    diffusion_steps: int
    input_grid: torch.Tensor
    estimate_grid: torch.Tensor
    filtered_grid: torch.Tensor
    decoded_image: torch.Tensor
    seconds: float


@dataclass
class GenerationTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)


def _check_sample_config(cfg: SampleConfig, model: FarModel, noise_sched: NoiseSchedule) -> None:
    if cfg.level_path[-1] != model.levels:
        raise ValueError(f"level path must end at level {model.levels}, got {cfg.level_path}")
    if not 0 <= cfg.class_id <= model.num_classes:
        raise ValueError(f"class id {cfg.class_id} out of range")
    for index in range(len(cfg.level_path)):
        steps = cfg.steps_for(index, model.levels)
        if not 1 <= steps <= noise_sched.total_steps:
            raise ValueError(f"diffusion steps {steps} out of range [1, {noise_sched.total_steps}]")


@torch.no_grad()
def generate_batch(
    model: FarModel,
    denoiser: DenoiserMlp,
    freq_sched: FrequencySchedule,
    noise_sched: NoiseSchedule,
    stats: TokenizerStats,
    cfg: SampleConfig,
    class_ids: torch.Tensor,
    generator: torch.Generator,
    keep_trace: bool = False,
    channels: int = 1,
) -> tuple[torch.Tensor, GenerationTrace]:
    """Generate one image per entry of ``class_ids``; returns images in [0, 1]."""
    _check_sample_config(cfg, model, noise_sched)
    if freq_sched.levels != model.levels:
        raise ValueError("frequency schedule level count does not match the model")
    model.eval()
    denoiser.eval()
    batch = class_ids.shape[0]
    h, w, d = model.grid_h, model.grid_w, model.token_dim
    x = torch.zeros(batch, h, w, d)
    trace = GenerationTrace()
    guided = cfg.guidance_scale != 1.0
    uncond = torch.full_like(class_ids, model.unconditional_class_id)

    for index, level in enumerate(cfg.level_path):
        start = time.perf_counter()
        if index == 0:
            mask = torch.ones(batch, h, w, dtype=torch.bool)
        elif cfg.inference_mask_ratio > 0.0:
            count = int(cfg.inference_mask_ratio * h * w)
            ranks = torch.rand(batch, h * w, generator=generator).argsort(dim=1).argsort(dim=1)
            mask = (ranks < count).reshape(batch, h, w)
        else:
            mask = None
        z = model(x, mask, class_ids, level)
        if guided:
            z_uncond = model(x, mask, uncond, level)
            z = z_uncond + cfg.guidance_scale * (z - z_uncond)
        steps = cfg.steps_for(index, model.levels)
        estimate = sample_tokens(
            denoiser, z.reshape(-1, model.z_dim), steps, noise_sched, cfg.temperature, generator, token_dim=d
        ).reshape(batch, h, w, d)
        last = index + 1 == len(cfg.level_path)
        filtered = estimate if last else apply_filter(estimate, cfg.level_path[index + 1], freq_sched)
        if keep_trace:
            trace.steps.append(
                TraceStep(
                    level=level,
                    diffusion_steps=steps,
                    input_grid=x.clone(),
                    estimate_grid=estimate.clone(),
                    filtered_grid=filtered.clone(),
                    decoded_image=unpatchify_batch(filtered, stats, channels),
                    seconds=time.perf_counter() - start,
                )
            )
        x = filtered
    return unpatchify_batch(x, stats, channels), trace


def generate(
    model: FarModel,
    denoiser: DenoiserMlp,
    freq_sched: FrequencySchedule,
    noise_sched: NoiseSchedule,
    stats: TokenizerStats,
    cfg: SampleConfig,
    generator: torch.Generator | None = None,
    keep_trace: bool = True,
    channels: int = 1,
) -> tuple[torch.Tensor, GenerationTrace]:
    """Generate a single image for ``cfg.class_id`` (seeded from ``cfg.seed``)."""
    if generator is None:
        generator = torch.Generator().manual_seed(cfg.seed)
    images, trace = generate_batch(
        model,
        denoiser,
        freq_sched,
        noise_sched,
        stats,
        cfg,
        torch.tensor([cfg.class_id]),
        generator,
        keep_trace=keep_trace,
        channels=channels,
    )
    return images[0], trace


def _mean_radial_spectrum(images: torch.Tensor) -> torch.Tensor:
    spectra = torch.stack([radial_power_spectrum(img.double()) for img in images])
    return spectra.mean(dim=0)


def eval_spectrum_match(generated: torch.Tensor, reference: torch.Tensor, eps: float = 1e-12) -> float:
    """Mean absolute log-ratio between the averaged radial power spectra of two
    image sets, over the non-DC bins."""
    if generated.ndim != 4 or reference.ndim != 4 or generated.shape[0] == 0 or reference.shape[0] == 0:
        raise ValueError("need non-empty (n, h, w, c) image sets")
    if generated.shape[1:3] != reference.shape[1:3]:
        raise ValueError("image sides must match")
    a = _mean_radial_spectrum(generated)[1:]
    b = _mean_radial_spectrum(reference)[1:]
    return float(torch.log((a + eps) / (b + eps)).abs().mean())


def eval_diversity(images: torch.Tensor) -> float:
    """Mean pairwise L2 distance over a set of images, divided by the mean
    image norm; 0 for identical images."""
    if images.ndim != 4 or images.shape[0] < 2:
        raise ValueError("need at least 2 images of shape (n, h, w, c)")
    flat = images.reshape(images.shape[0], -1).double()
    dists = torch.pdist(flat)
    scale = flat.norm(dim=1).mean()
    if float(dists.max()) == 0.0:
        return 0.0
    return float(dists.mean() / scale)
