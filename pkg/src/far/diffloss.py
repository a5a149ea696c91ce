"""Per-token diffusion loss and ancestral sampler.

The conditional distribution of each continuous token is modelled by a small
MLP noise predictor driven by the token grid's conditioning vectors.  Training
draws a timestep and Gaussian noise per token and regresses the injected noise;
sampling runs the DDPM posterior recursion over a respaced subset of the
schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

__all__ = [
    "DenoiserMlp",
    "NoiseSchedule",
    "allocate_steps",
    "diffusion_loss",
    "level_weight",
    "perturb",
    "respace_timesteps",
    "sample_tokens",
    "timestep_embedding",
]

BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule: ``alpha_bar[t]`` for t in [0, T], alpha_bar[0] = 1."""

    total_steps: int
    alpha_bar: torch.Tensor

    def __post_init__(self) -> None:
        if self.total_steps < 2:
            raise ValueError(f"need at least 2 steps, got {self.total_steps}")
        if self.alpha_bar.shape != (self.total_steps + 1,):
            raise ValueError("alpha_bar must have length total_steps + 1")

    @property
    def alpha(self) -> torch.Tensor:
        """Signal scale for t in [1, T]."""
        return self.alpha_bar[1:].sqrt()

    @property
    def sigma(self) -> torch.Tensor:
        """Noise scale for t in [1, T]."""
        return (1.0 - self.alpha_bar[1:]).sqrt()

    @classmethod
    def cosine(cls, total_steps: int, s: float = 0.008) -> "NoiseSchedule":
        """Squared-cosine alpha_bar progression.

        The per-step beta is capped at 0.999, which only binds on the final
        entry: the raw formula gives alpha_bar(T) ~ 1e-33, unusable in the
        posterior arithmetic.  All interior entries match the closed form.
        """
        if total_steps < 2:
            raise ValueError(f"need at least 2 steps, got {total_steps}")
        t = torch.arange(total_steps + 1, dtype=torch.float64)
        f = torch.cos((t / total_steps + s) / (1.0 + s) * math.pi / 2.0) ** 2
        raw = f / f[0]
        betas = (1.0 - raw[1:] / raw[:-1]).clamp(max=BETA_MAX)
        alpha_bar = torch.cat([torch.ones(1, dtype=torch.float64), (1.0 - betas).cumprod(dim=0)])
        return cls(total_steps, alpha_bar)


def perturb(x0: torch.Tensor, t: torch.Tensor | int, noise: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Forward process: ``alpha_t * x0 + sigma_t * noise`` componentwise."""
    t = torch.as_tensor(t, dtype=torch.long)
    if (t < 1).any() or (t > sched.total_steps).any():
        raise ValueError("timestep out of range [1, T]")
    ab = sched.alpha_bar.to(x0.dtype)[t]
    while ab.ndim < x0.ndim:
        ab = ab.unsqueeze(-1)
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape ``(len(t), dim)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class _ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width, elementwise_affine=False)
        self.mod = nn.Linear(width, 3 * width)
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, h: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        shift, scale, gate = self.mod(torch.nn.functional.silu(cond)).chunk(3, dim=-1)
        u = self.norm(h) * (1.0 + scale) + shift
        u = self.fc2(torch.nn.functional.silu(self.fc1(u)))
        return h + gate * u


class DenoiserMlp(nn.Module):
    """Noise predictor ``eps(x_t | t, z)``: residual MLP blocks whose
    normalisation is shifted/scaled/gated by the timestep embedding summed
    with the projected conditioning vector."""

    def __init__(self, token_dim: int, cond_dim: int, width: int = 256, depth: int = 3, time_embed_dim: int = 64):
        super().__init__()
        if min(token_dim, cond_dim, width, depth, time_embed_dim) < 1:
            raise ValueError("all denoiser dimensions must be positive")
        self.token_dim = token_dim
        self.cond_dim = cond_dim
        self.time_embed_dim = time_embed_dim
        self.in_proj = nn.Linear(token_dim, width)
        self.cond_proj = nn.Linear(cond_dim, width)
        self.time_proj = nn.Sequential(nn.Linear(time_embed_dim, width), nn.SiLU(), nn.Linear(width, width))
        self.blocks = nn.ModuleList(_ResBlock(width) for _ in range(depth))
        self.out_norm = nn.LayerNorm(width, elementwise_affine=False)
        self.out_proj = nn.Linear(width, token_dim)

    def init_weights(self, generator: torch.Generator) -> None:
        for name, p in self.named_parameters():
            if p.ndim < 2:
                p.data.zero_()
            elif name.endswith(("mod.weight", "out_proj.weight")):
                p.data.zero_()  # blocks start as identities, prediction starts at zero
            else:
                bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
                p.data.uniform_(-bound, bound, generator=generator)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if x_t.shape[-1] != self.token_dim or z.shape[-1] != self.cond_dim:
            raise ValueError("token/conditioning width mismatch")
        temb = timestep_embedding(t.reshape(-1), self.time_embed_dim).to(x_t.dtype)
        cond = self.time_proj(temb).reshape(*x_t.shape[:-1], -1) + self.cond_proj(z)
        h = self.in_proj(x_t)
        for block in self.blocks:
            h = block(h, cond)
        return self.out_proj(self.out_norm(h))


def level_weight(level: int | torch.Tensor, levels: int) -> float | torch.Tensor:
    """Sine-curve loss weight, rising from just above 1 at level 1 to 2 at level F."""
    if isinstance(level, torch.Tensor):
        return 1.0 + torch.sin(math.pi / 2.0 * level.double() / levels)
    return 1.0 + math.sin(math.pi / 2.0 * level / levels)


def diffusion_loss(
    denoiser: nn.Module,
    z: torch.Tensor,
    target: torch.Tensor,
    sched: NoiseSchedule,
    generator: torch.Generator,
    weight: torch.Tensor | float = 1.0,
    loss_mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Noise-regression loss over a stack of tokens.

    Each position independently draws ``t`` uniform on [1, T] and standard
    normal noise; the squared error between injected and predicted noise is
    averaged over components and positions.  ``weight`` scales positions (the
    trainer passes the per-level loss weight); ``loss_mask`` restricts which
    positions contribute (default: all of them).  Returns the weighted loss
    and the detached unweighted loss.
    """
    if z.shape[:-1] != target.shape[:-1]:
        raise ValueError("conditioning and target grids must share leading shape")
    lead = target.shape[:-1]
    t = torch.randint(1, sched.total_steps + 1, lead, generator=generator)
    noise = torch.randn(target.shape, generator=generator, dtype=target.dtype)
    x_t = perturb(target.detach(), t, noise, sched)
    pred = denoiser(x_t, t, z)
    per_position = (noise - pred).pow(2).mean(dim=-1)
    if loss_mask is not None:
        per_position = per_position[loss_mask]
        if isinstance(weight, torch.Tensor):
            weight = weight[loss_mask]
    loss = (per_position * weight).mean()
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite diffusion loss")
    return loss, per_position.detach().mean()


def allocate_steps(level: int, levels: int, t_min: int = 40, t_max: int = 100) -> int:
    """Sampling-step budget rising linearly from ``t_min`` at level 1 to ``t_max`` at level F."""
    if levels < 2:
        raise ValueError(f"need at least 2 levels, got {levels}")
    if not 1 <= level <= levels:
        raise ValueError(f"level {level} out of range [1, {levels}]")
    return int(math.floor(t_min + (t_max - t_min) * (level - 1) / (levels - 1) + 0.5))


def respace_timesteps(total_steps: int, steps: int) -> list[int]:
    """``steps`` evenly spaced timesteps in [1, T], deduplicated, descending."""
    if not 1 <= steps <= total_steps:
        raise ValueError(f"steps {steps} out of range [1, {total_steps}]")
    if steps == 1:
        return [total_steps]
    picked = [int(math.floor(1 + (total_steps - 1) * k / (steps - 1) + 0.5)) for k in range(steps)]
    return sorted(set(picked), reverse=True)


def sample_tokens(
    denoiser: nn.Module,
    z: torch.Tensor,
    steps: int,
    sched: NoiseSchedule,
    temperature: float,
    generator: torch.Generator,
    token_dim: int | None = None,
    x0_clamp: float | None = 8.0,
) -> torch.Tensor:
    """Ancestral DDPM draw of one token per conditioning vector.

    Runs the eps-prediction posterior mean with the "small" posterior variance
    scaled by ``temperature**2`` over the respaced schedule, from pure noise
    down to t = 0.  ``temperature`` scales every injected draw including the
    prior, so temperature 0 yields a fully deterministic trajectory.

    ``x0_clamp`` bounds the intermediate clean-token estimate.  Tokens are
    standardised to unit scale, so the default 8-sigma bound never binds on an
    accurate prediction; without it the ``(x_t - sigma*eps)/alpha`` conversion
    amplifies prediction error by ``sigma/alpha`` (about 2e4 at the highest
    timestep of the cosine schedule) and the recursion diverges.
    """
    d = token_dim if token_dim is not None else getattr(denoiser, "token_dim")
    taus = respace_timesteps(sched.total_steps, steps)
    alpha_bar = sched.alpha_bar.to(z.dtype)
    x = temperature * torch.randn(*z.shape[:-1], d, generator=generator, dtype=z.dtype)
    for i, tau in enumerate(taus):
        prev = taus[i + 1] if i + 1 < len(taus) else 0
        ab_t = alpha_bar[tau]
        ab_prev = alpha_bar[prev]
        beta = 1.0 - ab_t / ab_prev
        eps = denoiser(x, torch.full(x.shape[:-1], tau, dtype=torch.long), z)
        x0_hat = (x - (1.0 - ab_t).sqrt() * eps) / ab_t.sqrt()
        if x0_clamp is not None:
            x0_hat = x0_hat.clamp(-x0_clamp, x0_clamp)
        mean = (ab_prev.sqrt() * beta / (1.0 - ab_t)) * x0_hat + ((ab_t / ab_prev).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t)) * x
        var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
        noise = torch.randn(x.shape, generator=generator, dtype=x.dtype)
        x = mean + temperature * var.sqrt() * noise if prev > 0 else mean
    if not torch.isfinite(x).all():
        raise FloatingPointError("non-finite sampled tokens")
    return x
