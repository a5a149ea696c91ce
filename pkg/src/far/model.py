"""Bidirectional transformer mapping a (possibly masked) token grid at one
frequency level to per-position conditioning vectors.

Masked positions are replaced by a learned mask embedding before the learned
positional and level embeddings are added; the class embedding is prepended as
a prefix token that attends and is attended like any other position.  There is
no causal mask: every level predicts all positions simultaneously.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .schedules import MaskPlan

__all__ = ["FarModel", "model_backward"]


def _index_vector(value: torch.Tensor | int, batch: int, name: str) -> torch.Tensor:
    v = torch.as_tensor(value, dtype=torch.long).reshape(-1)
    if v.numel() == 1:
        v = v.expand(batch)
    if v.numel() != batch:
        raise ValueError(f"{name} must be a scalar or have one entry per sample")
    return v


class _Attention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, w = x.shape
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, w)
        return self.proj(out)


class _Block(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = _Attention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class FarModel(nn.Module):
    """Frequency-progressive autoregressive transformer.

    The last class-embedding row (index ``num_classes``) is the unconditional
    token used for classifier-free guidance.
    """

    def __init__(
        self,
        grid_h: int,
        grid_w: int,
        token_dim: int,
        levels: int,
        num_classes: int,
        width: int = 128,
        depth: int = 4,
        heads: int = 4,
        z_dim: int | None = None,
    ):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        if min(grid_h, grid_w, token_dim, levels, num_classes, width, depth, heads) < 1:
            raise ValueError("all model dimensions must be positive")
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.token_dim = token_dim
        self.levels = levels
        self.num_classes = num_classes
        self.z_dim = z_dim if z_dim is not None else width

        self.token_proj = nn.Linear(token_dim, width)
        self.mask_token = nn.Parameter(torch.zeros(width))
        self.pos_embed = nn.Parameter(torch.zeros(grid_h * grid_w, width))
        self.level_embed = nn.Embedding(levels, width)
        self.class_embed = nn.Embedding(num_classes + 1, width)
        self.blocks = nn.ModuleList(_Block(width, heads) for _ in range(depth))
        self.out_norm = nn.LayerNorm(width)
        self.out_proj = nn.Linear(width, self.z_dim)

    @property
    def unconditional_class_id(self) -> int:
        return self.num_classes

    def init_weights(self, generator: torch.Generator) -> None:
        for name, p in self.named_parameters():
            if name == "mask_token" or "embed" in name:
                p.data.normal_(0.0, 0.02, generator=generator)
            elif p.ndim >= 2:
                bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
                p.data.uniform_(-bound, bound, generator=generator)
            elif "norm" in name and name.endswith("weight"):
                p.data.fill_(1.0)
            else:
                p.data.zero_()

    def forward(
        self,
        tokens: torch.Tensor,
        mask: torch.Tensor | MaskPlan | None,
        class_ids: torch.Tensor | int,
        level: torch.Tensor | int,
    ) -> torch.Tensor:
        """Return conditioning vectors ``z`` for every grid position.

        ``tokens`` is ``(h, w, d)`` or ``(batch, h, w, d)``; ``mask`` marks
        positions whose values are replaced by the mask embedding; ``level``
        is 1-based and may vary per sample.
        """
        squeeze = tokens.ndim == 3
        if squeeze:
            tokens = tokens.unsqueeze(0)
        b, h, w, d = tokens.shape
        if (h, w, d) != (self.grid_h, self.grid_w, self.token_dim):
            raise ValueError(f"grid shape {(h, w, d)} does not match model {(self.grid_h, self.grid_w, self.token_dim)}")
        if isinstance(mask, MaskPlan):
            mask = mask.mask
        class_ids = _index_vector(class_ids, b, "class_ids")
        level = _index_vector(level, b, "level")
        if (class_ids < 0).any() or (class_ids > self.num_classes).any():
            raise ValueError("class id out of range")
        if (level < 1).any() or (level > self.levels).any():
            raise ValueError(f"level out of range [1, {self.levels}]")

        x = self.token_proj(tokens.reshape(b, h * w, d))
        if mask is not None:
            flat = mask.reshape(1, h * w) if mask.ndim == 2 else mask.reshape(b, h * w)
            x = torch.where(flat[..., None], self.mask_token.to(x.dtype), x)
        x = x + self.pos_embed + self.level_embed(level - 1)[:, None, :]
        prefix = self.class_embed(class_ids)[:, None, :]
        x = torch.cat([prefix, x], dim=1)
        for block in self.blocks:
            x = block(x)
        z = self.out_proj(self.out_norm(x[:, 1:, :]))
        if not torch.isfinite(z).all():
            raise FloatingPointError("non-finite transformer activations")
        z = z.reshape(b, h, w, self.z_dim)
        return z.squeeze(0) if squeeze else z


def model_backward(
    model: FarModel,
    tokens: torch.Tensor,
    mask: torch.Tensor | MaskPlan | None,
    class_ids: torch.Tensor | int,
    level: torch.Tensor | int,
    upstream: torch.Tensor,
) -> tuple[dict[str, torch.Tensor], torch.Tensor]:
    """Gradients of ``sum(z * upstream)`` w.r.t. every parameter and the input tokens."""
    tokens = tokens.detach().requires_grad_(True)
    model.zero_grad(set_to_none=True)
    z = model(tokens, mask, class_ids, level)
    z.backward(upstream)
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    token_grad = tokens.grad.detach().clone() if tokens.grad is not None else torch.zeros_like(tokens)
    if any(not torch.isfinite(g).all() for g in grads.values()) or not torch.isfinite(token_grad).all():
        raise FloatingPointError("non-finite gradients")
    return grads, token_grad
