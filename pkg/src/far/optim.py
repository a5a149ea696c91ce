"""AdamW with decoupled weight decay, plus an exponential moving average of
named parameters.  Both expose their state as plain tensor dictionaries so the
checkpoint container can persist them."""

from __future__ import annotations

import torch

__all__ = ["AdamW", "Ema"]


class AdamW:
    """Decoupled-weight-decay Adam over a dict of named parameters.

    Update per step t (bias-corrected):
        m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
        p <- p * (1 - lr*wd)
        p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """

    def __init__(
        self,
        params: dict[str, torch.Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.95),
        eps: float = 1e-8,
        weight_decay: float = 0.02,
    ):
        if lr < 0 or eps <= 0:
            raise ValueError("invalid lr/eps")
        if not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ValueError(f"invalid betas {betas}")
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.exp_avg_sq = {k: torch.zeros_like(p) for k, p in self.params.items()}

    @torch.no_grad()
    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.exp_avg[name]
            v = self.exp_avg_sq[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            if self.weight_decay:
                p.mul_(1.0 - lr * self.weight_decay)
            denom = (v / c2).sqrt_().add_(self.eps)
            p.addcdiv_(m / c1, denom, value=-lr)

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out = {f"opt.m.{k}": t for k, t in self.exp_avg.items()}
        out.update({f"opt.v.{k}": t for k, t in self.exp_avg_sq.items()})
        return out

    def load_state_tensors(self, tensors: dict[str, torch.Tensor], step_count: int) -> None:
        self.step_count = step_count
        for k in self.params:
            self.exp_avg[k].copy_(tensors[f"opt.m.{k}"])
            self.exp_avg_sq[k].copy_(tensors[f"opt.v.{k}"])


class Ema:
    """Shadow copy updated as ``shadow <- rate*shadow + (1-rate)*param``,
    evaluated in the incremental form so a stationary parameter leaves the
    shadow bit-identical."""

    def __init__(self, params: dict[str, torch.Tensor], rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"EMA rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.shadow = {k: p.detach().clone() for k, p in params.items()}

    @torch.no_grad()
    def update(self, params: dict[str, torch.Tensor]) -> None:
        for k, p in params.items():
            self.shadow[k].add_(p - self.shadow[k], alpha=1.0 - self.rate)

    def copy_to(self, params: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for k, p in params.items():
                p.copy_(self.shadow[k])
