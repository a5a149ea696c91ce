"""Training loop: random level selection, filtering, masking, transformer
forward, weighted diffusion loss, AdamW updates, EMA and checkpointing.

All stochastic choices are drawn sequentially from one ``torch.Generator``
whose state travels in the checkpoint, so a resumed run consumes exactly the
same random stream as an uninterrupted one.  Batches are sampled i.i.d. per
step; an "epoch" is ``ceil(dataset / batch_size)`` steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch

from .checkpoint import CheckpointError, read_container, write_container
from .config import TrainConfig, apply_overrides, config_to_text, parse_config_text
from .dataset import SyntheticDatasetSpec, generate_dataset
from .diffloss import DenoiserMlp, NoiseSchedule, diffusion_loss, level_weight
from .model import FarModel
from .optim import AdamW, Ema
from .schedules import MaskSchedule, sample_mask_batch
from .spectral import FOURIER_MASK, SPATIAL_DOWNUP, FrequencySchedule, decompose
from .tokenizer import TokenizerStats, fit_stats, patchify_batch

__all__ = [
    "TrainState",
    "build_state",
    "dataset_spec",
    "draw_levels",
    "load_checkpoint",
    "resume",
    "save_checkpoint",
    "train",
    "train_step",
]


def dataset_spec(cfg: TrainConfig) -> SyntheticDatasetSpec:
    return SyntheticDatasetSpec(
        kind=cfg.dataset_kind,
        side=cfg.image_side,
        num_classes=cfg.num_classes,
        samples_per_class=cfg.samples_per_class,
        spectral_exponent=cfg.spectral_exponent,
        seed=cfg.dataset_seed,
    )


def frequency_schedule(cfg: TrainConfig) -> FrequencySchedule:
    grid_side = cfg.image_side // cfg.patch_size
    if cfg.filter_kind == SPATIAL_DOWNUP:
        return FrequencySchedule.linear(cfg.levels, SPATIAL_DOWNUP, side=grid_side)
    return FrequencySchedule.linear(cfg.levels, FOURIER_MASK)


@dataclass
class TrainState:
    cfg: TrainConfig
    model: FarModel
    denoiser: DenoiserMlp
    optimizer: AdamW
    ema: Ema
    stats: TokenizerStats
    freq_sched: FrequencySchedule
    mask_sched: MaskSchedule
    noise_sched: NoiseSchedule
    generator: torch.Generator
    step: int = 0

    @property
    def params(self) -> dict[str, torch.Tensor]:
        out = {f"model.{k}": p for k, p in self.model.named_parameters()}
        out.update({f"mlp.{k}": p for k, p in self.denoiser.named_parameters()})
        return out

    def ema_modules(self) -> tuple[FarModel, DenoiserMlp]:
        """Fresh model/denoiser pair carrying the EMA weights."""
        model, denoiser = _build_modules(self.cfg)
        target = {f"model.{k}": p for k, p in model.named_parameters()}
        target.update({f"mlp.{k}": p for k, p in denoiser.named_parameters()})
        self.ema.copy_to(target)
        return model, denoiser


def _build_modules(cfg: TrainConfig) -> tuple[FarModel, DenoiserMlp]:
    grid_side = cfg.image_side // cfg.patch_size
    token_dim = cfg.patch_size * cfg.patch_size
    model = FarModel(
        grid_h=grid_side,
        grid_w=grid_side,
        token_dim=token_dim,
        levels=cfg.levels,
        num_classes=cfg.num_classes,
        width=cfg.model_width,
        depth=cfg.model_depth,
        heads=cfg.model_heads,
    )
    denoiser = DenoiserMlp(
        token_dim=token_dim,
        cond_dim=model.z_dim,
        width=cfg.mlp_width,
        depth=cfg.mlp_depth,
        time_embed_dim=cfg.time_embed_dim,
    )
    return model, denoiser


def build_state(cfg: TrainConfig, stats: TokenizerStats) -> TrainState:
    cfg.validate()
    generator = torch.Generator().manual_seed(cfg.seed)
    model, denoiser = _build_modules(cfg)
    model.init_weights(generator)
    denoiser.init_weights(generator)
    params = {f"model.{k}": p for k, p in model.named_parameters()}
    params.update({f"mlp.{k}": p for k, p in denoiser.named_parameters()})
    optimizer = AdamW(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    ema = Ema(params, cfg.ema_rate)
    return TrainState(
        cfg=cfg,
        model=model,
        denoiser=denoiser,
        optimizer=optimizer,
        ema=ema,
        stats=TokenizerStats(stats.mean.float(), stats.std.float(), stats.patch_size),
        freq_sched=frequency_schedule(cfg),
        mask_sched=MaskSchedule(cfg.mask_r_lo, cfg.mask_r_hi),
        noise_sched=NoiseSchedule.cosine(cfg.diffusion_steps),
        generator=generator,
    )


def draw_levels(n: int, levels: int, generator: torch.Generator) -> torch.Tensor:
    """Per-sample training levels, uniform over [1, F-1] (level F has nothing
    left to predict)."""
    return torch.randint(1, levels, (n,), generator=generator)


def train_step(state: TrainState, images: torch.Tensor, labels: torch.Tensor) -> dict[str, float]:
    """One optimizer step on a batch of images; returns logging metrics."""
    cfg = state.cfg
    g = state.generator
    batch = images.shape[0]
    tokens = patchify_batch(images, state.stats)
    grid_h, grid_w = tokens.shape[1], tokens.shape[2]

    levels = draw_levels(batch, cfg.levels, g)
    pyramid = torch.stack(decompose(tokens, state.freq_sched))
    rows = torch.arange(batch)
    x_in = pyramid[levels - 1, rows]
    target = tokens if cfg.use_dms else pyramid[levels, rows]

    mask = None
    realized_ratio = 0.0
    if cfg.use_mask:
        mask, ratios = sample_mask_batch(batch, grid_h, grid_w, levels, cfg.levels, state.mask_sched, g)
        realized_ratio = float(ratios.mean())

    class_ids = labels.clone()
    if cfg.class_drop_prob > 0:
        dropped = torch.rand(batch, generator=g) < cfg.class_drop_prob
        class_ids[dropped] = state.model.unconditional_class_id

    z = state.model(x_in, mask, class_ids, levels)
    if cfg.use_ftl:
        weight = level_weight(levels, cfg.levels).to(torch.float32).repeat_interleave(grid_h * grid_w)
    else:
        weight = 1.0
    loss, raw_loss = diffusion_loss(
        state.denoiser,
        z.reshape(-1, state.model.z_dim),
        target.reshape(-1, state.model.token_dim),
        state.noise_sched,
        g,
        weight=weight,
    )

    for p in state.params.values():
        p.grad = None
    loss.backward()
    if not all(torch.isfinite(p.grad).all() for p in state.params.values() if p.grad is not None):
        raise FloatingPointError(f"non-finite gradients at step {state.step + 1}")
    max_norm = cfg.grad_clip if cfg.grad_clip > 0 else float("inf")
    grad_norm = torch.nn.utils.clip_grad_norm_(state.params.values(), max_norm)
    lr = cfg.learning_rate
    if cfg.warmup_steps > 0:
        lr *= min(1.0, (state.step + 1) / cfg.warmup_steps)
    state.optimizer.step(lr=lr)
    state.ema.update(state.params)
    state.step += 1
    return {
        "step": state.step,
        "level": float(levels.double().mean()),
        "loss": float(raw_loss),
        "weighted_loss": float(loss.detach()),
        "grad_norm": float(grad_norm),
        "mask_ratio": realized_ratio,
    }


def steps_per_epoch(cfg: TrainConfig, dataset_size: int) -> int:
    return math.ceil(dataset_size / cfg.batch_size)


def train(
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    log_fn: Callable[[dict[str, float]], None] | None = None,
    max_steps: int | None = None,
) -> TrainState:
    """Full training run from scratch; writes periodic checkpoints when
    ``out_dir`` is given and returns the final state."""
    cfg.validate()
    images, labels = generate_dataset(dataset_spec(cfg))
    stats = fit_stats(images, cfg.patch_size)
    state = build_state(cfg, stats)
    total = cfg.epochs * steps_per_epoch(cfg, images.shape[0])
    if max_steps is not None:
        total = min(total, max_steps)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    for _ in range(total):
        idx = torch.randint(images.shape[0], (cfg.batch_size,), generator=state.generator)
        metrics = train_step(state, images[idx], labels[idx])
        if log_fn is not None:
            log_fn(metrics)
        if out_path is not None and state.step % cfg.checkpoint_interval == 0:
            save_checkpoint(out_path / f"checkpoint_{state.step:07d}.far", state)
    if out_path is not None:
        save_checkpoint(out_path / "checkpoint_final.far", state)
    return state


def resume(state: TrainState, extra_steps: int, log_fn: Callable[[dict[str, float]], None] | None = None) -> TrainState:
    """Continue a loaded run for ``extra_steps`` steps, bit-identically to an
    uninterrupted run."""
    images, labels = generate_dataset(dataset_spec(state.cfg))
    for _ in range(extra_steps):
        idx = torch.randint(images.shape[0], (state.cfg.batch_size,), generator=state.generator)
        metrics = train_step(state, images[idx], labels[idx])
        if log_fn is not None:
            log_fn(metrics)
    return state


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    metadata = dict(line.split(" = ", 1) for line in config_to_text(state.cfg).strip().splitlines())
    metadata["step"] = str(state.step)
    metadata["rng_state"] = state.generator.get_state().numpy().tobytes().hex()
    tensors: dict[str, torch.Tensor] = {}
    tensors.update(state.params)
    tensors.update({f"ema.{k}": t for k, t in state.ema.shadow.items()})
    tensors.update(state.optimizer.state_tensors())
    tensors["stats.mean"] = state.stats.mean
    tensors["stats.std"] = state.stats.std
    write_container(path, metadata, tensors)


def load_checkpoint(path: str | Path) -> TrainState:
    metadata, tensors = read_container(path)
    step = int(metadata.pop("step", "0"))
    rng_hex = metadata.pop("rng_state", "")
    cfg = apply_overrides(TrainConfig(), metadata)
    try:
        stats = TokenizerStats(tensors["stats.mean"], tensors["stats.std"], cfg.patch_size)
        state = build_state(cfg, stats)
        with torch.no_grad():
            for key, p in state.params.items():
                p.copy_(tensors[key])
            for key in state.ema.shadow:
                state.ema.shadow[key].copy_(tensors[f"ema.{key}"])
        state.optimizer.load_state_tensors(tensors, step)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} is missing tensor {exc}") from exc
    state.step = step
    if rng_hex:
        raw = torch.frombuffer(bytearray.fromhex(rng_hex), dtype=torch.uint8)
        state.generator.set_state(raw.clone())
    return state


def write_loss_log_line(handle, metrics: dict[str, float]) -> None:
    handle.write(f"{metrics['step']} {metrics['level']:.4f} {metrics['loss']:.6f} {metrics['weighted_loss']:.6f}\n")
    handle.flush()
