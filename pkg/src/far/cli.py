"""Command-line entry point.

Subcommands: ``train``, ``generate``, ``eval``, ``dataset``, ``icr``.  Config
values resolve as defaults < config file < ``key=value`` overrides.  Exit
codes: 0 success, 1 usage error, 2 IO/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError, write_container
from .config import ConfigError, TrainConfig, apply_overrides, config_to_text, load_config
from .dataset import generate_dataset
from .generator import SampleConfig, eval_diversity, eval_spectrum_match, generate, generate_batch, plan_levels
from .imageio import write_image
from .spectral import icr_continuous, icr_discrete
from .trainer import dataset_spec, load_checkpoint, save_checkpoint, train, write_loss_log_line

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _split_overrides(pairs: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs:
        item = pair.lstrip("-")
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"override {pair!r} is not of the form key=value")
        out[key] = value
    return out


def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = _split_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return apply_overrides(cfg, overrides)


def _set_threads(args: argparse.Namespace) -> None:
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("FAR_THREADS", "1"))
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    torch.set_num_threads(threads)


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="path to a key=value config file")
        p.add_argument("overrides", nargs="*", help="config overrides of the form key=value")
    p.add_argument("--output-dir", default="far_out", help="directory for outputs")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--threads", type=int, default=None, help="torch thread count (1 = deterministic mode)")


def build_parser() -> _Parser:
    parser = _Parser(prog="far", description="Frequency-progressive autoregressive image generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a synthetic dataset")
    _add_common(p)

    p = sub.add_parser("generate", help="sample an image from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class-id", type=int, default=None)
    p.add_argument("--ar-steps", type=int, default=None, help="number of autoregressive steps (<= levels)")
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--guidance", type=float, default=None)
    p.add_argument("--dump-trace", action="store_true", help="write intermediate token grids as a FAR1 container")
    p.add_argument("--no-ema", action="store_true", help="sample the raw weights instead of the EMA weights")
    _add_common(p, config=False)

    p = sub.add_parser("eval", help="spectrum-match and diversity report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-samples", type=int, default=None, help="generated samples per class")
    p.add_argument("--ar-steps", type=int, default=None)
    p.add_argument("--no-ema", action="store_true")
    _add_common(p, config=False)

    p = sub.add_parser("dataset", help="write a synthetic dataset as PGM files")
    _add_common(p)

    p = sub.add_parser("icr", help="information compression ratio of a tokenizer")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--discrete", nargs=2, type=float, metavar=("N", "F"), help="codebook size and downscale factor")
    group.add_argument("--continuous", nargs=2, type=float, metavar=("C", "F"), help="channels and downscale factor")
    return parser


def _sample_setup(args: argparse.Namespace):
    state = load_checkpoint(args.checkpoint)
    cfg = state.cfg
    if args.no_ema:
        model, denoiser = state.model, state.denoiser
    else:
        model, denoiser = state.ema_modules()
    ar_steps = args.ar_steps if args.ar_steps is not None else (cfg.ar_steps or cfg.levels)
    level_path = plan_levels(ar_steps, cfg.levels)
    return state, model, denoiser, level_path


def run_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "train_log.txt", "a") as log:
        state = train(cfg, out_dir=out_dir, log_fn=lambda m: write_loss_log_line(log, m))
    print(f"trained {state.step} steps; final checkpoint in {out_dir}")
    return 0


def run_generate(args: argparse.Namespace) -> int:
    state, model, denoiser, level_path = _sample_setup(args)
    cfg = state.cfg
    seed = args.seed if args.seed is not None else 0
    sample_cfg = SampleConfig(
        level_path=level_path,
        class_id=args.class_id if args.class_id is not None else cfg.class_id,
        seed=seed,
        temperature=args.temperature if args.temperature is not None else cfg.temperature,
        guidance_scale=args.guidance if args.guidance is not None else cfg.guidance_scale,
        inference_mask_ratio=cfg.inference_mask_ratio,
        diffusion_min_steps=cfg.diffusion_min_steps,
        diffusion_max_steps=cfg.diffusion_max_steps,
    )
    image, trace = generate(model, denoiser, state.freq_sched, state.noise_sched, state.stats, sample_cfg)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"sample_{sample_cfg.class_id}_{seed}.pgm"
    write_image(out_path, image)
    for k, step in enumerate(trace.steps, start=1):
        print(f"step {k}: level {step.level}, {step.diffusion_steps} diffusion steps, {step.seconds:.3f}s")
    if args.dump_trace:
        grids = {}
        for k, step in enumerate(trace.steps, start=1):
            grids[f"trace.{k:02d}.input"] = step.input_grid[0]
            grids[f"trace.{k:02d}.estimate"] = step.estimate_grid[0]
            grids[f"trace.{k:02d}.filtered"] = step.filtered_grid[0]
        trace_path = out_dir / f"trace_{sample_cfg.class_id}_{seed}.far"
        meta = {"kind": "trace", "class_id": str(sample_cfg.class_id), "seed": str(seed)}
        write_container(trace_path, meta, grids)
        print(f"trace written to {trace_path}")
    print(f"sample written to {out_path}")
    return 0


def run_eval(args: argparse.Namespace) -> int:
    state, model, denoiser, level_path = _sample_setup(args)
    cfg = state.cfg
    n = args.n_samples if args.n_samples is not None else cfg.n_samples
    if n < 2:
        raise UsageError("--n-samples must be >= 2")
    seed = args.seed if args.seed is not None else 0
    generator = torch.Generator().manual_seed(seed)
    images, labels = generate_dataset(dataset_spec(cfg))
    sample_cfg = SampleConfig(
        level_path=level_path,
        temperature=cfg.temperature,
        guidance_scale=cfg.guidance_scale,
        inference_mask_ratio=cfg.inference_mask_ratio,
        diffusion_min_steps=cfg.diffusion_min_steps,
        diffusion_max_steps=cfg.diffusion_max_steps,
    )
    report: dict[str, float] = {}
    all_generated = []
    for class_id in range(cfg.num_classes):
        class_ids = torch.full((n,), class_id, dtype=torch.long)
        generated, _ = generate_batch(
            model, denoiser, state.freq_sched, state.noise_sched, state.stats, sample_cfg, class_ids, generator
        )
        all_generated.append(generated)
        report[f"spectrum_match_class_{class_id}"] = eval_spectrum_match(generated, images[labels == class_id])
        report[f"diversity_class_{class_id}"] = eval_diversity(generated)
    stacked = torch.cat(all_generated)
    report["spectrum_match_overall"] = eval_spectrum_match(stacked, images)
    report["diversity_overall"] = eval_diversity(stacked)
    for key, value in report.items():
        print(f"{key} = {value:.6f}")
    return 0


def run_dataset(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    images, labels = generate_dataset(dataset_spec(cfg))
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(images.shape[0]):
        write_image(out_dir / f"class{int(labels[i])}_{i:05d}.pgm", images[i])
    (out_dir / "labels.txt").write_text("".join(f"class{int(labels[i])}_{i:05d}.pgm {int(labels[i])}\n" for i in range(images.shape[0])))
    (out_dir / "dataset_config.txt").write_text(config_to_text(cfg))
    print(f"wrote {images.shape[0]} images to {out_dir}")
    return 0


def run_icr(args: argparse.Namespace) -> int:
    if args.discrete is not None:
        n, f = args.discrete
        value = icr_discrete(int(n), f)
        print(f"icr_discrete(N={int(n)}, f={f:g}) = {value:.6f} ({value * 100:.2f}%)")
    else:
        c, f = args.continuous
        value = icr_continuous(int(c), f)
        print(f"icr_continuous(C={int(c)}, f={f:g}) = {value:.6f} ({value * 100:.2f}%)")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command != "icr":
            _set_threads(args)
        handler = {
            "train": run_train,
            "generate": run_generate,
            "eval": run_eval,
            "dataset": run_dataset,
            "icr": run_icr,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, OSError, CheckpointError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
