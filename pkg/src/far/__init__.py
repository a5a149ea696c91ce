"""Frequency-progressive autoregressive image generation with continuous tokens."""

from .config import ConfigError, TrainConfig
from .dataset import SyntheticDatasetSpec, generate_dataset
from .diffloss import (
    DenoiserMlp,
    NoiseSchedule,
    allocate_steps,
    diffusion_loss,
    level_weight,
    perturb,
    sample_tokens,
)
from .generator import SampleConfig, eval_diversity, eval_spectrum_match, generate, generate_batch, plan_levels
from .model import FarModel
from .schedules import MaskPlan, MaskSchedule, mask_lower_bound, sample_mask
from .spectral import (
    FrequencySchedule,
    decompose,
    fourier_lowpass,
    icr_continuous,
    icr_discrete,
    radial_power_spectrum,
    spatial_downup,
)
from .tokenizer import TokenizerStats, fit_stats, patchify, unpatchify
from .trainer import TrainState, build_state, load_checkpoint, save_checkpoint, train, train_step

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DenoiserMlp",
    "FarModel",
    "FrequencySchedule",
    "MaskPlan",
    "MaskSchedule",
    "NoiseSchedule",
    "SampleConfig",
    "SyntheticDatasetSpec",
    "TokenizerStats",
    "TrainConfig",
    "TrainState",
    "allocate_steps",
    "build_state",
    "decompose",
    "diffusion_loss",
    "eval_diversity",
    "eval_spectrum_match",
    "fit_stats",
    "fourier_lowpass",
    "generate",
    "generate_batch",
    "generate_dataset",
    "icr_continuous",
    "icr_discrete",
    "level_weight",
    "load_checkpoint",
    "mask_lower_bound",
    "patchify",
    "perturb",
    "plan_levels",
    "radial_power_spectrum",
    "sample_mask",
    "sample_tokens",
    "save_checkpoint",
    "spatial_downup",
    "train",
    "train_step",
    "unpatchify",
]
