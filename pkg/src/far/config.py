"""Flat ``key = value`` configuration.

One entry per line, ``#`` starts a comment, unknown keys are errors.  The same
schema is used for config files, command-line overrides and the checkpoint
metadata block, so a training run is fully reproducible from its checkpoint.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ConfigError", "TrainConfig", "apply_overrides", "config_to_text", "load_config", "parse_config_text"]


class ConfigError(Exception):
    """Raised for unknown keys, malformed lines or out-of-range values."""


@dataclass(frozen=True)
class TrainConfig:
    # dataset
    dataset_kind: str = "shapes"
    image_side: int = 16
    num_classes: int = 4
    samples_per_class: int = 500
    spectral_exponent: float = 1.0
    dataset_seed: int = 0
    # tokenizer
    patch_size: int = 2
    # frequency decomposition
    levels: int = 8
    filter_kind: str = "spatial-downup"
    # transformer
    model_width: int = 128
    model_depth: int = 4
    model_heads: int = 4
    # denoiser
    mlp_width: int = 256
    mlp_depth: int = 3
    time_embed_dim: int = 64
    diffusion_steps: int = 1000
    # optimisation
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.02
    ema_rate: float = 0.995
    grad_clip: float = 1.0
    warmup_steps: int = 100
    class_drop_prob: float = 0.1
    seed: int = 0
    # technique toggles
    use_mask: bool = True
    use_ftl: bool = True
    use_dms: bool = True
    # mask schedule
    mask_r_lo: float = 0.7
    mask_r_hi: float = 0.0
    # sampling defaults (0 ar_steps means "one step per level")
    ar_steps: int = 0
    diffusion_min_steps: int = 40
    diffusion_max_steps: int = 100
    temperature: float = 1.0
    guidance_scale: float = 1.0
    inference_mask_ratio: float = 0.0
    class_id: int = 0
    n_samples: int = 64
    # io
    checkpoint_interval: int = 1000

    def validate(self) -> "TrainConfig":
        positive = (
            "image_side", "num_classes", "samples_per_class", "patch_size", "model_width", "model_depth",
            "model_heads", "mlp_width", "mlp_depth", "time_embed_dim", "batch_size", "checkpoint_interval",
        )
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.levels < 2:
            raise ConfigError("levels must be >= 2")
        if self.diffusion_steps < 2:
            raise ConfigError("diffusion_steps must be >= 2")
        if self.epochs < 0 or self.warmup_steps < 0:
            raise ConfigError("epochs and warmup_steps must be >= 0")
        if not 0.0 <= self.ema_rate < 1.0:
            raise ConfigError("ema_rate must lie in [0, 1)")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if not 0.0 <= self.class_drop_prob <= 1.0:
            raise ConfigError("class_drop_prob must lie in [0, 1]")
        if not 0.0 <= self.mask_r_hi <= self.mask_r_lo <= 1.0:
            raise ConfigError("need 0 <= mask_r_hi <= mask_r_lo <= 1")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigError("learning_rate, weight_decay and grad_clip must be >= 0")
        if self.image_side % self.patch_size:
            raise ConfigError("image_side must be divisible by patch_size")
        if not 1 <= self.diffusion_min_steps <= self.diffusion_max_steps <= self.diffusion_steps:
            raise ConfigError("need 1 <= diffusion_min_steps <= diffusion_max_steps <= diffusion_steps")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if not 0.0 <= self.inference_mask_ratio < 1.0:
            raise ConfigError("inference_mask_ratio must lie in [0, 1)")
        if self.ar_steps < 0:
            raise ConfigError("ar_steps must be >= 0 (0 selects one step per level)")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key].type
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """Split config text into raw key/value strings; last duplicate wins."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        out[key.strip()] = value.strip()
    return out


def apply_overrides(config: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    unknown = sorted(set(overrides) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {key: _coerce(key, raw) for key, raw in overrides.items()}
    return dataclasses.replace(config, **values).validate()


def load_config(path: str | Path) -> TrainConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return apply_overrides(TrainConfig(), parse_config_text(p.read_text()))


def config_to_text(config: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(config, f.name)
        lines.append(f"{f.name} = {str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"
