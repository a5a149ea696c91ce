"""Synthetic desk-scale datasets.

Two kinds: ``shapes`` draws one of four bright geometric figures (filled
circle, filled square, cross, horizontal stripes) at randomised position,
scale and intensity over a noisy dark background; ``gaussian-field`` samples
random fields whose radial power spectrum falls off as ``(1+r)^(-exponent)``,
one exponent per class.  Generation is deterministic given the spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = ["SyntheticDatasetSpec", "generate_dataset"]

SHAPES = "shapes"
GAUSSIAN_FIELD = "gaussian-field"
SHAPE_CLASS_NAMES = ("circle", "square", "cross", "stripes")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    kind: str = SHAPES
    side: int = 16
    num_classes: int = 4
    samples_per_class: int = 500
    spectral_exponent: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (SHAPES, GAUSSIAN_FIELD):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == SHAPES and self.num_classes != len(SHAPE_CLASS_NAMES):
            raise ValueError(f"shapes dataset has exactly {len(SHAPE_CLASS_NAMES)} classes")
        if self.kind == GAUSSIAN_FIELD and self.num_classes < 1:
            raise ValueError("need at least one class")
        if self.side < 4:
            raise ValueError(f"side {self.side} too small")
        if self.samples_per_class < 1:
            raise ValueError("need at least one sample per class")


def _shape_image(class_id: int, side: int, g: torch.Generator) -> torch.Tensor:
    def uniform(lo: float, hi: float) -> float:
        return lo + (hi - lo) * torch.rand((), generator=g).item()

    img = (0.10 + 0.04 * torch.randn(side, side, generator=g)).clamp(0.0, 0.30)
    fg = uniform(0.65, 1.0)
    scale = side / 16.0
    cy = side / 2.0 - 0.5 + uniform(-1.5, 1.5) * scale
    cx = side / 2.0 - 0.5 + uniform(-1.5, 1.5) * scale
    ys = torch.arange(side, dtype=torch.float64)[:, None] - cy
    xs = torch.arange(side, dtype=torch.float64)[None, :] - cx

    if class_id == 0:  # filled circle
        r = uniform(2.8, 4.0) * scale
        sel = ys**2 + xs**2 <= r**2
    elif class_id == 1:  # filled square
        half = uniform(4.3, 5.6) * scale
        sel = (ys.abs() <= half) & (xs.abs() <= half)
    elif class_id == 2:  # cross
        t = uniform(0.8, 1.4) * scale
        arm = uniform(4.8, 6.6) * scale
        sel = ((ys.abs() <= t) & (xs.abs() <= arm)) | ((xs.abs() <= t) & (ys.abs() <= arm))
    elif class_id == 3:  # horizontal stripes
        period = 4.0 * scale
        phase = uniform(0.0, period)
        rows = torch.arange(side, dtype=torch.float64)
        sel = ((rows + phase) % period < period / 2.0)[:, None] & torch.ones(1, side, dtype=torch.bool)
    else:
        raise ValueError(f"shapes class id {class_id} out of range")
    img[sel] = fg
    return img


def _gaussian_field_image(exponent: float, side: int, g: torch.Generator) -> torch.Tensor:
    ky = torch.fft.fftfreq(side, dtype=torch.float64) * side
    kx = torch.fft.fftfreq(side, dtype=torch.float64) * side
    radius = torch.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)
    amplitude = (1.0 + radius) ** (-exponent / 2.0)
    noise = torch.randn(side, side, generator=g, dtype=torch.float64)
    field = torch.fft.ifft2(torch.fft.fft2(noise) * amplitude).real
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else torch.full_like(field, 0.5)


def generate_dataset(spec: SyntheticDatasetSpec) -> tuple[torch.Tensor, torch.Tensor]:
    """Return images ``(n, side, side, 1)`` in [0, 1] float32 and labels ``(n,)``."""
    g = torch.Generator().manual_seed(spec.seed)
    images = []
    labels = []
    for class_id in range(spec.num_classes):
        for _ in range(spec.samples_per_class):
            if spec.kind == SHAPES:
                img = _shape_image(class_id, spec.side, g)
            else:
                img = _gaussian_field_image(spec.spectral_exponent + class_id, spec.side, g)
            images.append(img.to(torch.float32))
            labels.append(class_id)
    return torch.stack(images).unsqueeze(-1), torch.tensor(labels, dtype=torch.long)


def class_means(images: torch.Tensor, labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """Per-class mean image, used by the nearest-class-mean pixel classifier."""
    return torch.stack([images[labels == c].mean(dim=0) for c in range(num_classes)])


def nearest_class_mean(images: torch.Tensor, means: torch.Tensor) -> torch.Tensor:
    """Classify each image by the closest class mean in pixel space."""
    flat = images.reshape(images.shape[0], -1)
    centers = means.reshape(means.shape[0], -1)
    return torch.cdist(flat, centers).argmin(dim=1)
