"""Binary PGM (P5) / PPM (P6) writers and readers, 8-bit."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

__all__ = ["read_pgm", "read_ppm", "write_image", "write_pgm", "write_ppm"]


def _to_bytes(img: torch.Tensor) -> np.ndarray:
    arr = img.detach().cpu().numpy()
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: str | Path, img: torch.Tensor) -> None:
    """Write a grayscale image ((h, w) or (h, w, 1), values in [0, 1])."""
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ValueError("PGM holds a single channel; use write_ppm for colour")
        img = img[:, :, 0]
    data = _to_bytes(img)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def write_ppm(path: str | Path, img: torch.Tensor) -> None:
    """Write an RGB image ((h, w, 3), values in [0, 1])."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM needs an (h, w, 3) image")
    data = _to_bytes(img)
    header = f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def write_image(path: str | Path, img: torch.Tensor) -> None:
    if img.ndim == 3 and img.shape[2] == 3:
        write_ppm(path, img)
    else:
        write_pgm(path, img)


def _read_netpbm(path: str | Path, magic: bytes) -> np.ndarray:
    blob = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != magic:
        raise ValueError(f"expected {magic!r} file, got {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only 8-bit images are supported")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    data = np.frombuffer(blob, dtype=np.uint8, count=height * width * channels, offset=pos)
    return data.reshape(height, width, channels)


def read_pgm(path: str | Path) -> torch.Tensor:
    """Read a P5 file into an (h, w, 1) float tensor in [0, 1]."""
    return torch.from_numpy(_read_netpbm(path, b"P5").astype(np.float32) / 255.0)


def read_ppm(path: str | Path) -> torch.Tensor:
    """Read a P6 file into an (h, w, 3) float tensor in [0, 1]."""
    return torch.from_numpy(_read_netpbm(path, b"P6").astype(np.float32) / 255.0)
