"""Binary tensor container.

Layout (all integers little-endian):

    magic  "FAR1"
    u16    format version (currently 1)
    u32    metadata length, then that many bytes of UTF-8 "key=value" lines
    repeated named tensors until 4 bytes remain:
        u32  name length, then the name bytes (UTF-8)
        u32  rank, then rank u32 dims
        fp32 payload, row-major
    u32    CRC32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np
import torch

__all__ = ["CheckpointError", "FORMAT_VERSION", "MAGIC", "read_container", "write_container"]

MAGIC = b"FAR1"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Raised for malformed, truncated, corrupted or incompatible containers."""


def format_metadata(metadata: dict[str, str]) -> bytes:
    lines = []
    for key, value in metadata.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise ValueError(f"metadata key/value not representable: {key!r}")
        lines.append(f"{key}={value}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_metadata(blob: bytes) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed metadata line {line!r}")
        out[key.strip()] = value.strip()
    return out


def write_container(path: str | Path, metadata: dict[str, str], tensors: dict[str, torch.Tensor]) -> None:
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION)]
    meta = format_metadata(metadata)
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    for name, tensor in tensors.items():
        name_bytes = name.encode("utf-8")
        array = tensor.detach().to(torch.float32).cpu().numpy()
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.astype("<f4").tobytes())
    body = b"".join(parts)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_container(path: str | Path) -> tuple[dict[str, str], dict[str, torch.Tensor]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(MAGIC) + 2 + 4 + 4:
        raise CheckpointError(f"truncated checkpoint {path}")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic in {path}, not a FAR1 container")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"checksum failure in {path}")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob) - 4:
            raise CheckpointError(f"truncated checkpoint {path}")
        out = blob[pos : pos + n]
        pos += n
        return out

    (version,) = struct.unpack("<H", take(2))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}, expected {FORMAT_VERSION}")
    (meta_len,) = struct.unpack("<I", take(4))
    metadata = parse_metadata(take(meta_len))
    tensors: dict[str, torch.Tensor] = {}
    while pos < len(blob) - 4:
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = torch.from_numpy(data.copy())
    return metadata, tensors
