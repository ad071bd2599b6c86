"""Portable model checkpoint files.

Layout: magic ``MNC1``, little-endian u32 header length, JSON header
(format version, model kind, ordered layer manifest with names/shapes/dtype,
normalization statistics, config hash, seed, metrics), raw little-endian
float32 parameter payload in manifest order, and a trailing CRC32 over
header + payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"MNC1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Structurally invalid checkpoint file."""


class CheckpointCorruptError(CheckpointError):
    """Checkpoint failed its CRC32 integrity check."""


@dataclass
class Checkpoint:
    """In-memory form of a checkpoint file."""

    model_kind: str
    arrays: list[tuple[str, np.ndarray]]
    normalization: Optional[dict] = None
    config_hash: str = ""
    seed: Optional[int] = None
    metrics: dict = field(default_factory=dict)

    def array_dict(self) -> dict[str, np.ndarray]:
        return dict(self.arrays)


def save(path, ckpt: Checkpoint) -> None:
    manifest = []
    payload = bytearray()
    for name, arr in ckpt.arrays:
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "float32"})
        payload += arr32.tobytes()
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": ckpt.model_kind,
        "layers": manifest,
        "normalization": ckpt.normalization,
        "config_hash": ckpt.config_hash,
        "seed": ckpt.seed,
        "metrics": ckpt.metrics,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    crc = zlib.crc32(header_bytes + bytes(payload)) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(bytes(payload))
        f.write(struct.pack("<I", crc))


def load(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", raw[4:8])
    header_end = 8 + header_len
    if len(raw) < header_end + 4:
        raise CheckpointError(f"{path}: truncated header")
    header_bytes = raw[8:header_end]
    payload = raw[header_end:-4]
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    crc = zlib.crc32(header_bytes + payload) & 0xFFFFFFFF
    if crc != stored_crc:
        raise CheckpointCorruptError(f"{path}: CRC mismatch (stored {stored_crc:#x}, computed {crc:#x})")
    header = json.loads(header_bytes)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")

    arrays = []
    offset = 0
    for entry in header["layers"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = n * 4
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: payload shorter than layer manifest claims")
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(entry["shape"])
        arrays.append((entry["name"], arr.copy()))
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return Checkpoint(
        model_kind=header["model_kind"],
        arrays=arrays,
        normalization=header.get("normalization"),
        config_hash=header.get("config_hash", ""),
        seed=header.get("seed"),
        metrics=header.get("metrics", {}),
    )


def params_digest(arrays: Sequence[tuple[str, np.ndarray]]) -> str:
    """SHA-256 over parameter names and float32 bytes, in manifest order."""
    import hashlib

    h = hashlib.sha256()
    for name, arr in arrays:
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()
