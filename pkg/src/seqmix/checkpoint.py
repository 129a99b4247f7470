"""Versioned checkpoint container shared by the sequence and label models.

Layout: magic b"SQMXCKPT", u32 version, u32 header length, JSON header
(sorted keys) describing kind, config snapshot, extra metadata and the
parameter manifest (name, shape, dtype, byte offset), followed by the raw
parameter bytes in manifest order. Writing the same model twice produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

CKPT_MAGIC = b"SQMXCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, kind: str, arrays: dict[str, np.ndarray],
                    config: dict, extra: dict | None = None) -> None:
    names = sorted(arrays)
    manifest = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
        blobs.append(arr.tobytes())
    header = {
        "kind": kind,
        "config": config,
        "extra": extra or {},
        "params": manifest,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expected_kind: str | None = None):
    """Returns (kind, arrays, config dict, extra dict)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise DataFormatError(f"{path}: not a checkpoint file (magic {magic!r})")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        kind = header.get("kind")
        if expected_kind is not None and kind != expected_kind:
            raise DataFormatError(f"{path}: checkpoint kind {kind!r}, expected {expected_kind!r}")
        arrays = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(entry["dtype"])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise DataFormatError(f"{path}: truncated parameter block {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return kind, arrays, header.get("config", {}), header.get("extra", {})
