"""Binary checkpoint format.

Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header,
then raw little-endian tensor blobs. The header carries the format version,
an arbitrary config/meta dict, and a tensor manifest with shapes and byte
offsets. Re-loading restores every array bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from lgdist.errors import CheckpointError

MAGIC = b"LGDISTCK"
CKPT_FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _dtype_tag(arr: np.ndarray) -> str:
    tag = arr.dtype.newbyteorder("<").str
    if tag not in _DTYPES:
        raise CheckpointError(f"unsupported checkpoint dtype {arr.dtype}")
    return tag


def save_checkpoint(path, kind: str, config: dict, tensors: dict[str, np.ndarray], meta: dict | None = None):
    manifest = []
    offset = 0
    blobs = []
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name])
        tag = _dtype_tag(arr)
        raw = arr.astype(tag, copy=False).tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": tag, "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": CKPT_FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "meta": meta or {},
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path.name}: not a checkpoint file")
    hlen = int.from_bytes(data[8:16], "little")
    header = json.loads(data[16 : 16 + hlen].decode())
    if header.get("format_version") != CKPT_FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint format version {header.get('format_version')!r}")
    blob_start = 16 + hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start = blob_start + entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    return header, tensors
