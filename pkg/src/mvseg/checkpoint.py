"""Versioned, checksummed model checkpoints.

File layout::

    b"MVSEGCKP"                 8-byte magic
    <uint64 little-endian>      header length in bytes
    <header JSON, UTF-8>        {"format_version", "config", "entries": [...]}
    <blobs>                     raw little-endian tensor bytes, in entry order

Each entry records ``name``, ``dtype``, ``shape``, ``offset``, ``nbytes`` and
the SHA-256 of its bytes. Serialization is deterministic, so save -> load ->
save reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .config import config_to_dict, model_config_from_dict
from .model import MultiViewSegmenter

MAGIC = b"MVSEGCKP"
FORMAT_VERSION = 1
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class CheckpointError(ValueError):
    """Raised when a checkpoint fails a version, shape, checksum or config check."""


def save_checkpoint(model: MultiViewSegmenter, path: str | os.PathLike) -> Path:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().contiguous().numpy()
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": str(arr.dtype),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
                "sha256": hashlib.sha256(data).hexdigest(),
            }
        )
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(model.cfg),
        "entries": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for data in blobs:
            fh.write(data)
    return path


def read_header(path: str | os.PathLike) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (length,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    return header, raw[16 + length :]


def load_checkpoint(path: str | os.PathLike, model: MultiViewSegmenter | None = None) -> MultiViewSegmenter:
    """Load weights, building the model from the stored config when none is given."""
    header, body = read_header(path)
    cfg = model_config_from_dict(header["config"])
    if model is None:
        model = MultiViewSegmenter(cfg)
    else:
        stored, current = header["config"], config_to_dict(model.cfg)
        for key in sorted(set(stored) | set(current)):
            if stored.get(key) != current.get(key):
                raise CheckpointError(
                    f"config mismatch on {key!r}: checkpoint has {stored.get(key)!r}, model has {current.get(key)!r}"
                )
    state = model.state_dict()
    names = [e["name"] for e in header["entries"]]
    if set(names) != set(state):
        missing = sorted(set(state) - set(names))
        extra = sorted(set(names) - set(state))
        raise CheckpointError(f"parameter names differ: missing {missing[:3]}, unexpected {extra[:3]}")
    loaded = {}
    for e in header["entries"]:
        data = body[e["offset"] : e["offset"] + e["nbytes"]]
        if len(data) != e["nbytes"] or hashlib.sha256(data).hexdigest() != e["sha256"]:
            raise CheckpointError(f"checksum mismatch for {e['name']!r}")
        expected = list(state[e["name"]].shape)
        if e["shape"] != expected:
            raise CheckpointError(f"shape mismatch for {e['name']!r}: {e['shape']} vs {expected}")
        if e["dtype"] not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {e['dtype']!r} for {e['name']!r}")
        arr = np.frombuffer(data, dtype=np.dtype(e["dtype"]).newbyteorder("<")).reshape(e["shape"])
        loaded[e["name"]] = torch.from_numpy(arr.copy())
    dtype = _DTYPES[header["entries"][0]["dtype"]] if header["entries"] else torch.float32
    model.to(dtype)
    model.load_state_dict(loaded)
    return model
