"""Checkpoint blobs: magic, little-endian header length, JSON header, raw tensors.

Tensor bytes are written in sorted-name order with offsets recorded in the
header, so identical parameters always give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"LUMIFRG\x00"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, kind: str, header: dict, state: dict[str, torch.Tensor]) -> None:
    tensors, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = state[name].detach().cpu().contiguous().numpy()
        raw = arr.tobytes()
        tensors.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    doc = dict(header, kind=kind, format_version=FORMAT_VERSION, tensors=tensors)
    head = json.dumps(doc, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a lumiforge checkpoint")
    (n,) = struct.unpack("<Q", fh.read(8))
    doc = json.loads(fh.read(n).decode("utf-8"))
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {doc.get('format_version')}")
    return doc


def load_checkpoint(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, torch.Tensor]]:
    with open(path, "rb") as fh:
        doc = _read_header(fh, path)
        if kind is not None and doc["kind"] != kind:
            raise CheckpointError(f"{path} holds a {doc['kind']!r} checkpoint, expected {kind!r}")
        payload = fh.read()
    state = {}
    for t in doc["tensors"]:
        raw = payload[t["offset"]:t["offset"] + t["nbytes"]]
        if len(raw) != t["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {t['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(t["dtype"])).reshape(t["shape"]).copy()
        state[t["name"]] = torch.from_numpy(arr)
    return doc, state
