"""Self-describing checkpoint container.

Layout::

    b"MAGCRN-CKPT 1\\n"
    8-byte little-endian unsigned header length
    UTF-8 JSON header: {"config": ..., "meta": ..., "tensors": [{"name", "group",
                        "shape", "offset"}, ...]}
    raw float64 little-endian values, tensors back to back in directory order

``offset`` counts bytes from the start of the value block. The header is
written with sorted keys and fixed separators so identical content gives
identical bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MAGCRN-CKPT 1\n"
GROUPS = ("param", "buffer", "scaler")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    scaler: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def groups(self) -> dict[str, Mapping[str, np.ndarray]]:
        return {"param": self.params, "buffer": self.buffers, "scaler": self.scaler}


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory, chunks, offset = [], [], 0
    for group, tensors in ckpt.groups().items():
        for name, arr in tensors.items():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            directory.append({"name": name, "group": group, "shape": list(np.shape(arr)), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    header = json.dumps(
        {"config": ckpt.config, "meta": ckpt.meta, "tensors": directory},
        sort_keys=True, separators=(",", ":"), allow_nan=False,
    ).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def from_bytes(blob: bytes) -> Checkpoint:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    header = json.loads(blob[pos:pos + hlen].decode())
    body = memoryview(blob)[pos + hlen:]
    out = Checkpoint(header["config"], {}, {}, {}, header.get("meta", {}))
    target = out.groups()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + 8 * count > len(body):
            raise CheckpointError(f"tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(body[start:start + 8 * count], dtype="<f8").astype(np.float64).reshape(shape)
        if entry["group"] not in target:
            raise CheckpointError(f"unknown tensor group {entry['group']!r}")
        target[entry["group"]][entry["name"]] = arr
    return out


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
