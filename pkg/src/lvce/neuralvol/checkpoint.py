"""Single-file checkpoints: ``LVCE1`` magic, JSON header, little-endian float32 arrays.

Layout::

    b"LVCE1"            magic
    uint32              length of the UTF-8 JSON header
    JSON                {"format_version": 1, "config": {...}, "meta": {...},
                         "tensors": [{"name": ..., "shape": [...]}, ...]}
    float32[...]        each tensor in header order, C order, little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import LVCEError
from .tensor import Tensor
from .vnet import VNetConfig, VNetModel

MAGIC = b"LVCE1"


class CheckpointError(LVCEError):
    pass


def save_checkpoint(model: VNetModel, path, meta: dict | None = None) -> Path:
    header = {
        "format_version": 1,
        "config": model.config.to_dict(),
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in model],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    for _, t in model:
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path, dtype=np.float32) -> tuple[VNetModel, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an LVCE1 checkpoint")
    (n,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(raw[start : start + n])
    offset = start + n
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = Tensor(arr.astype(dtype), requires_grad=True)
        offset += 4 * count
    return VNetModel(VNetConfig.from_dict(header["config"]), params), header.get("meta", {})
