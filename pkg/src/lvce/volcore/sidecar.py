"""JSON sidecars for reapplying ses-01 preprocessing parameters to ses-02."""

from __future__ import annotations

import json
from pathlib import Path

from .volume import BoundingBox


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_crop_sidecar(path, box: BoundingBox, target_dims=None) -> Path:
    doc = {"kind": "crop_box", **box.to_dict()}
    if target_dims is not None:
        doc["target_dims"] = list(target_dims)
    return write_json(path, doc)


def read_crop_sidecar(path) -> BoundingBox:
    return BoundingBox.from_dict(read_json(path))


def write_range_sidecar(path, lo: float, hi: float, volumes) -> Path:
    return write_json(path, {"kind": "joint_minmax", "min": lo, "max": hi, "volumes": list(volumes)})


def read_range_sidecar(path) -> tuple[float, float]:
    doc = read_json(path)
    return float(doc["min"]), float(doc["max"])
