"""Run manifest: per-stage input/output digests that make reruns no-ops."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .. import __version__
from ..volcore.sidecar import write_json

MANIFEST_NAME = "manifest.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def params_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class StageRecord:
    params: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"params": self.params, "inputs": self.inputs, "outputs": self.outputs, "notes": self.notes}


class RunManifest:
    """Stage records keyed by stage name, stored as ``<root>/manifest.json``.

    Paths are stored relative to the run root so a run directory can be moved.
    """

    def __init__(self, root, config_hash: str):
        self.root = Path(root)
        self.config_hash = config_hash
        self.version = __version__
        self.stages: dict[str, StageRecord] = {}

    @property
    def path(self) -> Path:
        return self.root / MANIFEST_NAME

    @classmethod
    def load(cls, root, config_hash: str) -> "RunManifest":
        m = cls(root, config_hash)
        if m.path.exists():
            doc = json.loads(m.path.read_text())
            for name, rec in doc.get("stages", {}).items():
                m.stages[name] = StageRecord(rec["params"], rec["inputs"], rec["outputs"], rec.get("notes", {}))
        return m

    def save(self) -> Path:
        doc = {
            "config_hash": self.config_hash,
            "toolkit_version": self.version,
            "stages": {k: self.stages[k].to_dict() for k in sorted(self.stages)},
        }
        return write_json(self.path, doc)

    def rel(self, path) -> str:
        p = Path(path)
        try:
            return p.resolve().relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(p.resolve())

    def abs(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def digests(self, paths: Iterable) -> dict[str, str]:
        return {self.rel(p): file_digest(p) for p in sorted(Path(p) for p in paths)}

    def outputs_of(self, stage: str) -> list[Path]:
        rec = self.stages.get(stage)
        return [] if rec is None else [self.abs(p) for p in rec.outputs]

    def up_to_date(self, stage: str, params: str, inputs: dict[str, str]) -> bool:
        rec = self.stages.get(stage)
        if rec is None or rec.params != params or rec.inputs != inputs:
            return False
        for rel, digest in rec.outputs.items():
            p = self.abs(rel)
            if not p.exists() or file_digest(p) != digest:
                return False
        return True

    def run(self, stage: str, params_obj, input_paths: Iterable, fn: Callable[[], tuple[list, dict]]) -> tuple[StageRecord, bool]:
        """Run ``fn`` unless the stage is recorded with identical params, inputs and outputs.

        ``fn`` returns ``(output_paths, notes)``. Returns ``(record, ran)``.
        """
        params = params_digest(params_obj)
        inputs = self.digests(input_paths)
        if self.up_to_date(stage, params, inputs):
            return self.stages[stage], False
        outputs, notes = fn()
        rec = StageRecord(params, inputs, self.digests(outputs), notes or {})
        self.stages[stage] = rec
        self.save()
        return rec, True
