"""Pipeline manifest: what each stage read, with which parameters, and what it wrote.

The manifest lives next to the outputs as ``manifest.json``. A stage is
skipped when its recorded inputs, parameters and outputs all still hash to
the recorded values.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import FormatError

MANIFEST_FORMAT = "skelpore-manifest"
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_paths(paths, base: Path) -> dict:
    """sha256 per file, keyed by the path relative to ``base`` (the manifest directory)."""
    return {os.path.relpath(p, base): file_sha256(p) for p in sorted(str(p) for p in paths)}


@dataclass
class PipelineManifest:
    path: Path
    stages: dict = field(default_factory=dict)

    @property
    def base(self) -> Path:
        return self.path.parent

    @classmethod
    def open(cls, out_dir) -> "PipelineManifest":
        path = Path(out_dir) / MANIFEST_NAME
        if not path.exists():
            return cls(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: corrupt manifest: {exc}") from None
        if doc.get("format") != MANIFEST_FORMAT or doc.get("version") != MANIFEST_VERSION:
            raise FormatError(f"{path}: not a version {MANIFEST_VERSION} pipeline manifest")
        return cls(path, doc.get("stages", {}))

    def up_to_date(self, stage: str, inputs, params: dict) -> bool:
        entry = self.stages.get(stage)
        if entry is None or entry.get("params") != _jsonable(params):
            return False
        try:
            if entry.get("inputs") != _hash_paths(inputs, self.base):
                return False
            outs = entry.get("outputs", {})
            return bool(outs) and all(file_sha256(self.base / p) == h for p, h in outs.items())
        except FileNotFoundError:
            return False

    def record(self, stage: str, inputs, params: dict, outputs) -> None:
        self.stages[stage] = {
            "inputs": _hash_paths(inputs, self.base),
            "params": _jsonable(params),
            "outputs": _hash_paths(outputs, self.base),
        }
        self.save()

    def save(self) -> None:
        doc = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "skelpore_version": __version__,
            "stages": {k: self.stages[k] for k in sorted(self.stages)},
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _jsonable(obj):
    """Round-trip through JSON so comparisons see the stored form."""
    return json.loads(json.dumps(obj, sort_keys=True))
