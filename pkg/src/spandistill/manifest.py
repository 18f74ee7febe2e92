"""Run manifests: every CLI command records what it ran before it runs.

A manifest snapshots the command, resolved configuration, input dataset
hashes, seed and toolkit version.  It is written first and never touched
again, so a run can be reproduced (or audited) from the manifest alone.
"""

from __future__ import annotations

import datetime
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    seed: int | None = None
    toolkit_version: str = ""
    created_at: str = ""

    def __post_init__(self) -> None:
        if not self.created_at:
            self.created_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
        if not self.toolkit_version:
            from . import __version__

            self.toolkit_version = __version__

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = file_sha256(path)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "toolkit_version": self.toolkit_version,
            "created_at": self.created_at,
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")
        return path
