"""Run manifests: reproducibility metadata written by every CLI invocation."""

from __future__ import annotations

import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__

ENV_VARS = (
    "HAZMIX_ADVI_ITERS", "HAZMIX_ADVI_SAMPLES", "HAZMIX_ADVI_LR",
    "HAZMIX_NUTS_DRAWS", "HAZMIX_NUTS_TUNE", "HAZMIX_NUTS_CHAINS",
    "HAZMIX_TARGET_ACCEPT", "HAZMIX_SEED",
)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)   # path -> sha256
    outputs: list[str] = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    env_overrides: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def __post_init__(self):
        if not self.versions:
            self.versions = {
                "hazmix": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            }
        if not self.env_overrides:
            self.env_overrides = {v: os.environ[v] for v in ENV_VARS if v in os.environ}

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path: str | Path) -> None:
        self.outputs.append(str(path))

    def write(self, path: str | Path) -> None:
        obj = {
            "command": self.command,
            "argv": sys.argv,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "versions": self.versions,
            "env_overrides": self.env_overrides,
            "wall_clock_s": self.wall_clock_s,
            "written_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        Path(path).write_text(json.dumps(obj, indent=2, default=str))
