"""Run manifests: config echo, seed, versions, per-output content hashes."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    timestamp: str
    config: dict
    seed: int
    version: str
    files: dict  # name -> {path, sha256}
    warnings: list = field(default_factory=list)

    @classmethod
    def collect(cls, config, seed, outputs, warnings=()):
        from . import __version__
        files = {name: {"path": str(p), "sha256": file_sha256(p)}
                 for name, p in outputs.items()}
        return cls(timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"),
                   config=config, seed=seed, version=__version__,
                   files=files, warnings=list(warnings))

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=1, sort_keys=True, default=str)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(**d)

    def verify(self) -> list:
        """Re-hash every listed file; returns the names that fail."""
        bad = []
        for name, rec in self.files.items():
            try:
                ok = file_sha256(rec["path"]) == rec["sha256"]
            except OSError:
                ok = False
            if not ok:
                bad.append(name)
        return bad
