"""Atomic artifact writing and run manifests."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path


def atomic_write_text(path, text: str) -> str:
    """Write ``text`` via a temporary file and rename; return its sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ArtifactWriter:
    """Serializes output writes into one directory and records checksums."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.outputs: dict[str, str] = {}

    def write(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        self.outputs[name] = atomic_write_text(path, text)
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def build_manifest(config: dict, sources: dict, outputs: dict, wall_clock: float,
                   summary: dict | None = None, status: str = "ok") -> dict:
    from . import __version__
    return {
        "tool": "thermbath",
        "version": __version__,
        "status": status,
        "config": config,
        "sources": sources,
        "wall_clock_s": round(wall_clock, 3),
        "outputs": dict(sorted(outputs.items())),
        "summary": summary or {},
    }


def is_manifest(doc) -> bool:
    return isinstance(doc, dict) and doc.get("tool") == "thermbath" and "config" in doc
