"""Directories of input blobs in the interchange tensor format.

A batch directory holds ``batches.json`` (tensor entries with the same
schema as model manifests) plus raw little-endian blobs, one per batch.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ByteCountError, MissingBlobError

INDEX = "batches.json"


def save_batches(path: str | Path, batches: list[np.ndarray]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, b in enumerate(batches):
        arr = np.ascontiguousarray(np.asarray(b, dtype=np.float32))
        rel = f"batch_{i:04d}.bin"
        (path / rel).write_bytes(arr.tobytes())
        entries.append({"name": f"batch_{i:04d}", "shape": list(arr.shape),
                        "dtype": "float32", "bits": 32, "signed": True,
                        "file": rel, "byte_len": arr.nbytes})
    (path / INDEX).write_text(
        json.dumps({"tensors": entries}, sort_keys=True, indent=1) + "\n",
        encoding="utf-8")
    return path


def load_batches(path: str | Path) -> list[np.ndarray]:
    path = Path(path)
    index = path / INDEX
    if not index.exists():
        raise MissingBlobError(f"{path}: missing {INDEX}")
    entries = json.loads(index.read_text("utf-8"))["tensors"]
    out = []
    for e in entries:
        blob = path / e["file"]
        if not blob.exists():
            raise MissingBlobError(f"{path}: missing blob {e['file']!r}")
        raw = blob.read_bytes()
        shape = tuple(int(s) for s in e["shape"])
        expect = int(np.prod(shape)) * 4
        if len(raw) != expect:
            raise ByteCountError(
                f"batch {e['name']!r}: {len(raw)} bytes, expected {expect}")
        out.append(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    return out
