"""Interchange bundle writer (manifest.json + raw little-endian blobs).

Implements the documented container schema directly so the bridge talks
to the lowering toolkit purely through its file interface.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class GraphSpec:
    nodes: list = field(default_factory=list)       # dicts: id/kind/inputs/outputs/attrs/params
    inputs: list = field(default_factory=list)      # (name, shape)
    outputs: list = field(default_factory=list)
    tensors: dict = field(default_factory=dict)     # name -> float32 ndarray


def _safe_file(name: str, used: set) -> str:
    base = re.sub(r"[^A-Za-z0-9_.-]", "_", name) or "t"
    candidate, i = base, 1
    while candidate in used:
        candidate = f"{base}.{i}"
        i += 1
    used.add(candidate)
    return f"tensors/{candidate}.bin"


def write_bundle(spec: GraphSpec, dst: str | Path) -> Path:
    dst = Path(dst)
    (dst / "tensors").mkdir(parents=True, exist_ok=True)
    used: set = set()
    entries = []
    for name in sorted(spec.tensors):
        arr = np.ascontiguousarray(np.asarray(spec.tensors[name],
                                              dtype=np.float32))
        rel = _safe_file(name, used)
        (dst / rel).write_bytes(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": "float32", "bits": 32, "signed": True,
                        "file": rel, "byte_len": arr.nbytes})
    manifest = {
        "version": 1,
        "inputs": [{"name": n, "shape": list(s)} for n, s in spec.inputs],
        "outputs": list(spec.outputs),
        "nodes": spec.nodes,
        "tensors": entries,
        "quant": {"edges": {}, "params": {}},
    }
    (dst / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return dst
