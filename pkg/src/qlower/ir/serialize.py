"""Interchange container: ``manifest.json`` + raw little-endian blobs.

A model is a directory (or a single zip) holding::

    manifest.json        version / inputs / outputs / nodes / tensors / quant
    tensors/<name>.bin   row-major little-endian, no header

Round trip is bit-exact: ``load_model(save_model(g))`` reproduces ``g``.
"""

from __future__ import annotations

import json
import re
import zipfile
from pathlib import Path

import numpy as np

from ..errors import ByteCountError, CycleError, GraphError, MissingBlobError
from .core import DType, Graph, Node, QuantParams, Tensor
from .shapes import infer_shapes
from .validate import validate

MANIFEST = "manifest.json"
VERSION = 1


def _json_norm(v):
    """Normalize attrs to JSON-stable plain types."""
    if isinstance(v, (list, tuple)):
        return [_json_norm(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _json_norm(x) for k, x in v.items()}
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return [_json_norm(x) for x in v.tolist()]
    if isinstance(v, (bool, int, float, str)) or v is None:
        return v
    raise TypeError(f"attr value {v!r} is not JSON-serializable")


def _safe_file(name: str, used: set) -> str:
    base = re.sub(r"[^A-Za-z0-9_.-]", "_", name) or "t"
    candidate, i = base, 1
    while candidate in used:
        candidate = f"{base}.{i}"
        i += 1
    used.add(candidate)
    return f"tensors/{candidate}.bin"


def manifest_dict(g: Graph) -> tuple[dict, dict[str, bytes]]:
    """Build the manifest plus the blob map (relative path -> bytes)."""
    used: set[str] = set()
    tensor_entries = []
    blobs: dict[str, bytes] = {}
    for name in sorted(g.tensors):
        t = g.tensors[name]
        raw = t.tobytes()
        file = _safe_file(name, used)
        blobs[file] = raw
        tensor_entries.append({
            "name": name,
            "shape": list(t.shape),
            "dtype": t.dtype.kind,
            "bits": t.dtype.bits,
            "signed": t.dtype.signed,
            "file": file,
            "byte_len": len(raw),
        })
    manifest = {
        "version": VERSION,
        "inputs": [{"name": e, "shape": list(s)} for e, s in g.inputs],
        "outputs": list(g.outputs),
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind,
                "inputs": list(n.inputs),
                "outputs": list(n.outputs),
                "attrs": _json_norm(n.attrs),
                "params": dict(sorted(n.params.items())),
            }
            for n in g.nodes
        ],
        "tensors": tensor_entries,
        "quant": {
            "edges": {e: g.edge_qp[e].to_json() for e in sorted(g.edge_qp)},
            "params": {p: g.param_qp[p].to_json() for p in sorted(g.param_qp)},
        },
    }
    return manifest, blobs


def save_model(g: Graph, path: str | Path) -> None:
    """Write ``g`` as a container directory (or zip when path ends in .zip)."""
    path = Path(path)
    manifest, blobs = manifest_dict(g)
    text = json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    if path.suffix == ".zip":
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            # fixed date for byte-identical archives
            zf.writestr(zipfile.ZipInfo(MANIFEST, (1980, 1, 1, 0, 0, 0)), text)
            for rel in sorted(blobs):
                zf.writestr(zipfile.ZipInfo(rel, (1980, 1, 1, 0, 0, 0)), blobs[rel])
    else:
        (path / "tensors").mkdir(parents=True, exist_ok=True)
        (path / MANIFEST).write_text(text, encoding="utf-8")
        for rel, raw in blobs.items():
            (path / rel).write_bytes(raw)


class _Reader:
    def __init__(self, path: Path):
        self.path = path
        self.zf = zipfile.ZipFile(path) if path.is_file() else None

    def read(self, rel: str) -> bytes:
        if self.zf is not None:
            try:
                return self.zf.read(rel)
            except KeyError:
                raise MissingBlobError(f"{self.path}: missing {rel!r}") from None
        p = self.path / rel
        if not p.exists():
            raise MissingBlobError(f"{self.path}: missing {rel!r}")
        return p.read_bytes()


def load_model(path: str | Path) -> Graph:
    """Load and fully validate a container; raises on the first violation."""
    reader = _Reader(Path(path))
    manifest = json.loads(reader.read(MANIFEST).decode("utf-8"))
    for key in ("version", "inputs", "outputs", "nodes", "tensors"):
        if key not in manifest:
            raise GraphError(f"manifest missing key {key!r}")

    tensors: dict[str, Tensor] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        dtype = DType(entry["dtype"], int(entry["bits"]), bool(entry["signed"]))
        shape = tuple(int(s) for s in entry["shape"])
        raw = reader.read(entry["file"])
        expect = int(np.prod(shape)) * dtype.storage().itemsize
        if len(raw) != expect or len(raw) != int(entry["byte_len"]):
            raise ByteCountError(
                f"tensor {name!r}: blob is {len(raw)} bytes, expected {expect} "
                f"(shape {list(shape)}, {dtype.storage().name})"
            )
        data = np.frombuffer(raw, dtype=dtype.storage()).reshape(shape).copy()
        data.flags.writeable = False
        tensors[name] = Tensor(shape, dtype, data)

    nodes = [
        Node(
            id=e["id"], kind=e["kind"], inputs=list(e["inputs"]),
            outputs=list(e["outputs"]), attrs=dict(e.get("attrs", {})),
            params=dict(e.get("params", {})),
        )
        for e in manifest["nodes"]
    ]
    quant = manifest.get("quant", {"edges": {}, "params": {}})
    g = Graph(
        nodes=nodes,
        inputs=[(e["name"], tuple(int(s) for s in e["shape"])) for e in manifest["inputs"]],
        outputs=list(manifest["outputs"]),
        tensors=tensors,
        edge_qp={e: QuantParams.from_json(q) for e, q in quant.get("edges", {}).items()},
        param_qp={p: QuantParams.from_json(q) for p, q in quant.get("params", {}).items()},
    )

    g.check_kinds()            # UnknownOpError
    try:
        g.check_topology()     # CycleError / multiple producers
    except CycleError:
        raise
    problems = validate(g)
    if problems:
        raise GraphError("invalid model: " + "; ".join(problems))
    return infer_shapes(g)


def graph_equal(a: Graph, b: Graph) -> bool:
    """Structural + byte equality (shapes metadata excluded)."""
    ma, blobs_a = manifest_dict(a)
    mb, blobs_b = manifest_dict(b)
    return ma == mb and blobs_a == blobs_b
