"""Hardware-consumable artifacts: hex / binary-string / raw-binary memory
files plus a deployment bundle with an integer-only manifest.

Conventions (readmemh-compatible): uppercase hex, two's complement in the
declared word width, MSB-first digits, zero padded, newline-terminated
lines. Raw binaries are little-endian; packed sub-byte values fill the
low bits of each byte first. Every exporter has an exact inverse parser.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ExportError
from .fuse import assert_integer_only
from .ir import Graph, Node, QuantParams, Tensor, int_dtype

BUNDLE_MANIFEST = "manifest.json"


@dataclass
class ExportConfig:
    format: str = "hex"              # hex | binstr | rawbin | decimal_json
    word_bits: int = 8
    words_per_line: int = 1
    axis_order: tuple[int, ...] | None = None   # unroll permutation
    pack: bool = False               # pack sub-byte values contiguously

    def __post_init__(self):
        if self.format not in ("hex", "binstr", "rawbin", "decimal_json"):
            raise ExportError(f"unknown export format {self.format!r}")
        if self.words_per_line < 1:
            raise ExportError("words_per_line must be >= 1")

    def to_json(self) -> dict:
        return {"format": self.format, "word_bits": self.word_bits,
                "words_per_line": self.words_per_line,
                "axis_order": list(self.axis_order) if self.axis_order else None,
                "pack": self.pack}

    @classmethod
    def from_json(cls, obj: dict) -> "ExportConfig":
        return cls(format=obj.get("format", "hex"),
                   word_bits=int(obj.get("word_bits", 8)),
                   words_per_line=int(obj.get("words_per_line", 1)),
                   axis_order=tuple(obj["axis_order"]) if obj.get("axis_order")
                   else None,
                   pack=bool(obj.get("pack", False)))


def _unrolled(values: np.ndarray, cfg: ExportConfig) -> np.ndarray:
    v = np.asarray(values)
    if cfg.axis_order is not None:
        if sorted(cfg.axis_order) != list(range(v.ndim)):
            raise ExportError(f"axis_order {cfg.axis_order} is not a "
                              f"permutation of {v.ndim} axes")
        v = np.transpose(v, cfg.axis_order)
    return v.ravel().astype(np.int64)


def _check_width(flat: np.ndarray, bits: int) -> None:
    lo, hi = -(1 << (bits - 1)), (1 << bits) - 1
    if flat.size and (flat.min() < lo or flat.max() > hi):
        bad = flat[(flat < lo) | (flat > hi)][0]
        raise ExportError(f"value {int(bad)} does not fit {bits}-bit words")


def _words(t: Tensor, cfg: ExportConfig) -> np.ndarray:
    if t.dtype.is_float:
        raise ExportError("cannot export float tensors as memory words")
    if cfg.word_bits < t.dtype.bits:
        raise ExportError(f"word_bits {cfg.word_bits} < tensor bits {t.dtype.bits}")
    flat = _unrolled(t.data, cfg)
    _check_width(flat, cfg.word_bits)
    return flat & ((1 << cfg.word_bits) - 1)


def export_hex(t: Tensor, cfg: ExportConfig) -> str:
    digits = (cfg.word_bits + 3) // 4
    words = [format(int(w), f"0{digits}X") for w in _words(t, cfg)]
    return _lines(words, cfg.words_per_line)


def export_binstr(t: Tensor, cfg: ExportConfig) -> str:
    words = [format(int(w), f"0{cfg.word_bits}b") for w in _words(t, cfg)]
    return _lines(words, cfg.words_per_line)


def _lines(words: list[str], per_line: int) -> str:
    out = []
    for i in range(0, len(words), per_line):
        out.append(" ".join(words[i:i + per_line]))
    return "\n".join(out) + "\n" if out else ""


def export_rawbin(t: Tensor, cfg: ExportConfig) -> bytes:
    flat = _words(t, cfg)
    bits = cfg.word_bits
    if cfg.pack:
        if 8 % bits != 0:
            raise ExportError(f"packing requires word_bits dividing 8, got {bits}")
        per_byte = 8 // bits
        pad = (-flat.size) % per_byte
        padded = np.concatenate([flat, np.zeros(pad, dtype=np.int64)])
        out = bytearray()
        for i in range(0, padded.size, per_byte):
            byte = 0
            for j in range(per_byte):
                byte |= int(padded[i + j]) << (bits * j)   # low bits first
            out.append(byte)
        return bytes(out)
    nbytes = (bits + 7) // 8
    out = bytearray()
    for w in flat:
        out += int(w).to_bytes(nbytes, "little", signed=False)
    return bytes(out)


def _sign_extend(words: np.ndarray, bits: int, signed: bool) -> np.ndarray:
    if not signed:
        return words
    sign = 1 << (bits - 1)
    return np.where(words & sign, words - (1 << bits), words)


def _reshape_back(flat: np.ndarray, shape, cfg: ExportConfig) -> np.ndarray:
    shape = tuple(shape)
    if cfg.axis_order is None:
        return flat.reshape(shape)
    permuted = tuple(shape[a] for a in cfg.axis_order)
    inv = np.argsort(cfg.axis_order)
    return flat.reshape(permuted).transpose(inv)


def parse_hex(text: str, shape, bits: int, signed: bool,
              cfg: ExportConfig) -> Tensor:
    words = np.asarray([int(w, 16) for w in text.split()], dtype=np.int64)
    return _finish_parse(words, shape, bits, signed, cfg)


def parse_binstr(text: str, shape, bits: int, signed: bool,
                 cfg: ExportConfig) -> Tensor:
    words = np.asarray([int(w, 2) for w in text.split()], dtype=np.int64)
    return _finish_parse(words, shape, bits, signed, cfg)


def parse_rawbin(raw: bytes, shape, bits: int, signed: bool,
                 cfg: ExportConfig) -> Tensor:
    n = int(np.prod(shape))
    wb = cfg.word_bits
    if cfg.pack:
        per_byte = 8 // wb
        mask = (1 << wb) - 1
        vals = []
        for byte in raw:
            for j in range(per_byte):
                vals.append((byte >> (wb * j)) & mask)
        words = np.asarray(vals[:n], dtype=np.int64)
    else:
        nbytes = (wb + 7) // 8
        words = np.asarray(
            [int.from_bytes(raw[i:i + nbytes], "little") for i in
             range(0, n * nbytes, nbytes)], dtype=np.int64)
    return _finish_parse(words, shape, bits, signed, cfg)


def _finish_parse(words: np.ndarray, shape, bits: int, signed: bool,
                  cfg: ExportConfig) -> Tensor:
    n = int(np.prod(shape))
    if words.size != n:
        raise ExportError(f"parsed {words.size} words, expected {n}")
    vals = _sign_extend(words & ((1 << cfg.word_bits) - 1), cfg.word_bits, signed)
    data = _reshape_back(vals, shape, cfg)
    return Tensor.from_array(data, int_dtype(bits, signed))


def export_decimal_json(t: Tensor, cfg: ExportConfig) -> str:
    flat = _unrolled(t.data, cfg)
    _check_width(flat, cfg.word_bits)
    return json.dumps({"shape": list(t.shape), "bits": t.dtype.bits,
                       "signed": t.dtype.signed,
                       "values": [int(v) for v in flat]},
                      sort_keys=True, indent=1) + "\n"


# ---------------------------------------------------------------------------
# Deployment bundle
# ---------------------------------------------------------------------------

_EXT = {"hex": "hex", "binstr": "bin", "rawbin": "rawbin",
        "decimal_json": "json"}


def _qp_codes(qp: QuantParams, frac: int = 24) -> dict:
    """Scales as fixed-point codes (never free-form floats)."""
    scales = qp.scale_array()
    codes = [int(np.sign(s) * np.floor(abs(s) * (1 << frac) + 0.5))
             for s in scales]
    return {"scale_codes": codes if qp.per_channel else codes[0],
            "scale_frac_bits": frac,
            "zero_point": [int(z) for z in qp.zp_array()] if qp.per_channel
            else int(qp.zp_array()[0]),
            "bits": qp.bits, "signed": qp.signed, "symmetric": qp.symmetric}


def export_model(g: Graph, out_dir: str | Path, cfg: ExportConfig) -> Path:
    """Write the deployment bundle: manifest + per-layer memory files.

    Deterministic: identical graphs yield byte-identical bundles.
    """
    assert_integer_only(g)
    out_dir = Path(out_dir)
    (out_dir / "weights").mkdir(parents=True, exist_ok=True)
    (out_dir / "scale").mkdir(parents=True, exist_ok=True)

    layers = []
    for node in g.nodes:
        entry: dict = {"id": node.id, "kind": node.kind,
                       "attrs": _plain_attrs(node.attrs),
                       "inputs": list(node.inputs),
                       "outputs": list(node.outputs), "params": {}}
        for role in sorted(node.params):
            tname = node.params[role]
            t = g.tensors[tname]
            safe = tname.replace("/", "_").replace(":", "_")
            rel = f"weights/{safe}.{_EXT[cfg.format]}"
            path = out_dir / rel
            if cfg.format == "hex":
                path.write_text(export_hex(t, cfg), encoding="utf-8")
            elif cfg.format == "binstr":
                path.write_text(export_binstr(t, cfg), encoding="utf-8")
            elif cfg.format == "rawbin":
                path.write_bytes(export_rawbin(t, cfg))
            else:
                path.write_text(export_decimal_json(t, cfg), encoding="utf-8")
            entry["params"][role] = {
                "tensor": tname, "file": rel, "shape": list(t.shape),
                "bits": t.dtype.bits, "signed": t.dtype.signed,
            }
        if node.kind == "mulquant":
            scale_rel = f"scale/{node.id.replace('/', '_')}.json"
            (out_dir / scale_rel).write_text(
                json.dumps(_scale_entry(node.attrs), sort_keys=True, indent=1)
                + "\n", encoding="utf-8")
            entry["scale_file"] = scale_rel
        layers.append(entry)

    manifest = {
        "version": 1,
        "format": cfg.to_json(),
        "inputs": [{"name": e, "shape": list(s)} for e, s in g.inputs],
        "outputs": list(g.outputs),
        "input_qp": _qp_codes(_bundle_input_qp(g)),
        "layers": layers,
        "edge_qp": {e: _qp_codes(qp) for e, qp in sorted(g.edge_qp.items())},
        "param_qp": {p: _qp_codes(qp) for p, qp in sorted(g.param_qp.items())},
    }
    (out_dir / BUNDLE_MANIFEST).write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return out_dir


# training-path float mirrors; the deploy bundle carries codes only
_FLOAT_MIRRORS = {"out_scale", "acc_scale", "gamma_f", "beta_f", "in_qp",
                  "out_qp", "qp", "clip", "eps"}


def _strip_floats(v):
    if isinstance(v, dict):
        return {k: _strip_floats(x) for k, x in v.items()
                if k not in _FLOAT_MIRRORS}
    if isinstance(v, list):
        return [_strip_floats(x) for x in v]
    return v


def _plain_attrs(attrs: dict) -> dict:
    from .ir.serialize import _json_norm
    return _strip_floats(_json_norm(attrs))


def _scale_entry(attrs: dict) -> dict:
    return {"m_code": attrs["m_code"], "b_code": attrs["b_code"],
            "int_bits": attrs["int_bits"], "frac_bits": attrs["frac_bits"],
            "clamp": [attrs["clamp_lo"], attrs["clamp_hi"]]}


def _bundle_input_qp(g: Graph) -> QuantParams:
    from .engine.paths import input_qp
    return input_qp(g)


def bundle_hash(out_dir: str | Path) -> str:
    """SHA-256 over every file (sorted relative paths + contents)."""
    out_dir = Path(out_dir)
    h = hashlib.sha256()
    for p in sorted(out_dir.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(out_dir)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def import_bundle(bundle_dir: str | Path) -> Graph:
    """Reconstruct an executable integer graph from a bundle."""
    bundle_dir = Path(bundle_dir)
    manifest = json.loads((bundle_dir / BUNDLE_MANIFEST).read_text("utf-8"))
    cfg = ExportConfig.from_json(manifest["format"])
    nodes, tensors = [], {}
    for entry in manifest["layers"]:
        params = {}
        for role, meta in entry["params"].items():
            rel = meta["file"]
            shape = tuple(meta["shape"])
            bits, signed = int(meta["bits"]), bool(meta["signed"])
            path = bundle_dir / rel
            if cfg.format == "hex":
                t = parse_hex(path.read_text("utf-8"), shape, bits, signed, cfg)
            elif cfg.format == "binstr":
                t = parse_binstr(path.read_text("utf-8"), shape, bits, signed, cfg)
            elif cfg.format == "rawbin":
                t = parse_rawbin(path.read_bytes(), shape, bits, signed, cfg)
            else:
                obj = json.loads(path.read_text("utf-8"))
                flat = np.asarray(obj["values"], dtype=np.int64)
                t = Tensor.from_array(_reshape_back(flat, shape, cfg),
                                      int_dtype(bits, signed))
            tensors[meta["tensor"]] = t
            params[role] = meta["tensor"]
        nodes.append(Node(entry["id"], entry["kind"], list(entry["inputs"]),
                          list(entry["outputs"]), dict(entry["attrs"]), params))
    g = Graph(
        nodes=nodes,
        inputs=[(e["name"], tuple(e["shape"])) for e in manifest["inputs"]],
        outputs=list(manifest["outputs"]),
        tensors=tensors,
        edge_qp={e: _qp_from_codes(q) for e, q in manifest["edge_qp"].items()},
        param_qp={p: _qp_from_codes(q) for p, q in manifest["param_qp"].items()},
    )
    return g


def _qp_from_codes(obj: dict) -> QuantParams:
    frac = int(obj["scale_frac_bits"])
    codes = obj["scale_codes"]
    if isinstance(codes, list):
        scale = np.asarray(codes, dtype=np.float64) / (1 << frac)
        zp = np.asarray(obj["zero_point"], dtype=np.int64)
    else:
        scale = codes / (1 << frac)
        zp = int(obj["zero_point"])
    return QuantParams(scale, zp, int(obj["bits"]), bool(obj["signed"]),
                       bool(obj["symmetric"]))
