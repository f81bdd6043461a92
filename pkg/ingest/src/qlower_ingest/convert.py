"""Checkpoint conversion: ONNX graphs or torch state archives (plus an
architecture descriptor) into the interchange container.

Unsupported operators are collected in the report; conversion keeps
going (the bundle is then explicitly marked not-ok) unless strict mode
raises at the first one.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .onnx_min import GraphMsg, parse_model
from .writer import GraphSpec, write_bundle


class ConversionError(Exception):
    pass


@dataclass
class ConversionReport:
    mapped_nodes: int = 0
    skipped: list = field(default_factory=list)      # (op, reason)
    checksums: dict = field(default_factory=dict)    # tensor -> sha256
    ok: bool = True
    parity_max_rel: float | None = None

    def to_json(self) -> dict:
        return {"mapped_nodes": self.mapped_nodes,
                "skipped": [list(s) for s in self.skipped],
                "checksums": self.checksums, "ok": self.ok,
                "parity_max_rel": self.parity_max_rel}


def _sha256(arr: np.ndarray) -> str:
    return hashlib.sha256(
        np.ascontiguousarray(arr.astype(np.float32)).tobytes()).hexdigest()


def _pair_attr(v, default=None):
    if v is None:
        return default
    if isinstance(v, (list, tuple)):
        if len(v) >= 2 and v[0] != v[1]:
            return [int(v[0]), int(v[1])]
        return int(v[0])
    return int(v)


def _sym_pads(pads) -> int | list:
    if pads is None:
        return 0
    p = [int(x) for x in pads]
    if len(p) == 4:
        if p[0] != p[2] or p[1] != p[3]:
            raise ConversionError(f"asymmetric pads {p} unsupported")
        return p[0] if p[0] == p[1] else [p[0], p[1]]
    return p[0] if p else 0


def _from_onnx(g: GraphMsg, strict: bool, report: ConversionReport) -> GraphSpec:
    spec = GraphSpec()
    tensors: dict[str, np.ndarray] = {
        name: t.to_numpy() for name, t in g.initializers.items()}
    init = set(tensors)
    alias: dict[str, str] = {}

    def src(edge: str) -> str:
        return alias.get(edge, edge)

    if len(g.inputs) != 1:
        raise ConversionError(f"expected one graph input, got {len(g.inputs)}")
    in_name, in_shape = g.inputs[0]
    spec.inputs = [(in_name, tuple(int(s) for s in in_shape))]

    # shape tracking for flatten/global-pool lowering
    shapes: dict[str, tuple] = {in_name: tuple(int(s) for s in in_shape)}

    def skip(node, reason: str):
        report.skipped.append((node.op, reason))
        report.ok = False
        if strict:
            raise ConversionError(
                f"unsupported operator {node.op!r} ({reason})")

    pending_bias: dict[str, tuple[str, str]] = {}  # matmul out -> (node id, w)
    idx = 0
    for node in g.nodes:
        idx += 1
        nid = node.name or f"{node.op.lower()}_{idx}"
        ins = [src(e) for e in node.inputs]
        out = node.outputs[0]
        op = node.op

        if op == "Identity":
            alias[out] = ins[0]
            continue
        if op == "Constant":
            t = node.attrs.get("value")
            if t is None:
                skip(node, "constant without tensor value")
                continue
            tensors[out] = t.to_numpy()
            init.add(out)
            continue

        if op == "Conv":
            w = tensors[ins[1]]
            dil = node.attrs.get("dilations")
            if dil and any(int(d) != 1 for d in dil):
                skip(node, "dilated convolution")
                continue
            params = {"weight": ins[1]}
            if len(ins) > 2:
                params["bias"] = ins[2]
            attrs = {"stride": _pair_attr(node.attrs.get("strides"), 1),
                     "padding": _sym_pads(node.attrs.get("pads")),
                     "groups": int(node.attrs.get("group", 1))}
            spec.nodes.append({"id": nid, "kind": "conv2d", "inputs": [ins[0]],
                               "outputs": [out], "attrs": attrs,
                               "params": params})
            n, _, h, wd = shapes[ins[0]]
            sh = attrs["stride"] if isinstance(attrs["stride"], int) \
                else attrs["stride"][0]
            ph = attrs["padding"] if isinstance(attrs["padding"], int) \
                else attrs["padding"][0]
            oh = (h + 2 * ph - w.shape[2]) // sh + 1
            ow = (wd + 2 * ph - w.shape[3]) // sh + 1
            shapes[out] = (n, w.shape[0], oh, ow)
        elif op == "Gemm":
            if node.attrs.get("alpha", 1.0) not in (None, 1.0) or \
                    node.attrs.get("beta", 1.0) not in (None, 1.0):
                skip(node, "Gemm with alpha/beta != 1")
                continue
            wname = ins[1]
            if not node.attrs.get("transB", 0):
                tensors[wname] = np.ascontiguousarray(tensors[wname].T)
            params = {"weight": wname}
            if len(ins) > 2:
                params["bias"] = ins[2]
            spec.nodes.append({"id": nid, "kind": "linear", "inputs": [ins[0]],
                               "outputs": [out], "attrs": {},
                               "params": params})
            shapes[out] = shapes[ins[0]][:-1] + (tensors[wname].shape[0],)
        elif op == "MatMul":
            wname = ins[1]
            if wname not in init:
                skip(node, "MatMul between two activations")
                continue
            tensors[wname] = np.ascontiguousarray(tensors[wname].T)
            spec.nodes.append({"id": nid, "kind": "linear", "inputs": [ins[0]],
                               "outputs": [out], "attrs": {},
                               "params": {"weight": wname}})
            pending_bias[out] = (nid, wname)
            shapes[out] = shapes[ins[0]][:-1] + (tensors[wname].shape[0],)
        elif op == "Add" and any(e in init for e in ins):
            # bias-add after a weight matmul folds into the linear layer
            act = ins[0] if ins[1] in init else ins[1]
            bias = ins[1] if ins[1] in init else ins[0]
            if act in pending_bias and tensors[bias].ndim == 1:
                lid, _ = pending_bias.pop(act)
                lin = next(n for n in spec.nodes if n["id"] == lid)
                lin["params"]["bias"] = bias
                lin["outputs"] = [out]
                shapes[out] = shapes[act]
            else:
                skip(node, "Add with initializer operand outside matmul+bias")
                continue
        elif op == "BatchNormalization":
            params = {"gamma": ins[1], "beta": ins[2], "mean": ins[3],
                      "var": ins[4]}
            spec.nodes.append({"id": nid, "kind": "batchnorm",
                               "inputs": [ins[0]], "outputs": [out],
                               "attrs": {"eps": float(node.attrs.get(
                                   "epsilon", 1e-5))},
                               "params": params})
            shapes[out] = shapes[ins[0]]
        elif op == "LayerNormalization":
            axis = int(node.attrs.get("axis", -1))
            if axis not in (-1, len(shapes[ins[0]]) - 1):
                skip(node, "layer norm over a non-last axis")
                continue
            spec.nodes.append({"id": nid, "kind": "layernorm",
                               "inputs": [ins[0]], "outputs": [out],
                               "attrs": {"eps": float(node.attrs.get(
                                   "epsilon", 1e-5))},
                               "params": {"gamma": ins[1], "beta": ins[2]}})
            shapes[out] = shapes[ins[0]]
        elif op in ("Relu", "Gelu", "Softmax"):
            kind = op.lower()
            attrs = {"axis": int(node.attrs.get("axis", -1))} \
                if op == "Softmax" else {}
            spec.nodes.append({"id": nid, "kind": kind, "inputs": [ins[0]],
                               "outputs": [out], "attrs": attrs, "params": {}})
            shapes[out] = shapes[ins[0]]
        elif op == "Add":
            spec.nodes.append({"id": nid, "kind": "add", "inputs": ins[:2],
                               "outputs": [out], "attrs": {}, "params": {}})
            shapes[out] = shapes[ins[0]]
        elif op in ("MaxPool", "AveragePool"):
            attrs = {"kernel": _pair_attr(node.attrs.get("kernel_shape")),
                     "stride": _pair_attr(node.attrs.get("strides"), 1),
                     "padding": _sym_pads(node.attrs.get("pads"))}
            kind = "maxpool" if op == "MaxPool" else "avgpool"
            spec.nodes.append({"id": nid, "kind": kind, "inputs": [ins[0]],
                               "outputs": [out], "attrs": attrs, "params": {}})
            n, c, h, wd = shapes[ins[0]]
            k = attrs["kernel"] if isinstance(attrs["kernel"], int) \
                else attrs["kernel"][0]
            s = attrs["stride"] if isinstance(attrs["stride"], int) \
                else attrs["stride"][0]
            p = attrs["padding"] if isinstance(attrs["padding"], int) \
                else attrs["padding"][0]
            shapes[out] = (n, c, (h + 2 * p - k) // s + 1,
                           (wd + 2 * p - k) // s + 1)
        elif op == "GlobalAveragePool":
            n, c, h, wd = shapes[ins[0]]
            spec.nodes.append({"id": nid, "kind": "avgpool",
                               "inputs": [ins[0]], "outputs": [out],
                               "attrs": {"kernel": [h, wd], "stride": 1,
                                         "padding": 0}, "params": {}})
            shapes[out] = (n, c, 1, 1)
        elif op in ("Flatten", "Reshape"):
            if op == "Reshape":
                shp = tensors.get(ins[1])
                flat_ok = shp is not None and len(shp) == 2 and \
                    (int(shp[1]) == -1 or
                     int(shp[1]) == math.prod(shapes[ins[0]][1:]))
                if not flat_ok:
                    skip(node, "reshape other than flatten-to-2d")
                    continue
            spec.nodes.append({"id": nid, "kind": "flatten",
                               "inputs": [ins[0]], "outputs": [out],
                               "attrs": {}, "params": {}})
            s = shapes[ins[0]]
            shapes[out] = (s[0], math.prod(s[1:]))
        else:
            skip(node, "no interchange mapping")
            continue
        report.mapped_nodes += 1

    spec.outputs = [src(e) for e in g.outputs]
    used = {t for n in spec.nodes for t in n["params"].values()}
    spec.tensors = {k: v for k, v in tensors.items() if k in used}
    return spec


# ---------------------------------------------------------------------------
# State archive + architecture descriptor
# ---------------------------------------------------------------------------

_DESC_KINDS = {"conv2d", "batchnorm", "layernorm", "relu", "gelu", "softmax",
               "maxpool", "avgpool", "flatten", "linear"}


def _from_descriptor(state: dict, desc: dict, strict: bool,
                     report: ConversionReport) -> GraphSpec:
    spec = GraphSpec()
    in_shape = tuple(int(s) for s in desc["input_shape"])
    spec.inputs = [("x", in_shape)]
    edge = "x"
    for i, layer in enumerate(desc["layers"]):
        kind = layer["kind"]
        if kind not in _DESC_KINDS:
            report.skipped.append((kind, "unknown descriptor kind"))
            report.ok = False
            if strict:
                raise ConversionError(f"unsupported layer kind {kind!r}")
            continue
        nid = layer.get("name", f"{kind}{i}")
        out = f"e{i}"
        params = {}
        attrs = {}
        if kind == "conv2d":
            params["weight"] = layer["weight"]
            if layer.get("bias"):
                params["bias"] = layer["bias"]
            attrs = {"stride": layer.get("stride", 1),
                     "padding": layer.get("padding", 0),
                     "groups": layer.get("groups", 1)}
        elif kind == "linear":
            params["weight"] = layer["weight"]
            if layer.get("bias"):
                params["bias"] = layer["bias"]
        elif kind == "batchnorm":
            params = {"gamma": layer["weight"], "beta": layer["bias"],
                      "mean": layer["mean"], "var": layer["var"]}
            attrs = {"eps": layer.get("eps", 1e-5)}
        elif kind == "layernorm":
            params = {"gamma": layer["weight"], "beta": layer["bias"]}
            attrs = {"eps": layer.get("eps", 1e-5)}
        elif kind in ("maxpool", "avgpool"):
            attrs = {"kernel": layer["kernel"],
                     "stride": layer.get("stride", layer["kernel"]),
                     "padding": layer.get("padding", 0)}
        elif kind == "softmax":
            attrs = {"axis": layer.get("axis", -1)}
        spec.nodes.append({"id": nid, "kind": kind, "inputs": [edge],
                           "outputs": [out], "attrs": attrs, "params": params})
        report.mapped_nodes += 1
        edge = out
    spec.outputs = [edge]

    for node in spec.nodes:
        for role, key in node["params"].items():
            if key not in state:
                raise ConversionError(f"state archive is missing tensor {key!r}")
            spec.tensors[key] = np.asarray(state[key], dtype=np.float32)
    return spec


def _add_stubs(spec: GraphSpec) -> None:
    in_name = spec.inputs[0][0]
    out_name = spec.outputs[0]
    for node in spec.nodes:
        node["inputs"] = [f"{e}.q" if e == in_name else e
                          for e in node["inputs"]]
    spec.nodes.insert(0, {"id": "qin", "kind": "quantstub",
                          "inputs": [in_name], "outputs": [f"{in_name}.q"],
                          "attrs": {}, "params": {}})
    spec.nodes.append({"id": "dqout", "kind": "dequantstub",
                       "inputs": [out_name], "outputs": [f"{out_name}.dq"],
                       "attrs": {}, "params": {}})
    spec.outputs = [f"{out_name}.dq"]


def load_state_archive(path: Path) -> dict:
    import torch

    obj = torch.load(path, map_location="cpu", weights_only=True)
    if hasattr(obj, "state_dict"):
        obj = obj.state_dict()
    return {k: v.numpy() if hasattr(v, "numpy") else np.asarray(v)
            for k, v in obj.items()}


def convert(src: str | Path, dst: str | Path,
            descriptor: str | Path | None = None, strict: bool = False,
            stubs: bool = True) -> ConversionReport:
    """Convert a checkpoint into an interchange bundle at ``dst``."""
    src = Path(src)
    report = ConversionReport()
    if src.suffix == ".onnx":
        spec = _from_onnx(parse_model(src.read_bytes()), strict, report)
    else:
        if descriptor is None:
            raise ConversionError(
                "state archives need an architecture descriptor (JSON)")
        desc = json.loads(Path(descriptor).read_text("utf-8"))
        spec = _from_descriptor(load_state_archive(src), desc, strict, report)
    if stubs:
        _add_stubs(spec)
    write_bundle(spec, dst)
    report.checksums = {name: _sha256(arr)
                        for name, arr in sorted(spec.tensors.items())}
    return report
