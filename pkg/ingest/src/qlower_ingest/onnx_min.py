"""Minimal ONNX reader: decodes the protobuf wire format directly.

Covers the subset of ModelProto/GraphProto/NodeProto/TensorProto/
AttributeProto needed to ingest feed-forward CNN/MLP checkpoints, with no
dependency on the onnx package. Unknown fields are skipped by wire type.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class OnnxDecodeError(Exception):
    pass


def _varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = shift = 0
    while True:
        if pos >= len(buf):
            raise OnnxDecodeError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise OnnxDecodeError("varint too long")


def _signed64(v: int) -> int:
    return v - (1 << 64) if v >= (1 << 63) else v


def fields(buf: bytes):
    """Yield (field_number, wire_type, payload) triples."""
    pos = 0
    while pos < len(buf):
        key, pos = _varint(buf, pos)
        fno, wt = key >> 3, key & 7
        if wt == 0:
            val, pos = _varint(buf, pos)
        elif wt == 1:
            val, pos = buf[pos:pos + 8], pos + 8
        elif wt == 2:
            ln, pos = _varint(buf, pos)
            val, pos = buf[pos:pos + ln], pos + ln
        elif wt == 5:
            val, pos = buf[pos:pos + 4], pos + 4
        else:
            raise OnnxDecodeError(f"unsupported wire type {wt}")
        yield fno, wt, val


# ONNX TensorProto.DataType values
_DTYPES = {1: np.dtype("<f4"), 6: np.dtype("<i4"), 7: np.dtype("<i8"),
           11: np.dtype("<f8")}


@dataclass
class TensorMsg:
    name: str = ""
    dims: list = field(default_factory=list)
    data_type: int = 1
    raw: bytes = b""
    float_data: list = field(default_factory=list)
    int_data: list = field(default_factory=list)

    def to_numpy(self) -> np.ndarray:
        shape = tuple(self.dims)
        if self.raw:
            dt = _DTYPES.get(self.data_type)
            if dt is None:
                raise OnnxDecodeError(
                    f"tensor {self.name!r}: unsupported data_type {self.data_type}")
            arr = np.frombuffer(self.raw, dtype=dt).reshape(shape)
        elif self.float_data:
            arr = np.asarray(self.float_data, dtype=np.float32).reshape(shape)
        elif self.int_data:
            arr = np.asarray(self.int_data, dtype=np.int64).reshape(shape)
        else:
            arr = np.zeros(shape, dtype=np.float32)
        # dtype normalization: everything numeric lands in float32/int64
        if arr.dtype in (np.float64, np.float32):
            return arr.astype(np.float32)
        return arr.astype(np.int64)


def _parse_tensor(buf: bytes) -> TensorMsg:
    t = TensorMsg()
    for fno, wt, val in fields(buf):
        if fno == 1 and wt == 0:
            t.dims.append(_signed64(val))
        elif fno == 2:
            t.data_type = val if isinstance(val, int) else 1
        elif fno == 4:
            if wt == 2:   # packed floats
                t.float_data.extend(struct.unpack(f"<{len(val) // 4}f", val))
            else:
                t.float_data.append(struct.unpack("<f", val)[0])
        elif fno == 7:
            if wt == 2:   # packed varints
                pos = 0
                while pos < len(val):
                    v, pos = _varint(val, pos)
                    t.int_data.append(_signed64(v))
            else:
                t.int_data.append(_signed64(val))
        elif fno == 8 and wt == 2:
            t.name = val.decode("utf-8")
        elif fno == 9 and wt == 2:
            t.raw = val
    return t


@dataclass
class AttrMsg:
    name: str = ""
    value: object = None


def _parse_attr(buf: bytes) -> AttrMsg:
    a = AttrMsg()
    ints: list = []
    floats: list = []
    for fno, wt, val in fields(buf):
        if fno == 1 and wt == 2:
            a.name = val.decode("utf-8")
        elif fno == 2 and wt == 5:
            a.value = struct.unpack("<f", val)[0]
        elif fno == 3 and wt == 0:
            a.value = _signed64(val)
        elif fno == 4 and wt == 2:
            a.value = val.decode("utf-8", errors="replace")
        elif fno == 5 and wt == 2:
            a.value = _parse_tensor(val)
        elif fno == 7:
            if wt == 2:
                floats.extend(struct.unpack(f"<{len(val) // 4}f", val))
            else:
                floats.append(struct.unpack("<f", val)[0])
        elif fno == 8:
            if wt == 2:
                pos = 0
                while pos < len(val):
                    v, pos = _varint(val, pos)
                    ints.append(_signed64(v))
            else:
                ints.append(_signed64(val))
    if ints:
        a.value = ints
    elif floats and a.value is None:
        a.value = floats
    return a


@dataclass
class NodeMsg:
    op: str = ""
    name: str = ""
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


def _parse_node(buf: bytes) -> NodeMsg:
    n = NodeMsg()
    for fno, wt, val in fields(buf):
        if fno == 1 and wt == 2:
            n.inputs.append(val.decode("utf-8"))
        elif fno == 2 and wt == 2:
            n.outputs.append(val.decode("utf-8"))
        elif fno == 3 and wt == 2:
            n.name = val.decode("utf-8")
        elif fno == 4 and wt == 2:
            n.op = val.decode("utf-8")
        elif fno == 5 and wt == 2:
            a = _parse_attr(val)
            n.attrs[a.name] = a.value
    return n


def _parse_value_info(buf: bytes) -> tuple[str, list]:
    name, shape = "", []
    for fno, wt, val in fields(buf):
        if fno == 1 and wt == 2:
            name = val.decode("utf-8")
        elif fno == 2 and wt == 2:                      # TypeProto
            for f2, w2, v2 in fields(val):
                if f2 == 1 and w2 == 2:                 # tensor_type
                    for f3, w3, v3 in fields(v2):
                        if f3 == 2 and w3 == 2:         # shape
                            for f4, w4, v4 in fields(v3):
                                if f4 == 1 and w4 == 2:  # dim
                                    dim = 0
                                    for f5, w5, v5 in fields(v4):
                                        if f5 == 1 and w5 == 0:
                                            dim = _signed64(v5)
                                    shape.append(dim)
    return name, shape


@dataclass
class GraphMsg:
    nodes: list = field(default_factory=list)
    initializers: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)   # (name, shape)
    outputs: list = field(default_factory=list)


def parse_model(data: bytes) -> GraphMsg:
    graph_buf = None
    for fno, wt, val in fields(data):
        if fno == 7 and wt == 2:
            graph_buf = val
    if graph_buf is None:
        raise OnnxDecodeError("no graph in model (not an ONNX file?)")
    g = GraphMsg()
    for fno, wt, val in fields(graph_buf):
        if fno == 1 and wt == 2:
            g.nodes.append(_parse_node(val))
        elif fno == 5 and wt == 2:
            t = _parse_tensor(val)
            g.initializers[t.name] = t
        elif fno == 11 and wt == 2:
            g.inputs.append(_parse_value_info(val))
        elif fno == 12 and wt == 2:
            name, _ = _parse_value_info(val)
            g.outputs.append(name)
    # graph inputs may repeat initializers (older exporters); drop those
    g.inputs = [(n, s) for n, s in g.inputs if n not in g.initializers]
    return g
