"""Shape inference over the graph's edges.

Deterministic and idempotent: inferring twice yields the same mapping.
Errors identify the node and edge that failed.
"""

from __future__ import annotations

import math

from ..errors import ShapeError
from .core import Graph, Node


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (list, tuple)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_out_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    out = (extent + 2 * pad - kernel) // stride + 1
    if out <= 0:
        raise ShapeError(f"conv output extent {out} <= 0 (in={extent}, k={kernel})")
    return out


def _infer_node(node: Node, g: Graph, shapes: dict) -> None:
    def shp(edge: str) -> tuple[int, ...]:
        if edge not in shapes:
            raise ShapeError(f"node {node.id}: input edge {edge!r} has no shape")
        return shapes[edge]

    k = node.kind
    if k in ("relu", "gelu", "softmax", "batchnorm", "layernorm", "mulquant",
             "quantstub", "dequantstub"):
        shapes[node.outputs[0]] = shp(node.inputs[0])
    elif k == "conv2d":
        n, c, h, w = shp(node.inputs[0])
        wt = g.tensors[node.params["weight"]]
        o, ci, kh, kw = wt.shape
        groups = int(node.attrs.get("groups", 1))
        if ci * groups != c:
            raise ShapeError(
                f"node {node.id}: weight expects {ci * groups} input channels, edge has {c}"
            )
        sh, sw = _pair(node.attrs["stride"])
        ph, pw = _pair(node.attrs["padding"])
        shapes[node.outputs[0]] = (
            n, o, conv_out_extent(h, kh, sh, ph), conv_out_extent(w, kw, sw, pw)
        )
    elif k == "linear":
        in_shape = shp(node.inputs[0])
        wt = g.tensors[node.params["weight"]]
        out_f, in_f = wt.shape
        if in_shape[-1] != in_f:
            raise ShapeError(
                f"node {node.id}: linear expects last extent {in_f}, got {in_shape[-1]}"
            )
        shapes[node.outputs[0]] = in_shape[:-1] + (out_f,)
    elif k in ("avgpool", "maxpool"):
        n, c, h, w = shp(node.inputs[0])
        kh, kw = _pair(node.attrs["kernel"])
        sh, sw = _pair(node.attrs["stride"])
        ph, pw = _pair(node.attrs.get("padding", 0))
        shapes[node.outputs[0]] = (
            n, c, conv_out_extent(h, kh, sh, ph), conv_out_extent(w, kw, sw, pw)
        )
    elif k == "flatten":
        s = shp(node.inputs[0])
        shapes[node.outputs[0]] = (s[0], math.prod(s[1:]))
    elif k == "add":
        a, b = shp(node.inputs[0]), shp(node.inputs[1])
        if a != b:
            raise ShapeError(f"node {node.id}: add shapes differ {a} vs {b}")
        shapes[node.outputs[0]] = a
    elif k == "attention":
        s = shp(node.inputs[0])
        if len(s) != 3:
            raise ShapeError(f"node {node.id}: attention expects (batch, tokens, embed)")
        heads = int(node.attrs["heads"])
        if s[2] % heads != 0:
            raise ShapeError(f"node {node.id}: embed {s[2]} not divisible by {heads} heads")
        shapes[node.outputs[0]] = s
    else:
        raise ShapeError(f"node {node.id}: no shape rule for kind {k!r}")


def infer_shapes(g: Graph) -> Graph:
    """Return a copy of ``g`` with every edge shape resolved."""
    g.check_kinds()
    g.check_topology()
    shapes: dict[str, tuple[int, ...]] = {e: tuple(s) for e, s in g.inputs}
    for node in g.nodes:
        _infer_node(node, g, shapes)
    out = g.copy()
    out.edge_shapes = shapes
    return out


def attention_internal_shapes(g: Graph, node_id: str) -> dict[str, tuple[int, ...]]:
    """Shapes of the intermediate tensors inside an attention node."""
    node = g.node(node_id)
    if node.kind != "attention":
        raise ValueError(f"node {node_id} is not an attention node")
    if node.inputs[0] not in g.edge_shapes:
        g = infer_shapes(g)
    b, t, d = g.edge_shapes[node.inputs[0]]
    h = int(node.attrs["heads"])
    dh = d // h
    return {
        "proj": (b, t, d),
        "heads": (b, h, t, dh),
        "scores": (b, h, t, t),
        "probs": (b, h, t, t),
        "context": (b, t, d),
    }
