"""Whole-graph invariant checking.

``validate`` returns every violation it can find and never raises on
malformed input; loaders turn an empty list into a usable graph.
"""

from __future__ import annotations

from .core import Graph
from .shapes import infer_shapes

_WEIGHT_RANK = {"conv2d": 4, "linear": 2, "attention": 2}


def validate(g: Graph) -> list[str]:
    problems: list[str] = []

    for node in g.nodes:
        problems.extend(node.validate())

    # Producer ordering: in a topologically ordered node list a cycle shows
    # up as an edge consumed before any node (or the graph inputs) produce it.
    produced = {e for e, _ in g.inputs}
    for node in g.nodes:
        for e in node.inputs:
            if e not in produced:
                consumers = sorted(n.id for n in g.nodes if e in n.inputs)
                producer = next((n.id for n in g.nodes if e in n.outputs), None)
                if producer is not None:
                    problems.append(
                        f"cycle: edge {e!r} consumed by {consumers} before its "
                        f"producer {producer!r} runs"
                    )
                else:
                    problems.append(f"node {node.id}: input edge {e!r} has no producer")
        for e in node.outputs:
            if e in produced:
                problems.append(f"edge {e!r} has multiple producers")
            produced.add(e)
    for e in g.outputs:
        if e not in produced:
            problems.append(f"graph output {e!r} is never produced")

    for node in g.nodes:
        for role, tname in node.params.items():
            if tname not in g.tensors:
                problems.append(f"node {node.id}: param {role!r} -> missing tensor {tname!r}")
                continue
            t = g.tensors[tname]
            want = _WEIGHT_RANK.get(node.kind)
            if role.startswith("w") and want is not None and len(t.shape) != want:
                problems.append(
                    f"node {node.id}: {role} tensor {tname!r} rank {len(t.shape)} != {want}"
                )

    for name, t in g.tensors.items():
        problems.extend(t.validate(name))

    for name, qp in g.param_qp.items():
        if name not in g.tensors:
            problems.append(f"param qp for missing tensor {name!r}")
            continue
        channels = g.tensors[name].shape[qp.channel_axis] if qp.per_channel else None
        problems.extend(qp.validate(f"param qp {name}", channels))
    for edge, qp in g.edge_qp.items():
        problems.extend(qp.validate(f"edge qp {edge}"))

    if not problems:
        try:
            infer_shapes(g)
        except Exception as exc:  # collect, never propagate
            problems.append(f"shape inference failed: {exc}")

    return problems
