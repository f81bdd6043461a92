"""Multi-head attention in all three execution flavors.

The fused node carries one rescaler per stage (q/k/v projections, scaled
scores, probs@V context, output projection), LUTs for the softmax, and
the zero points each integer matmul subtracts from its operands. The
float mirror shares every decoded code so divergence from the integer
path comes only from rounding boundaries and the LUT approximation.
"""

from __future__ import annotations

import math

import numpy as np

from ..ir import Graph, Node, QuantParams
from ..quant.qops import fake_quant, round_half_away
from ..rescale import MulQuantParams, apply_float, apply_int
from .kernels import check_matmul_bound
from .luts import LUTTable, PROB_FRAC, int_softmax


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def float_attention(x: np.ndarray, w: dict, b: dict, heads: int) -> np.ndarray:
    """Reference fp attention; weights are (out, in) arrays."""
    q = x @ w["wq"].T + (b.get("bq") if b.get("bq") is not None else 0.0)
    k = x @ w["wk"].T + (b.get("bk") if b.get("bk") is not None else 0.0)
    v = x @ w["wv"].T + (b.get("bv") if b.get("bv") is not None else 0.0)
    dh = x.shape[-1] // heads
    qh, kh, vh = (split_heads(t, heads) for t in (q, k, v))
    scores = (qh @ kh.swapaxes(-1, -2)) / math.sqrt(dh)
    probs = _softmax(scores)
    ctx = merge_heads(probs @ vh)
    return ctx @ w["wo"].T + (b.get("bo") if b.get("bo") is not None else 0.0)


def _weights(g: Graph, node: Node):
    w = {p: np.asarray(g.tensors[node.params[p]].data)
         for p in ("wq", "wk", "wv", "wo")}
    b = {p: (np.asarray(g.tensors[node.params[p]].data, dtype=np.float64)
             if node.params.get(p) else None)
         for p in ("bq", "bk", "bv", "bo")}
    return w, b


def annotated_attention(x: np.ndarray, node: Node, g: Graph,
                        fakequant_mode: bool,
                        taps: dict | None = None) -> np.ndarray:
    """Attention on the calibrated (unfused) graph.

    In fake-quant mode the internal tensors are snapped to their annotated
    grids; weights use the frozen integer codes when available.
    """
    from ..quant.qops import dequantize

    heads = int(node.attrs["heads"])
    w, b = _weights(g, node)
    if fakequant_mode:
        for p in ("wq", "wk", "wv", "wo"):
            name = node.params[p]
            frozen = g.tensors.get(name + ".q")
            qp = g.param_qp.get(name)
            if frozen is not None and qp is not None:
                w[p] = dequantize(np.asarray(frozen.data), qp)
            elif qp is not None:
                w[p] = fake_quant(np.asarray(w[p], dtype=np.float64), qp)

    def snap(t: np.ndarray, stage: str) -> np.ndarray:
        if not fakequant_mode:
            return t
        qp = g.edge_qp.get(f"{node.id}#{stage}")
        return fake_quant(t, qp) if qp is not None else t

    x = np.asarray(x, dtype=np.float64)
    q = snap(x @ w["wq"].T + (b["bq"] if b["bq"] is not None else 0.0), "q")
    k = snap(x @ w["wk"].T + (b["bk"] if b["bk"] is not None else 0.0), "k")
    v = snap(x @ w["wv"].T + (b["bv"] if b["bv"] is not None else 0.0), "v")
    dh = x.shape[-1] // heads
    qh, kh, vh = (split_heads(t, heads) for t in (q, k, v))
    scores = snap((qh @ kh.swapaxes(-1, -2)) / math.sqrt(dh), "scores")
    probs = _softmax(scores)
    if fakequant_mode:
        pqp = g.edge_qp.get(f"{node.id}#probs",
                            QuantParams(1.0 / (1 << PROB_FRAC), 0, 13, False, True))
        probs = fake_quant(probs, pqp)
    ctx = snap(merge_heads(probs @ vh), "context")
    out = ctx @ w["wo"].T + (b["bo"] if b["bo"] is not None else 0.0)
    if taps is not None:
        taps.update({f"{node.id}#q": q, f"{node.id}#k": k, f"{node.id}#v": v,
                     f"{node.id}#scores": scores, f"{node.id}#probs": probs,
                     f"{node.id}#context": ctx})
    return out


def fused_attention_float(x_dq: np.ndarray, node: Node, g: Graph,
                          taps: dict | None = None) -> np.ndarray:
    """Training-path mirror of the fused node (shared decoded codes)."""
    st = node.attrs["stages"]
    heads = int(node.attrs["heads"])
    mq = {s: MulQuantParams.from_attrs(st[s])
          for s in ("q", "k", "v", "scores", "context", "out")}
    w = {p: np.asarray(g.tensors[node.params[p]].data, dtype=np.float64)
         for p in ("wq", "wk", "wv", "wo")}
    wdq = {}
    for p in ("wq", "wk", "wv", "wo"):
        qp = g.param_qp[node.params[p]]
        from ..quant.qops import dequantize
        wdq[p] = dequantize(w[p], qp)

    x = np.asarray(x_dq, dtype=np.float64)
    q = apply_float(x @ wdq["wq"].T, mq["q"], axis=-1)
    k = apply_float(x @ wdq["wk"].T, mq["k"], axis=-1)
    v = apply_float(x @ wdq["wv"].T, mq["v"], axis=-1)
    qh, kh, vh = (split_heads(t, heads) for t in (q, k, v))
    scores = apply_float(qh @ kh.swapaxes(-1, -2), mq["scores"], axis=-1)
    probs = _softmax(scores)
    frac = int(st["probs"]["frac"])
    probs = np.clip(round_half_away(probs * (1 << frac)), 0, 1 << frac) \
        / float(1 << frac)
    ctx = apply_float(merge_heads(probs @ vh), mq["context"], axis=-1)
    out = apply_float(ctx @ wdq["wo"].T, mq["out"], axis=-1)
    if taps is not None:
        taps.update({f"{node.id}#q": q, f"{node.id}#k": k, f"{node.id}#v": v,
                     f"{node.id}#scores": scores, f"{node.id}#probs": probs,
                     f"{node.id}#context": ctx})
    return out


def fused_attention_int(x_q: np.ndarray, node: Node, g: Graph,
                        taps: dict | None = None) -> np.ndarray:
    """Integer-only attention (the hardware path)."""
    st = node.attrs["stages"]
    heads = int(node.attrs["heads"])
    zps = st["zps"]
    mq = {s: MulQuantParams.from_attrs(st[s])
          for s in ("q", "k", "v", "scores", "context", "out")}
    w = {p: np.asarray(g.tensors[node.params[p]].data, dtype=np.int64)
         for p in ("wq", "wk", "wv", "wo")}

    def mm(a: np.ndarray, bT: np.ndarray, what: str) -> np.ndarray:
        check_matmul_bound(a, bT, bT.shape[-2], node.id, f"attention {what}")
        return a @ bT

    x0 = np.asarray(x_q, dtype=np.int64) - int(zps["x"])
    q = apply_int(mm(x0, w["wq"].T, "q"), mq["q"], axis=-1, node_id=node.id)
    k = apply_int(mm(x0, w["wk"].T, "k"), mq["k"], axis=-1, node_id=node.id)
    v = apply_int(mm(x0, w["wv"].T, "v"), mq["v"], axis=-1, node_id=node.id)
    qh = split_heads(q, heads) - int(zps["q"])
    kh = split_heads(k, heads) - int(zps["k"])
    vh = split_heads(v, heads) - int(zps["v"])
    scores = apply_int(mm(qh, kh.swapaxes(-1, -2), "scores"), mq["scores"],
                       axis=-1, node_id=node.id)
    exp_lut = LUTTable.from_json(st["probs"]["exp_lut"])
    recip_lut = LUTTable.from_json(st["probs"]["recip_lut"])
    probs = int_softmax(scores, exp_lut, recip_lut, int(st["probs"]["frac"]))
    ctx = merge_heads(apply_int(mm(probs, vh, "context"), mq["context"],
                                axis=-1, node_id=node.id))
    out = apply_int(mm(ctx - int(zps["context"]), w["wo"].T, "out"),
                    mq["out"], axis=-1, node_id=node.id)
    if taps is not None:
        taps.update({f"{node.id}#q": q, f"{node.id}#k": k, f"{node.id}#v": v,
                     f"{node.id}#scores": scores, f"{node.id}#probs": probs,
                     f"{node.id}#context": ctx})
    return out
