"""Lowering passes: fold normalization and quantizer scales into per-layer
fixed-point rescalers, replacing float arithmetic with integer ops.

Two schemes:

* ``prefuse``     -- fold norm into the weights before quantization, one
                     unified rescale per layer (the 8-bit friendly path).
* ``channelwise`` -- keep weights as calibrated and carry the norm as
                     per-channel fixed-point scale/bias (robust below 8 bit).

Either way each conv/linear(+norm)(+relu) chain becomes an integer layer
feeding a ``mulquant`` node: out = clamp(round((acc * m + b) / 2^frac)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .engine.luts import INDEX_SHIFT, ISQRT_FRAC, lut_build, softmax_luts
from .errors import FusionError
from .ir import Graph, Node, QuantParams, Tensor, int_dtype
from .quant.observers import weight_qparams
from .quant.qops import quantize, round_half_away
from .rescale import MulQuantParams, build_mulquant, encode_multiplier

__all__ = [
    "FuseMode", "NormParams", "MulQuantParams", "bn_prefuse", "bn_channelwise",
    "build_mulquant", "encode_multiplier", "fuse_graph", "layernorm_fold",
    "assert_integer_only",
]


@dataclass
class FuseMode:
    mode: str = "channelwise"        # "prefuse" | "channelwise"
    int_bits: int = 4
    frac_bits: int = 12
    ln_mode: str = "instant"         # "instant" | "running"
    prob_frac: int = 12
    lut_entries: int = 256

    def __post_init__(self):
        if self.mode not in ("prefuse", "channelwise"):
            raise ValueError(f"unknown fuse mode {self.mode!r}")
        if self.ln_mode not in ("instant", "running"):
            raise ValueError(f"unknown layernorm mode {self.ln_mode!r}")


@dataclass
class NormParams:
    """Per-channel normalization parameters (scale, shift, running stats)."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float

    def __post_init__(self):
        sizes = {np.size(self.gamma), np.size(self.beta),
                 np.size(self.mean), np.size(self.var)}
        if len(sizes) != 1:
            raise FusionError(f"norm parameter lengths differ: {sizes}")
        if np.any(np.asarray(self.var) < 0):
            raise FusionError("negative running variance")
        if self.eps < 0:
            raise FusionError("negative eps")


def bn_prefuse(w: np.ndarray, norm: NormParams) -> tuple[np.ndarray, np.ndarray]:
    """Fold the norm into the weights; returns (fused weights, new bias)."""
    denom = np.sqrt(norm.var + norm.eps)
    if w.shape[0] != np.size(norm.gamma):
        raise FusionError(
            f"weight output channels {w.shape[0]} != norm channels {np.size(norm.gamma)}")
    shape = (w.shape[0],) + (1,) * (w.ndim - 1)
    w_fuse = w * (norm.gamma / denom).reshape(shape)
    beta_star = norm.beta - norm.gamma * norm.mean / denom
    return w_fuse, beta_star


def bn_channelwise(norm: NormParams) -> tuple[np.ndarray, np.ndarray]:
    """Reformulate the norm as per-channel scale/bias on the layer output."""
    denom = np.sqrt(norm.var + norm.eps)
    gamma_star = norm.gamma / denom
    beta_star = norm.beta - norm.gamma * norm.mean / denom
    return gamma_star, beta_star


# ---------------------------------------------------------------------------
# Graph rewriting
# ---------------------------------------------------------------------------

def _norm_params(g: Graph, node: Node) -> NormParams:
    p = {k: np.asarray(g.tensors[v].data, dtype=np.float64)
         for k, v in node.params.items()}
    if "mean" not in p or "var" not in p:
        raise FusionError(
            f"node {node.id}: running statistics required for folding "
            f"(calibrate the graph first)")
    return NormParams(p["gamma"], p["beta"], p["mean"], p["var"],
                      float(node.attrs["eps"]))


def _resolve_out_qp(g: Graph, edge: str) -> tuple[str, QuantParams]:
    """Follow shape-transparent ops until an annotated edge is found."""
    cur = edge
    while cur not in g.edge_qp:
        cons = g.consumers(cur)
        if len(cons) == 1 and cons[0].kind in ("flatten", "maxpool"):
            cur = cons[0].outputs[0]
            continue
        raise FusionError(f"no activation annotation reachable from edge {edge!r}")
    return cur, g.edge_qp[cur]


def _frozen_weights(g: Graph, wname: str) -> tuple[np.ndarray, QuantParams]:
    qp = g.param_qp.get(wname)
    if qp is None:
        raise FusionError(f"weight {wname!r} has no quantization parameters")
    if not qp.symmetric or not qp.signed:
        raise FusionError(f"weight {wname!r}: integer lowering requires "
                          f"symmetric signed weights")
    frozen = g.tensors.get(wname + ".q")
    if frozen is not None:
        return np.asarray(frozen.data, dtype=np.int64), qp
    return quantize(np.asarray(g.tensors[wname].data, dtype=np.float64), qp), qp


def _chain(g: Graph, node: Node, ln_running: bool) -> tuple[Node | None, Node | None, str]:
    """Scan conv/linear -> [norm] -> [relu] single-consumer chains."""
    edge = node.outputs[0]
    norm = relu = None
    while True:
        cons = g.consumers(edge)
        if len(cons) != 1 or edge in g.outputs:
            break
        nxt = cons[0]
        if nxt.kind == "batchnorm" and norm is None and relu is None:
            norm, edge = nxt, nxt.outputs[0]
        elif nxt.kind == "layernorm" and ln_running and norm is None and relu is None:
            norm, edge = nxt, nxt.outputs[0]
        elif nxt.kind == "relu" and relu is None:
            relu, edge = nxt, nxt.outputs[0]
        else:
            break
    return norm, relu, edge


def _fold_layer(g: Graph, node: Node, mode: FuseMode, consumed: set,
                out: Graph) -> None:
    norm_node, relu_node, out_edge = _chain(g, node, mode.ln_mode == "running")
    _, out_qp = _resolve_out_qp(g, out_edge)
    in_qp = g.edge_qp.get(node.inputs[0])
    if in_qp is None:
        raise FusionError(f"node {node.id}: input edge {node.inputs[0]!r} "
                          f"has no activation annotation")
    wname = node.params["weight"]
    w = np.asarray(g.tensors[wname].data, dtype=np.float64)
    bias = None
    if "bias" in node.params:
        bias = np.asarray(g.tensors[node.params["bias"]].data, dtype=np.float64)

    gamma_star = beta_star = None
    if norm_node is not None:
        norm = _norm_params(g, norm_node)
        gamma_star, beta_star = bn_channelwise(norm)
        consumed.add(norm_node.id)
    if relu_node is not None:
        consumed.add(relu_node.id)

    w_bits = g.param_qp[wname].bits if wname in g.param_qp else 8
    if mode.mode == "prefuse":
        w_eff = w if norm_node is None else bn_prefuse(w, norm)[0]
        w_qp = weight_qparams(w_eff, w_bits, per_channel=False, symmetric=True)
        w_q = quantize(w_eff, w_qp)
        mq_gamma = None
    else:
        w_q, w_qp = _frozen_weights(g, wname)
        w_eff = w
        mq_gamma = gamma_star

    # conv bias (and, for prefuse, the folded norm shift) become the
    # rescaler bias: beta_eff = beta* + gamma* . bias
    g_eff = np.ones(w.shape[0]) if gamma_star is None else gamma_star
    beta_eff = np.zeros(w.shape[0])
    if beta_star is not None:
        beta_eff = beta_eff + beta_star
    if bias is not None:
        beta_eff = beta_eff + g_eff * bias

    mq = build_mulquant(
        s_w=w_qp.scale, s_x=float(in_qp.scale_array()[0]),
        s_x_next=float(out_qp.scale_array()[0]),
        gamma_star=mq_gamma, beta_star=beta_eff,
        fp_spec=(mode.int_bits, mode.frac_bits), out_qp=out_qp,
        relu_next=relu_node is not None)

    wq_name = wname + ".q"
    out.tensors[wq_name] = Tensor.from_array(
        w_q.astype(np.int64), int_dtype(w_qp.bits, True))
    out.param_qp[wq_name] = w_qp

    acc_edge = f"{node.id}.acc"
    attrs = {k: node.attrs[k] for k in node.attrs if k in ("stride", "padding", "groups")}
    attrs["in_zp"] = int(in_qp.zp_array()[0])
    out.nodes.append(Node(node.id, node.kind, [node.inputs[0]], [acc_edge],
                          attrs, {"weight": wq_name}))
    out.nodes.append(Node(f"{node.id}.rq", "mulquant", [acc_edge], [out_edge],
                          mq.to_attrs(), {}))
    out.edge_qp[out_edge] = out_qp


def _fuse_layernorm_instant(g: Graph, node: Node, mode: FuseMode,
                            out: Graph) -> None:
    in_edge = node.inputs[0]
    in_qp = g.edge_qp.get(in_edge)
    _, out_qp = _resolve_out_qp(g, node.outputs[0])
    if in_qp is None:
        raise FusionError(f"node {node.id}: layernorm input lacks annotation")
    gamma = np.asarray(g.tensors[node.params["gamma"]].data, dtype=np.float64)
    beta = np.asarray(g.tensors[node.params["beta"]].data, dtype=np.float64)
    eps = float(node.attrs["eps"])
    c = gamma.size
    s_in = float(in_qp.scale_array()[0])
    s_out = float(out_qp.scale_array()[0])
    z_out = int(out_qp.zp_array()[0])
    frac_g = 14
    eps_q = int(round(eps * c / (s_in * s_in)))
    g_codes = round_half_away(gamma * math.sqrt(c) / s_out * (1 << frac_g)).astype(np.int64)
    b_codes = round_half_away(beta / s_out * (1 << frac_g)).astype(np.int64) \
        + (z_out << frac_g)
    lo, hi = out_qp.qrange()
    attrs = {
        "eps": eps, "axis": -1, "integer": True,
        "g_codes": [int(v) for v in g_codes],
        "b_codes": [int(v) for v in b_codes],
        "eps_q": eps_q, "frac_r": ISQRT_FRAC, "frac_g": frac_g,
        "clamp_lo": int(lo), "clamp_hi": int(hi),
        "out_scale": s_out, "out_zp": z_out,
        "gamma_f": [float(v) for v in gamma], "beta_f": [float(v) for v in beta],
        "in_zp": int(in_qp.zp_array()[0]),
    }
    out.nodes.append(Node(node.id, "layernorm", [in_edge], [node.outputs[0]],
                          attrs, {}))
    out.edge_qp[node.outputs[0]] = out_qp


def layernorm_fold(g: Graph, node_id: str, mode: str,
                   fp_spec: tuple[int, int] = (4, 12)) -> Graph:
    """Fold one layernorm node (running stats into the producing layer's
    rescaler, or instant statistics into an integer norm engine op) and
    return the rewritten graph."""
    fm = FuseMode(mode="channelwise", int_bits=fp_spec[0], frac_bits=fp_spec[1],
                  ln_mode="running" if mode == "running_stats" else "instant")
    if mode == "running_stats":
        node = g.node(node_id)
        producer = g.producer(node.inputs[0])
        if producer is None or producer.kind not in ("conv2d", "linear"):
            raise FusionError(
                f"node {node_id}: running-stats folding needs a conv/linear producer")
        _norm_params(g, node)  # raises when calibration stats are missing
    return fuse_graph(g, fm)


def _fuse_gelu(g: Graph, node: Node, mode: FuseMode, out: Graph) -> None:
    in_qp = g.edge_qp.get(node.inputs[0])
    _, out_qp = _resolve_out_qp(g, node.outputs[0])
    if in_qp is None:
        raise FusionError(f"node {node.id}: gelu input lacks annotation")
    s_in = float(in_qp.scale_array()[0])
    s_out = float(out_qp.scale_array()[0])
    lut = lut_build("gelu", (-4.0, 4.0), mode.lut_entries, (4, 12))
    lut = lut.with_index_map(s_in, 0)
    lo, hi = out_qp.qrange()
    attrs = {
        "lut": lut.to_json(),
        "in_qp": in_qp.to_json(),
        "out_qp": out_qp.to_json(),
        "ident_m_code": int(round((s_in / s_out) * (1 << INDEX_SHIFT))),
        "ident_frac": INDEX_SHIFT,
        "out_mul_code": int(round((1.0 / s_out) * (1 << INDEX_SHIFT))),
        "in_zp": int(in_qp.zp_array()[0]),
        "out_zp": int(out_qp.zp_array()[0]),
        "clamp_lo": int(lo),
        "clamp_hi": int(hi),
    }
    out.nodes.append(Node(node.id, "gelu", [node.inputs[0]], [node.outputs[0]],
                          attrs, {}))
    out.edge_qp[node.outputs[0]] = out_qp


def _prob_qp(prob_frac: int) -> QuantParams:
    return QuantParams(scale=1.0 / (1 << prob_frac), zero_point=0,
                       bits=min(prob_frac + 1, 16), signed=False, symmetric=True)


def _fuse_softmax(g: Graph, node: Node, mode: FuseMode, out: Graph) -> None:
    in_qp = g.edge_qp.get(node.inputs[0])
    if in_qp is None:
        raise FusionError(f"node {node.id}: softmax input lacks annotation")
    exp_lut, recip_lut = softmax_luts(float(in_qp.scale_array()[0]),
                                      mode.lut_entries)
    out_qp = _prob_qp(mode.prob_frac)
    attrs = {
        "axis": node.attrs.get("axis", -1),
        "exp_lut": exp_lut.to_json(),
        "recip_lut": recip_lut.to_json(),
        "prob_frac": mode.prob_frac,
        "in_qp": in_qp.to_json(),
        "out_qp": out_qp.to_json(),
    }
    out.nodes.append(Node(node.id, "softmax", [node.inputs[0]],
                          [node.outputs[0]], attrs, {}))
    out.edge_qp[node.outputs[0]] = out_qp


def _fuse_attention(g: Graph, node: Node, mode: FuseMode, out: Graph) -> None:
    in_edge = node.inputs[0]
    in_qp = g.edge_qp.get(in_edge)
    _, out_qp = _resolve_out_qp(g, node.outputs[0])
    if in_qp is None:
        raise FusionError(f"node {node.id}: attention input lacks annotation")

    def internal(stage: str) -> QuantParams:
        key = f"{node.id}#{stage}"
        if key not in g.edge_qp:
            raise FusionError(f"node {node.id}: missing internal annotation {key!r}")
        return g.edge_qp[key]

    heads = int(node.attrs["heads"])
    d_model = g.tensors[node.params["wq"]].shape[0]
    dh = d_model // heads
    fp = (mode.int_bits, mode.frac_bits)

    stages: dict = {}
    params: dict[str, str] = {}
    s_x = float(in_qp.scale_array()[0])
    proj_qps = {}
    for stage in ("q", "k", "v"):
        wname = node.params[f"w{stage}"]
        w_q, w_qp = _frozen_weights(g, wname)
        bias = None
        bname = node.params.get(f"b{stage}")
        if bname is not None:
            bias = np.asarray(g.tensors[bname].data, dtype=np.float64)
        sqp = internal(stage)
        proj_qps[stage] = sqp
        stages[stage] = build_mulquant(
            s_w=w_qp.scale, s_x=s_x, s_x_next=float(sqp.scale_array()[0]),
            gamma_star=None, beta_star=bias, fp_spec=fp, out_qp=sqp).to_attrs()
        wq_name = wname + ".q"
        out.tensors[wq_name] = Tensor.from_array(w_q, int_dtype(w_qp.bits, True))
        out.param_qp[wq_name] = w_qp
        params[f"w{stage}"] = wq_name

    score_qp = internal("scores")
    s_q = float(proj_qps["q"].scale_array()[0])
    s_k = float(proj_qps["k"].scale_array()[0])
    # the 1/sqrt(d) factor folds into the score multiplier; the accumulator
    # unit stays S_q*S_k so the float mirror divides by that
    score_mq = build_mulquant(
        s_w=s_k / math.sqrt(dh), s_x=s_q,
        s_x_next=float(score_qp.scale_array()[0]), gamma_star=None,
        beta_star=None, fp_spec=fp, out_qp=score_qp)
    score_mq = replace(score_mq, acc_scale=s_q * s_k)
    stages["scores"] = score_mq.to_attrs()

    exp_lut, recip_lut = softmax_luts(float(score_qp.scale_array()[0]),
                                      mode.lut_entries)
    stages["probs"] = {"exp_lut": exp_lut.to_json(),
                       "recip_lut": recip_lut.to_json(),
                       "frac": mode.prob_frac}

    ctx_qp = internal("context")
    s_v = float(proj_qps["v"].scale_array()[0])
    ctx_mq = build_mulquant(
        s_w=s_v, s_x=1.0 / (1 << mode.prob_frac),
        s_x_next=float(ctx_qp.scale_array()[0]), gamma_star=None,
        beta_star=None, fp_spec=fp, out_qp=ctx_qp)
    stages["context"] = ctx_mq.to_attrs()

    wo_name = node.params["wo"]
    wo_q, wo_qp = _frozen_weights(g, wo_name)
    bo = None
    if node.params.get("bo") is not None:
        bo = np.asarray(g.tensors[node.params["bo"]].data, dtype=np.float64)
    out_mq = build_mulquant(
        s_w=wo_qp.scale, s_x=float(ctx_qp.scale_array()[0]),
        s_x_next=float(out_qp.scale_array()[0]), gamma_star=None,
        beta_star=bo, fp_spec=fp, out_qp=out_qp)
    stages["out"] = out_mq.to_attrs()
    wq_name = wo_name + ".q"
    out.tensors[wq_name] = Tensor.from_array(wo_q, int_dtype(wo_qp.bits, True))
    out.param_qp[wq_name] = wo_qp
    params["wo"] = wq_name

    # zero points each integer matmul subtracts from its operands
    stages["zps"] = {
        "x": int(in_qp.zp_array()[0]),
        "q": int(proj_qps["q"].zp_array()[0]),
        "k": int(proj_qps["k"].zp_array()[0]),
        "v": int(proj_qps["v"].zp_array()[0]),
        "context": int(ctx_qp.zp_array()[0]),
    }

    # stage qps kept for verification taps
    for stage, qp in (("q", proj_qps["q"]), ("k", proj_qps["k"]),
                      ("v", proj_qps["v"]), ("scores", score_qp),
                      ("context", ctx_qp)):
        out.edge_qp[f"{node.id}#{stage}"] = qp
    out.edge_qp[f"{node.id}#probs"] = _prob_qp(mode.prob_frac)

    out.nodes.append(Node(node.id, "attention", [in_edge], [node.outputs[0]],
                          {"heads": heads, "stages": stages}, params))
    out.edge_qp[node.outputs[0]] = out_qp


def _requant_mq(in_qp: QuantParams, out_qp: QuantParams, mode: FuseMode,
                relu_next: bool = False, pool_kernel: int = 1,
                pool_scale: float = 1.0) -> MulQuantParams:
    """Plain tensor requantization (residual inputs, standalone relu, pools).

    ``pool_scale`` folds an averaging divisor into the multiplier while the
    accumulator unit stays the raw input scale.
    """
    mq = build_mulquant(
        s_w=1.0, s_x=float(in_qp.scale_array()[0]) * pool_scale,
        s_x_next=float(out_qp.scale_array()[0]), gamma_star=None,
        beta_star=None, fp_spec=(mode.int_bits, mode.frac_bits), out_qp=out_qp,
        relu_next=relu_next, in_zp=int(in_qp.zp_array()[0]),
        pool_kernel=pool_kernel)
    return replace(mq, acc_scale=float(in_qp.scale_array()[0]))


def fuse_graph(g: Graph, mode: FuseMode) -> Graph:
    """Lower a calibrated float graph to integer ops + mulquant rescalers."""
    from .ir import infer_shapes
    g = infer_shapes(g)
    out = Graph(nodes=[], inputs=list(g.inputs), outputs=list(g.outputs),
                tensors={}, edge_qp={}, param_qp={})
    for e, _ in g.inputs:
        if e in g.edge_qp:
            out.edge_qp[e] = g.edge_qp[e]
    consumed: set[str] = set()

    for node in g.nodes:
        if node.id in consumed:
            continue
        kind = node.kind
        if kind in ("conv2d", "linear"):
            _fold_layer(g, node, mode, consumed, out)
        elif kind == "batchnorm":
            raise FusionError(
                f"node {node.id}: norm layer without a preceding conv/linear "
                f"cannot be folded")
        elif kind == "layernorm":
            if mode.ln_mode == "running":
                raise FusionError(
                    f"node {node.id}: norm layer without a preceding conv/linear "
                    f"cannot be folded in running-stats mode")
            _fuse_layernorm_instant(g, node, mode, out)
        elif kind == "relu":
            in_qp = g.edge_qp.get(node.inputs[0])
            _, out_qp = _resolve_out_qp(g, node.outputs[0])
            if in_qp is None:
                raise FusionError(f"node {node.id}: relu input lacks annotation")
            mq = _requant_mq(in_qp, out_qp, mode, relu_next=True)
            out.nodes.append(Node(node.id, "mulquant", [node.inputs[0]],
                                  [node.outputs[0]], mq.to_attrs(), {}))
            out.edge_qp[node.outputs[0]] = out_qp
        elif kind == "add":
            relu = None
            cons = g.consumers(node.outputs[0])
            if len(cons) == 1 and cons[0].kind == "relu":
                relu = cons[0]
                consumed.add(relu.id)
            final_edge = relu.outputs[0] if relu is not None else node.outputs[0]
            _, out_qp = _resolve_out_qp(g, final_edge)
            new_inputs = []
            for idx, e in enumerate(node.inputs):
                eqp = g.edge_qp.get(e)
                if eqp is None:
                    raise FusionError(f"node {node.id}: add input {e!r} lacks annotation")
                if eqp.to_json() == out_qp.to_json():
                    new_inputs.append(e)
                    continue
                rq_edge = f"{node.id}.in{idx}"
                mq = _requant_mq(eqp, out_qp, mode)
                out.nodes.append(Node(f"{node.id}.rq{idx}", "mulquant", [e],
                                      [rq_edge], mq.to_attrs(), {}))
                out.edge_qp[rq_edge] = out_qp
                new_inputs.append(rq_edge)
            lo, hi = out_qp.qrange()
            z_out = int(out_qp.zp_array()[0])
            if relu is not None:
                lo = max(lo, z_out)
            out_edge = final_edge
            out.nodes.append(Node(node.id, "add", new_inputs, [out_edge],
                                  {"out_scale": float(out_qp.scale_array()[0]),
                                   "out_zp": z_out, "clamp_lo": int(lo),
                                   "clamp_hi": int(hi)}, {}))
            out.edge_qp[out_edge] = out_qp
        elif kind == "avgpool":
            in_qp = g.edge_qp.get(node.inputs[0])
            _, out_qp = _resolve_out_qp(g, node.outputs[0])
            if in_qp is None:
                raise FusionError(f"node {node.id}: avgpool input lacks annotation")
            k = node.attrs["kernel"]
            kh, kw = (k, k) if isinstance(k, int) else (int(k[0]), int(k[1]))
            acc_edge = f"{node.id}.acc"
            out.nodes.append(Node(node.id, "avgpool", [node.inputs[0]],
                                  [acc_edge], dict(node.attrs), {}))
            mq = _requant_mq(in_qp, out_qp, mode, pool_kernel=kh * kw,
                             pool_scale=1.0 / (kh * kw))
            out.nodes.append(Node(f"{node.id}.rq", "mulquant", [acc_edge],
                                  [node.outputs[0]], mq.to_attrs(), {}))
            out.edge_qp[node.outputs[0]] = out_qp
        elif kind in ("maxpool", "flatten"):
            out.nodes.append(Node(node.id, kind, list(node.inputs),
                                  list(node.outputs), dict(node.attrs), {}))
            src_qp = out.edge_qp.get(node.inputs[0]) or g.edge_qp.get(node.inputs[0])
            if src_qp is not None:
                out.edge_qp[node.outputs[0]] = src_qp
        elif kind == "gelu":
            _fuse_gelu(g, node, mode, out)
        elif kind == "softmax":
            _fuse_softmax(g, node, mode, out)
        elif kind == "attention":
            _fuse_attention(g, node, mode, out)
        elif kind in ("quantstub", "dequantstub"):
            edge = node.outputs[0] if kind == "quantstub" else node.inputs[0]
            qp = g.edge_qp.get(edge)
            if qp is None:
                raise FusionError(f"node {node.id}: stub edge {edge!r} lacks annotation")
            out.nodes.append(Node(node.id, kind, list(node.inputs),
                                  list(node.outputs), {"qp": qp.to_json()}, {}))
            out.edge_qp[edge] = qp
            if kind == "quantstub":
                out.edge_qp[node.outputs[0]] = qp
        else:
            raise FusionError(f"node {node.id}: kind {kind!r} has no lowering rule")

    assert_integer_only(out)
    return out


def assert_integer_only(g: Graph) -> None:
    """Raise when any float parameter tensor remains in the graph."""
    for name, t in g.tensors.items():
        if t.dtype.is_float:
            raise FusionError(f"graph is not integer-only: float tensor {name!r}")
