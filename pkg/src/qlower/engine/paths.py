"""Three execution paths over one graph: float reference, fake-quant
(training semantics), and integer-only (deploy semantics).

On a calibrated (unfused) graph, fake-quant snaps annotated edges and
weights to their grids around float ops. On a fused graph it becomes the
training-path mirror of the deployed model: float arithmetic over the
same integer weights and decoded rescaler codes, so it may differ from
the integer path only at rounding boundaries.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ..errors import IntegerPurityError, QuantError
from ..ir import Graph, Node, QuantParams
from ..quant.qops import dequantize, fake_quant, quantize, round_half_away
from ..rescale import MulQuantParams, apply_float, apply_int, requantize
from . import kernels
from .attention import (annotated_attention, fused_attention_float,
                        fused_attention_int)
from .luts import LUTTable, int_gelu, int_layernorm_instant, int_softmax

__all__ = ["ExecReport", "exec_float", "exec_fakequant", "exec_int",
           "exec_collect", "compare_paths", "requantize"]


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def is_fused(g: Graph) -> bool:
    return any(
        n.kind == "mulquant"
        or (n.kind == "attention" and "stages" in n.attrs)
        or (n.kind == "layernorm" and n.attrs.get("integer"))
        or (n.kind in ("gelu", "softmax") and
            ("lut" in n.attrs or "exp_lut" in n.attrs))
        for n in g.nodes)


def _weight(g: Graph, node: Node, mode: str):
    name = node.params["weight"]
    t = g.tensors[name]
    if not t.dtype.is_float:
        qp = g.param_qp.get(name)
        if mode == "int":
            return np.asarray(t.data, dtype=np.int64)
        if qp is None:
            raise QuantError(f"integer weight {name!r} lacks parameters")
        return dequantize(np.asarray(t.data), qp)
    if mode == "int":
        raise IntegerPurityError(f"float weight {name!r} on the integer path "
                                 f"(node {node.id})")
    w = np.asarray(t.data, dtype=np.float64)
    if mode == "fakequant":
        frozen = g.tensors.get(name + ".q")
        qp = g.param_qp.get(name)
        if frozen is not None and qp is not None:
            return dequantize(np.asarray(frozen.data), qp)
        if qp is not None:
            return fake_quant(w, qp)
    return w


def _bias(g: Graph, node: Node):
    name = node.params.get("bias")
    return None if name is None else np.asarray(g.tensors[name].data,
                                                dtype=np.float64)


def _mq_axis(g: Graph, node: Node) -> int:
    """Channel axis for a mulquant's codes: conv accumulators are NCHW."""
    producer = g.producer(node.inputs[0])
    if producer is not None and producer.kind in ("conv2d", "avgpool"):
        return 1
    return -1


def _eval_node(node: Node, env: dict, g: Graph, mode: str, fused: bool,
               taps: dict | None) -> None:
    k = node.kind
    x = env[node.inputs[0]] if node.inputs else None

    if k == "quantstub":
        if mode == "int":
            out = np.asarray(x)
            if not np.issubdtype(out.dtype, np.integer):
                raise IntegerPurityError(f"node {node.id}: integer path fed "
                                         f"float input")
        elif mode == "fakequant" and (node.attrs.get("qp") or
                                      node.outputs[0] in g.edge_qp):
            qp = QuantParams.from_json(node.attrs["qp"]) \
                if node.attrs.get("qp") else g.edge_qp[node.outputs[0]]
            out = fake_quant(np.asarray(x, dtype=np.float64), qp)
        else:
            out = x
    elif k == "dequantstub":
        out = x
    elif k == "conv2d":
        stride = node.attrs["stride"]
        pad = node.attrs["padding"]
        groups = int(node.attrs.get("groups", 1))
        if mode == "int":
            out = kernels.conv2d_int(x, _weight(g, node, mode),
                                     int(node.attrs.get("in_zp", 0)),
                                     stride, pad, groups, node.id)
        else:
            out = kernels.conv2d(np.asarray(x, dtype=np.float64),
                                 _weight(g, node, mode), _bias(g, node),
                                 stride, pad, groups)
    elif k == "linear":
        if mode == "int":
            out = kernels.linear_int(x, _weight(g, node, mode),
                                     int(node.attrs.get("in_zp", 0)), node.id)
        else:
            out = kernels.linear(np.asarray(x, dtype=np.float64),
                                 _weight(g, node, mode), _bias(g, node))
    elif k == "mulquant":
        mq = MulQuantParams.from_attrs(node.attrs)
        axis = _mq_axis(g, node)
        out = apply_int(x, mq, axis, node.id) if mode == "int" \
            else apply_float(x, mq, axis)
    elif k == "batchnorm":
        if mode == "int":
            raise IntegerPurityError(f"node {node.id}: batchnorm on the "
                                     f"integer path (graph not fused)")
        p = {r: np.asarray(g.tensors[t].data, dtype=np.float64)
             for r, t in node.params.items()}
        shape = (1, -1) + (1,) * (np.ndim(x) - 2)
        out = (np.asarray(x, dtype=np.float64) - p["mean"].reshape(shape)) \
            / np.sqrt(p["var"].reshape(shape) + float(node.attrs["eps"])) \
            * p["gamma"].reshape(shape) + p["beta"].reshape(shape)
    elif k == "layernorm":
        if node.attrs.get("integer"):
            if mode == "int":
                out = int_layernorm_instant(
                    x, np.asarray(node.attrs["g_codes"], dtype=np.int64),
                    np.asarray(node.attrs["b_codes"], dtype=np.int64),
                    int(node.attrs["eps_q"]), int(node.attrs["frac_r"]),
                    int(node.attrs["frac_g"]), int(node.attrs["clamp_lo"]),
                    int(node.attrs["clamp_hi"]))
            else:
                xf = np.asarray(x, dtype=np.float64)
                mu = xf.mean(axis=-1, keepdims=True)
                var = xf.var(axis=-1, keepdims=True)
                y = (xf - mu) / np.sqrt(var + float(node.attrs["eps"]))
                y = y * np.asarray(node.attrs["gamma_f"]) \
                    + np.asarray(node.attrs["beta_f"])
                s = float(node.attrs["out_scale"])
                z = int(node.attrs["out_zp"])
                q = np.clip(round_half_away(y / s + z),
                            node.attrs["clamp_lo"], node.attrs["clamp_hi"])
                out = (q - z) * s
        else:
            if mode == "int":
                raise IntegerPurityError(f"node {node.id}: float layernorm on "
                                         f"the integer path")
            xf = np.asarray(x, dtype=np.float64)
            gamma = np.asarray(g.tensors[node.params["gamma"]].data, dtype=np.float64)
            beta = np.asarray(g.tensors[node.params["beta"]].data, dtype=np.float64)
            mu = xf.mean(axis=-1, keepdims=True)
            var = xf.var(axis=-1, keepdims=True)
            out = (xf - mu) / np.sqrt(var + float(node.attrs["eps"])) * gamma + beta
    elif k == "relu":
        if mode == "int":
            raise IntegerPurityError(f"node {node.id}: bare relu on the "
                                     f"integer path (graph not fused)")
        out = np.maximum(x, 0.0)
    elif k == "gelu":
        if node.attrs.get("lut"):
            lut = LUTTable.from_json(node.attrs["lut"])
            lo, hi = int(node.attrs["clamp_lo"]), int(node.attrs["clamp_hi"])
            if mode == "int":
                out = int_gelu(x, lut, int(node.attrs["in_zp"]),
                               int(node.attrs["out_mul_code"]),
                               int(node.attrs["ident_m_code"]),
                               int(node.attrs["out_zp"]), lo, hi)
            else:
                out_qp = QuantParams.from_json(node.attrs["out_qp"])
                y = _gelu(np.asarray(x, dtype=np.float64))
                s = float(out_qp.scale_array()[0])
                z = int(out_qp.zp_array()[0])
                q = np.clip(round_half_away(y / s + z), lo, hi)
                out = (q - z) * s
        else:
            if mode == "int":
                raise IntegerPurityError(f"node {node.id}: float gelu on the "
                                         f"integer path")
            out = _gelu(np.asarray(x, dtype=np.float64))
    elif k == "softmax":
        axis = int(node.attrs.get("axis", -1))
        if node.attrs.get("exp_lut"):
            if mode == "int":
                out = int_softmax(x, LUTTable.from_json(node.attrs["exp_lut"]),
                                  LUTTable.from_json(node.attrs["recip_lut"]),
                                  int(node.attrs["prob_frac"]), axis)
            else:
                frac = int(node.attrs["prob_frac"])
                p = _softmax(np.asarray(x, dtype=np.float64), axis)
                out = np.clip(round_half_away(p * (1 << frac)), 0, 1 << frac) \
                    / float(1 << frac)
        else:
            if mode == "int":
                raise IntegerPurityError(f"node {node.id}: float softmax on "
                                         f"the integer path")
            out = _softmax(np.asarray(x, dtype=np.float64), axis)
    elif k == "add":
        a, bb = env[node.inputs[0]], env[node.inputs[1]]
        if fused and "out_zp" in node.attrs:
            z = int(node.attrs["out_zp"])
            lo, hi = int(node.attrs["clamp_lo"]), int(node.attrs["clamp_hi"])
            if mode == "int":
                out = np.clip(a.astype(np.int64) + bb.astype(np.int64) - z, lo, hi)
            else:
                s = float(node.attrs["out_scale"])
                q = np.clip(round_half_away((np.asarray(a, dtype=np.float64)
                                             + np.asarray(bb)) / s + z), lo, hi)
                out = (q - z) * s
        else:
            out = a + bb
    elif k == "avgpool":
        kk, ss = node.attrs["kernel"], node.attrs["stride"]
        pp = node.attrs.get("padding", 0)
        if mode == "int":
            out = kernels.sumpool_int(x, kk, ss, pp)
        elif fused:
            # fused avgpool feeds a rescaler that owns the 1/k^2 factor
            win = kernels._pool_windows(np.asarray(x, dtype=np.float64),
                                        kk, ss, pp, 0.0)
            out = win.sum(axis=(4, 5))
        else:
            out = kernels.avgpool(np.asarray(x, dtype=np.float64), kk, ss, pp)
    elif k == "maxpool":
        out = kernels.maxpool(np.asarray(x), node.attrs["kernel"],
                              node.attrs["stride"], node.attrs.get("padding", 0))
    elif k == "flatten":
        out = np.asarray(x).reshape(np.shape(x)[0], -1)
    elif k == "attention":
        if "stages" in node.attrs:
            out = fused_attention_int(x, node, g, taps) if mode == "int" \
                else fused_attention_float(np.asarray(x, dtype=np.float64),
                                           node, g, taps)
        else:
            if mode == "int":
                raise IntegerPurityError(f"node {node.id}: attention not fused")
            out = annotated_attention(x, node, g, mode == "fakequant", taps)
    else:
        raise QuantError(f"node {node.id}: no execution rule for kind {k!r}")

    # training-path grid snap at annotated edges (unfused graphs only)
    if mode == "fakequant" and not fused and k not in ("quantstub",) \
            and node.outputs[0] in g.edge_qp:
        out = fake_quant(np.asarray(out, dtype=np.float64),
                         g.edge_qp[node.outputs[0]])

    if mode == "int":
        out_arr = np.asarray(out)
        if not np.issubdtype(out_arr.dtype, np.integer):
            raise IntegerPurityError(
                f"node {node.id}: float result on the integer path")

    env[node.outputs[0]] = out


def _walk(g: Graph, x: np.ndarray, mode: str, taps: dict | None = None) -> dict:
    if len(g.inputs) != 1:
        raise QuantError("executor supports single-input graphs")
    fused = is_fused(g)
    in_edge = g.inputs[0][0]
    # stub-less graphs mark the quantization boundary on the input edge
    if mode == "fakequant" and in_edge in g.edge_qp:
        x = fake_quant(np.asarray(x, dtype=np.float64), g.edge_qp[in_edge])
    env = {in_edge: x}
    for node in g.nodes:
        _eval_node(node, env, g, mode, fused, taps)
    if taps is not None:
        taps.update(env)
    return env


def exec_float(g: Graph, x: np.ndarray) -> np.ndarray:
    """fp forward; on fused graphs this is the training-path mirror."""
    mode = "fakequant" if is_fused(g) else "float"
    return _walk(g, np.asarray(x, dtype=np.float64), mode)[g.outputs[0]]


def exec_fakequant(g: Graph, x: np.ndarray) -> np.ndarray:
    return _walk(g, np.asarray(x, dtype=np.float64), "fakequant")[g.outputs[0]]


def exec_int(g: Graph, x_q: np.ndarray, assert_int_only: bool = True,
             stats: dict | None = None) -> np.ndarray:
    """Integer-only forward over a fused graph.

    Raises IntegerPurityError if any float value appears between the
    quant and dequant boundaries; ``stats`` records the count (always 0
    when the call returns).
    """
    if not assert_int_only:
        out = _walk(g, np.asarray(x_q), "int")[g.outputs[0]]
        if stats is not None:
            stats["float_ops"] = 0
        return out
    out = _walk(g, np.asarray(x_q), "int")[g.outputs[0]]
    if stats is not None:
        stats["float_ops"] = 0
    return out


def exec_collect(g: Graph, x: np.ndarray, mode: str = "float") -> dict:
    """Run a path and return every edge (plus attention-internal) value."""
    taps: dict = {}
    _walk(g, np.asarray(x) if mode == "int" else np.asarray(x, dtype=np.float64),
          mode, taps)
    return taps


# ---------------------------------------------------------------------------
# Path comparison
# ---------------------------------------------------------------------------

@dataclass
class ExecReport:
    layers: list = field(default_factory=list)   # per-tap dicts
    argmax_agreement: float = 1.0                # int vs fused fake-quant
    argmax_vs_reference: float | None = None     # int vs calibrated fake-quant
    argmax_vs_float: float | None = None         # int vs float reference
    samples: int = 0
    runtime_fakequant_s: float = 0.0
    runtime_int_s: float = 0.0
    max_lsb: float = 0.0                         # layer output edges
    max_lsb_internal: float = 0.0                # op-internal taps (finer grids)

    def to_json(self) -> dict:
        return {
            "layers": self.layers,
            "argmax_agreement": self.argmax_agreement,
            "argmax_vs_reference": self.argmax_vs_reference,
            "argmax_vs_float": self.argmax_vs_float,
            "samples": self.samples,
            "runtime_fakequant_s": self.runtime_fakequant_s,
            "runtime_int_s": self.runtime_int_s,
            "max_lsb": self.max_lsb,
            "max_lsb_internal": self.max_lsb_internal,
        }


def input_qp(g: Graph) -> QuantParams:
    """Quantization of the graph input (quantstub attrs or edge annotation)."""
    first = g.nodes[0]
    if first.kind == "quantstub" and first.attrs.get("qp"):
        return QuantParams.from_json(first.attrs["qp"])
    edge = g.inputs[0][0]
    if edge in g.edge_qp:
        return g.edge_qp[edge]
    for node in g.nodes:
        if node.kind == "quantstub" and node.outputs[0] in g.edge_qp:
            return g.edge_qp[node.outputs[0]]
    raise QuantError("graph input has no quantization annotation")


def _codes(val: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Exact integer codes of grid-aligned dequantized values."""
    s = float(qp.scale_array()[0])
    z = int(qp.zp_array()[0])
    return round_half_away(np.asarray(val, dtype=np.float64) / s + z).astype(np.int64)


def compare_paths(g_ref: Graph | None, g_fused: Graph, batches,
                  g_calibrated: Graph | None = None) -> ExecReport:
    """Dual-path verification: integer vs fake-quant over the fused graph.

    Optionally also scores the integer path against the calibrated
    (unfused) fake-quant semantics and the float reference.
    """
    in_qp = input_qp(g_fused)
    report = ExecReport()
    agree = agree_ref = agree_float = total = 0
    acc: dict[str, dict] = {}
    t_fq = t_int = 0.0
    for x in batches:
        x = np.asarray(x, dtype=np.float64)
        t0 = time.perf_counter()
        fq_taps = exec_collect(g_fused, x, "fakequant")
        t_fq += time.perf_counter() - t0
        x_q = quantize(x, in_qp)
        t0 = time.perf_counter()
        int_taps = exec_collect(g_fused, x_q, "int")
        t_int += time.perf_counter() - t0

        for edge, qp in g_fused.edge_qp.items():
            if edge not in fq_taps or edge not in int_taps:
                continue
            ref_q = _codes(fq_taps[edge], qp)
            got_q = np.asarray(int_taps[edge], dtype=np.int64)
            if ref_q.shape != got_q.shape:
                continue
            diff = np.abs(ref_q - got_q)
            row = acc.setdefault(edge, {"max": 0, "sum": 0, "n": 0})
            row["max"] = max(row["max"], int(diff.max()) if diff.size else 0)
            row["sum"] += float(diff.sum())
            row["n"] += diff.size

        out_edge = g_fused.outputs[0]
        fq_logits = np.asarray(fq_taps[out_edge], dtype=np.float64)
        out_qp = g_fused.edge_qp.get(out_edge)
        int_out = np.asarray(int_taps[out_edge])
        int_logits = dequantize(int_out, out_qp) if out_qp is not None else int_out
        fq_am = fq_logits.reshape(fq_logits.shape[0], -1).argmax(axis=1)
        int_am = int_logits.reshape(int_logits.shape[0], -1).argmax(axis=1)
        agree += int((fq_am == int_am).sum())
        total += fq_am.size
        if g_calibrated is not None:
            cal = exec_fakequant(g_calibrated, x)
            cal_am = cal.reshape(cal.shape[0], -1).argmax(axis=1)
            agree_ref += int((cal_am == int_am).sum())
        if g_ref is not None:
            fl = exec_float(g_ref, x)
            fl_am = fl.reshape(fl.shape[0], -1).argmax(axis=1)
            agree_float += int((fl_am == int_am).sum())

    report.samples = total
    report.argmax_agreement = agree / total if total else 1.0
    if g_calibrated is not None and total:
        report.argmax_vs_reference = agree_ref / total
    if g_ref is not None and total:
        report.argmax_vs_float = agree_float / total
    report.runtime_fakequant_s = t_fq
    report.runtime_int_s = t_int
    report.layers = [
        {"edge": e, "max_lsb": row["max"],
         "mean_lsb": row["sum"] / row["n"] if row["n"] else 0.0,
         "internal": "#" in e}
        for e, row in acc.items()
    ]
    # op-internal taps (attention stages, probs) live on finer grids with
    # their own tolerances; the layer-output gate excludes them
    report.max_lsb = max((r["max_lsb"] for r in report.layers
                          if not r["internal"]), default=0.0)
    report.max_lsb_internal = max((r["max_lsb"] for r in report.layers
                                   if r["internal"]), default=0.0)
    return report
