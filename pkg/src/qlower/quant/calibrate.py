"""Whole-graph calibration: run float batches, observe activations, pick
quantization parameters, and freeze integer weights.

Both execution paths share the frozen weights afterwards: the training
path dequantizes them, the deploy path uses them directly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..engine.luts import PROB_FRAC
from ..engine.paths import exec_collect
from ..errors import QuantError
from ..ir import FLOAT32, Graph, Node, QuantParams, Tensor, infer_shapes, int_dtype
from .adaround import adaround_fit, adaround_freeze, adaround_init
from .observers import (Observer, compute_qparams, compute_qparams_mse,
                        observe, weight_qparams)
from .qops import quantize

# ops whose inputs must carry activation annotations for lowering
ANNOTATED_CONSUMERS = frozenset({
    "conv2d", "linear", "attention", "add", "avgpool", "maxpool",
    "gelu", "softmax", "layernorm", "dequantstub",
})


@dataclass
class QConfig:
    w_bits: int = 8
    a_bits: int = 8
    symmetric_w: bool = True
    symmetric_a: bool = False
    per_channel_w: bool = True
    method: str = "minmax"          # minmax | mse | adaround
    calib_batches: int = 4
    adaround_iters: int = 600

    def __post_init__(self):
        if not (2 <= self.w_bits <= 16 and 2 <= self.a_bits <= 16):
            raise QuantError(f"bits outside 2..16: w={self.w_bits} a={self.a_bits}")
        if self.method not in ("minmax", "mse", "adaround"):
            raise QuantError(f"unknown calibration method {self.method!r}")
        if not self.symmetric_w:
            raise QuantError("integer lowering requires symmetric weights")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "QConfig":
        return cls(**{k: obj[k] for k in asdict(cls()).keys() if k in obj})


def _act_qp(obs: Observer, cfg: QConfig) -> QuantParams:
    if cfg.method == "mse" and obs.samples:
        return compute_qparams_mse(np.concatenate(obs.samples), cfg.a_bits)
    signed = True if cfg.symmetric_a else False
    return compute_qparams(obs, cfg.a_bits, signed=signed,
                           symmetric=cfg.symmetric_a)


def _weight_qp_mse(w: np.ndarray, bits: int, per_channel: bool) -> QuantParams:
    if not per_channel:
        return compute_qparams_mse(w.ravel(), bits)
    scales = []
    for c in range(w.shape[0]):
        qp = compute_qparams_mse(w[c].ravel(), bits)
        scales.append(float(qp.scale_array()[0]))
    return QuantParams(np.asarray(scales), np.zeros(len(scales), dtype=np.int64),
                       bits, True, True)


def _edges_to_annotate(g: Graph) -> set[str]:
    edges: set[str] = set()
    for node in g.nodes:
        if node.kind in ANNOTATED_CONSUMERS:
            edges.update(node.inputs)
    edges.update(g.outputs)
    return edges


def _layer_inputs_matrix(node: Node, x: np.ndarray, g: Graph) -> np.ndarray:
    """Flatten a layer input batch to (N, K) rows matching the weight."""
    from ..engine.kernels import im2col

    if node.kind == "linear":
        w = g.tensors[node.params["weight"]]
        return np.asarray(x, dtype=np.float64).reshape(-1, w.shape[1])
    wt = g.tensors[node.params["weight"]]
    _, _, kh, kw = wt.shape
    patches, _, _ = im2col(np.asarray(x, dtype=np.float64), kh, kw,
                           node.attrs["stride"], node.attrs["padding"])
    return patches.reshape(-1, patches.shape[-1])


def calibrate_graph(g: Graph, data, cfg: QConfig) -> Graph:
    """Annotate every quantized edge and weight; freeze integer weights."""
    batches = [np.asarray(b, dtype=np.float64) for b in data]
    if not batches:
        raise QuantError("empty calibration set")
    batches = batches[: cfg.calib_batches] if cfg.calib_batches else batches
    g = infer_shapes(g)

    edges = _edges_to_annotate(g)
    observers: dict[str, Observer] = {}
    ln_stats: dict[str, list] = {}
    layer_inputs: dict[str, list] = {}
    need_inputs = cfg.method == "adaround"

    all_taps: list[dict] = []
    for x in batches:
        taps = exec_collect(g, x, "float")
        all_taps.append(taps)
        for e in list(edges):
            if e in taps:
                obs = observers.setdefault(
                    e, Observer(mode="mse" if cfg.method == "mse" else "minmax",
                                name=e))
                observe(obs, taps[e])
        for node in g.nodes:
            if node.kind == "attention":
                for stage in ("q", "k", "v", "scores", "context"):
                    key = f"{node.id}#{stage}"
                    if key in taps:
                        obs = observers.setdefault(
                            key, Observer(mode="mse" if cfg.method == "mse"
                                          else "minmax", name=key))
                        observe(obs, taps[key])
            elif node.kind == "layernorm":
                xin = np.asarray(taps[node.inputs[0]], dtype=np.float64)
                ln_stats.setdefault(node.id, []).append(
                    (float(xin.mean(axis=-1).mean()),
                     float(xin.var(axis=-1).mean())))
            if need_inputs and node.kind in ("conv2d", "linear"):
                layer_inputs.setdefault(node.id, []).append(
                    _layer_inputs_matrix(node, taps[node.inputs[0]], g))

    out = g.copy()
    for e, obs in observers.items():
        out.edge_qp[e] = _act_qp(obs, cfg)
    for node in out.nodes:
        if node.kind == "attention":
            out.edge_qp[f"{node.id}#probs"] = QuantParams(
                1.0 / (1 << PROB_FRAC), 0, min(PROB_FRAC + 1, 16), False, True)

    # weights: per-layer parameters plus frozen integer codes
    for node in out.nodes:
        wnames = []
        if node.kind in ("conv2d", "linear"):
            wnames = [node.params["weight"]]
        elif node.kind == "attention":
            wnames = [node.params[p] for p in ("wq", "wk", "wv", "wo")]
        for wname in wnames:
            w = np.asarray(out.tensors[wname].data, dtype=np.float64)
            w2 = w.reshape(w.shape[0], -1)
            if cfg.method == "mse":
                qp = _weight_qp_mse(w2, cfg.w_bits, cfg.per_channel_w)
            else:
                qp = weight_qparams(w2, cfg.w_bits, cfg.per_channel_w,
                                    symmetric=True)
            if cfg.method == "adaround" and node.kind in ("conv2d", "linear"):
                state = adaround_init(w2, qp.scale, cfg.w_bits)
                xs = layer_inputs.get(node.id, [])
                state = adaround_fit(w2, qp.scale, xs, state,
                                     iters=cfg.adaround_iters)
                w_q = adaround_freeze(w2, qp.scale, state).reshape(w.shape)
            else:
                w_q = quantize(w, qp)
            out.param_qp[wname] = qp
            out.tensors[wname + ".q"] = Tensor.from_array(
                w_q, int_dtype(cfg.w_bits, True))

    # layernorm running statistics for the running-stats folding mode
    for node in out.nodes:
        if node.kind == "layernorm" and node.id in ln_stats:
            mus = [m for m, _ in ln_stats[node.id]]
            vs = [v for _, v in ln_stats[node.id]]
            c = out.tensors[node.params["gamma"]].shape[0]
            mean_t = f"{node.id}.running_mean"
            var_t = f"{node.id}.running_var"
            out.tensors[mean_t] = Tensor.from_array(
                np.full(c, float(np.mean(mus)), dtype=np.float32), FLOAT32)
            out.tensors[var_t] = Tensor.from_array(
                np.full(c, float(np.mean(vs)), dtype=np.float32), FLOAT32)
            node.params["mean"] = mean_t
            node.params["var"] = var_t

    return out
