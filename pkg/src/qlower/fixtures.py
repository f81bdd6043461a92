"""Programmatic fixture models for tests, demos, and acceptance runs.

Random nets get their norm running statistics set from actual activation
statistics, so they behave like trained models under calibration. Input
generators draw clustered samples (class prototypes plus noise), the
desk-scale stand-in for labeled image data.
"""

from __future__ import annotations

import sys

import numpy as np

from .engine.paths import exec_collect
from .ir import Graph, Node, Tensor, infer_shapes


def _t(arr: np.ndarray) -> Tensor:
    return Tensor.from_array(np.asarray(arr, dtype=np.float32))


def make_identity_graph(shape=(1, 4)) -> Graph:
    n = Node("id0", "flatten", ["x"], ["y"], {}, {})
    return infer_shapes(Graph(nodes=[n], inputs=[("x", tuple(shape))],
                              outputs=["y"], tensors={}))


def make_conv_bn_relu_cnn(rng: np.random.Generator,
                          in_shape=(1, 3, 8, 8),
                          channels=(8, 8, 8),
                          classes: int = 10,
                          with_stubs: bool = True,
                          gamma_spread: float | None = None,
                          bias: bool = True) -> Graph:
    """conv-bn-relu stack + flatten + linear classifier head.

    ``gamma_spread`` > 1 spreads the norm scale across channels by that
    factor (log-uniform), the stress case for weight-side norm folding.
    """
    nodes, tensors = [], {}
    c_in = in_shape[1]
    edge = "x"
    if with_stubs:
        nodes.append(Node("qin", "quantstub", ["x"], ["x.q"], {}, {}))
        edge = "x.q"
    h = in_shape[2]
    for i, c_out in enumerate(channels):
        w = rng.normal(0.0, 1.0 / np.sqrt(c_in * 9), size=(c_out, c_in, 3, 3))
        tensors[f"conv{i}.w"] = _t(w)
        params = {"weight": f"conv{i}.w"}
        if bias:
            tensors[f"conv{i}.b"] = _t(rng.normal(0, 0.05, size=c_out))
            params["bias"] = f"conv{i}.b"
        nodes.append(Node(f"conv{i}", "conv2d", [edge], [f"c{i}"],
                          {"stride": 1, "padding": 1}, params))
        if gamma_spread is not None:
            half = c_out // 2
            lo, hi = 1.0 / np.sqrt(gamma_spread), np.sqrt(gamma_spread)
            gamma = np.exp(rng.uniform(np.log(lo), np.log(hi), size=c_out))
            gamma[0], gamma[-1] = lo, hi   # pin the full spread
        else:
            gamma = rng.uniform(0.8, 1.2, size=c_out)
        tensors[f"bn{i}.gamma"] = _t(gamma)
        tensors[f"bn{i}.beta"] = _t(rng.normal(0, 0.1, size=c_out))
        tensors[f"bn{i}.mean"] = _t(np.zeros(c_out))
        tensors[f"bn{i}.var"] = _t(np.ones(c_out))
        nodes.append(Node(f"bn{i}", "batchnorm", [f"c{i}"], [f"b{i}"],
                          {"eps": 1e-5},
                          {"gamma": f"bn{i}.gamma", "beta": f"bn{i}.beta",
                           "mean": f"bn{i}.mean", "var": f"bn{i}.var"}))
        nodes.append(Node(f"relu{i}", "relu", [f"b{i}"], [f"r{i}"], {}, {}))
        edge = f"r{i}"
        c_in = c_out
    nodes.append(Node("flat", "flatten", [edge], ["f"], {}, {}))
    feat = c_in * h * h
    wl = rng.normal(0.0, 1.5 / np.sqrt(feat), size=(classes, feat))
    tensors["fc.w"] = _t(wl)
    params = {"weight": "fc.w"}
    if bias:
        tensors["fc.b"] = _t(rng.normal(0, 0.1, size=classes))
        params["bias"] = "fc.b"
    out_edge = "logits"
    nodes.append(Node("fc", "linear", ["f"], [out_edge], {}, params))
    if with_stubs:
        nodes.append(Node("dqout", "dequantstub", [out_edge], ["y"], {}, {}))
        out_edge = "y"
    g = Graph(nodes=nodes, inputs=[("x", tuple(in_shape))], outputs=[out_edge],
              tensors=tensors)
    g = infer_shapes(g)
    _set_bn_running_stats(g, rng)
    return g


def _set_bn_running_stats(g: Graph, rng: np.random.Generator) -> None:
    """Point norm running stats at the actual pre-norm activation moments."""
    shape = g.inputs[0][1]
    xs = rng.normal(0, 1, size=(16,) + tuple(shape[1:]))
    taps = exec_collect(g, xs, "float")
    for node in g.nodes:
        if node.kind != "batchnorm":
            continue
        y = np.asarray(taps[node.inputs[0]], dtype=np.float64)
        mean = y.mean(axis=(0, 2, 3)) if y.ndim == 4 else y.mean(axis=0)
        var = y.var(axis=(0, 2, 3)) if y.ndim == 4 else y.var(axis=0)
        g.tensors[node.params["mean"]] = _t(mean)
        g.tensors[node.params["var"]] = _t(np.maximum(var, 1e-4))


def make_attention_block(rng: np.random.Generator, tokens: int = 8,
                         embed: int = 32, heads: int = 2,
                         with_stubs: bool = True) -> Graph:
    """quantstub -> multi-head attention -> dequantstub."""
    nodes, tensors = [], {}
    edge = "x"
    if with_stubs:
        nodes.append(Node("qin", "quantstub", ["x"], ["x.q"], {}, {}))
        edge = "x.q"
    params = {}
    for p in ("wq", "wk", "wv", "wo"):
        tensors[f"attn.{p}"] = _t(rng.normal(0, 1.0 / np.sqrt(embed),
                                             size=(embed, embed)))
        params[p] = f"attn.{p}"
    for p in ("bq", "bk", "bv", "bo"):
        tensors[f"attn.{p}"] = _t(rng.normal(0, 0.02, size=embed))
        params[p] = f"attn.{p}"
    out_edge = "attn_out"
    nodes.append(Node("attn", "attention", [edge], [out_edge],
                      {"heads": heads}, params))
    if with_stubs:
        nodes.append(Node("dqout", "dequantstub", [out_edge], ["y"], {}, {}))
        out_edge = "y"
    return infer_shapes(Graph(nodes=nodes, inputs=[("x", (1, tokens, embed))],
                              outputs=[out_edge], tensors=tensors))


def make_vit_block(rng: np.random.Generator, tokens: int = 8, embed: int = 32,
                   heads: int = 2, mlp_ratio: int = 2) -> Graph:
    """Pre-norm transformer block: ln -> attention -> +x -> ln -> mlp -> +."""
    nodes, tensors = [], {}
    nodes.append(Node("qin", "quantstub", ["x"], ["x.q"], {}, {}))

    tensors["ln1.gamma"] = _t(rng.uniform(0.9, 1.1, size=embed))
    tensors["ln1.beta"] = _t(rng.normal(0, 0.02, size=embed))
    nodes.append(Node("ln1", "layernorm", ["x.q"], ["n1"], {"eps": 1e-5},
                      {"gamma": "ln1.gamma", "beta": "ln1.beta"}))

    params = {}
    for p in ("wq", "wk", "wv", "wo"):
        tensors[f"attn.{p}"] = _t(rng.normal(0, 1.0 / np.sqrt(embed),
                                             size=(embed, embed)))
        params[p] = f"attn.{p}"
    for p in ("bq", "bk", "bv", "bo"):
        tensors[f"attn.{p}"] = _t(rng.normal(0, 0.02, size=embed))
        params[p] = f"attn.{p}"
    nodes.append(Node("attn", "attention", ["n1"], ["a1"], {"heads": heads},
                      params))
    nodes.append(Node("res1", "add", ["x.q", "a1"], ["s1"], {}, {}))

    tensors["ln2.gamma"] = _t(rng.uniform(0.9, 1.1, size=embed))
    tensors["ln2.beta"] = _t(rng.normal(0, 0.02, size=embed))
    nodes.append(Node("ln2", "layernorm", ["s1"], ["n2"], {"eps": 1e-5},
                      {"gamma": "ln2.gamma", "beta": "ln2.beta"}))

    hidden = embed * mlp_ratio
    tensors["mlp.w1"] = _t(rng.normal(0, 1.0 / np.sqrt(embed),
                                      size=(hidden, embed)))
    tensors["mlp.b1"] = _t(rng.normal(0, 0.02, size=hidden))
    nodes.append(Node("mlp1", "linear", ["n2"], ["m1"],
                      {}, {"weight": "mlp.w1", "bias": "mlp.b1"}))
    nodes.append(Node("act", "gelu", ["m1"], ["m2"], {}, {}))
    tensors["mlp.w2"] = _t(rng.normal(0, 1.0 / np.sqrt(hidden),
                                      size=(embed, hidden)))
    tensors["mlp.b2"] = _t(rng.normal(0, 0.02, size=embed))
    nodes.append(Node("mlp2", "linear", ["m2"], ["m3"],
                      {}, {"weight": "mlp.w2", "bias": "mlp.b2"}))
    nodes.append(Node("res2", "add", ["s1", "m3"], ["s2"], {}, {}))
    nodes.append(Node("dqout", "dequantstub", ["s2"], ["y"], {}, {}))
    return infer_shapes(Graph(nodes=nodes, inputs=[("x", (1, tokens, embed))],
                              outputs=["y"], tensors=tensors))


def clustered_inputs(rng: np.random.Generator, shape, n: int,
                     prototypes: int = 10, noise: float = 0.15) -> np.ndarray:
    """(n, *shape[1:]) samples around ``prototypes`` random class centers."""
    inner = tuple(shape[1:])
    protos = rng.normal(0, 1, size=(prototypes,) + inner)
    idx = rng.integers(0, prototypes, size=n)
    return protos[idx] + noise * rng.normal(0, 1, size=(n,) + inner)


def confident_inputs(rng: np.random.Generator, g: Graph, n: int,
                     prototypes: int = 10, noise: float = 0.08,
                     min_gap: float = 0.6) -> np.ndarray:
    """Clustered inputs whose class prototypes the float model separates
    decisively (top-2 logit gap >= min_gap * logit std).

    The desk-scale analogue of evaluating a trained classifier on its own
    data distribution: predictions are confident, so argmax comparisons
    measure quantization fidelity rather than coin flips at ties.
    """
    from .engine.paths import exec_float

    inner = tuple(g.inputs[0][1][1:])
    protos = rng.normal(0, 1, size=(prototypes,) + inner)
    logits = exec_float(g, protos)
    sigma = float(logits.std())
    for _ in range(200):
        top2 = np.sort(logits, axis=1)[:, -2:]
        weak = np.where(top2[:, 1] - top2[:, 0] < min_gap * sigma)[0]
        if weak.size == 0:
            break
        protos[weak] = rng.normal(0, 1, size=(weak.size,) + inner)
        logits = exec_float(g, protos)
    idx = rng.integers(0, prototypes, size=n)
    return protos[idx] + noise * rng.normal(0, 1, size=(n,) + inner)


def calib_batches(rng: np.random.Generator, shape, n_batches: int = 4,
                  batch: int = 16, prototypes: int = 10) -> list[np.ndarray]:
    return [clustered_inputs(rng, shape, batch, prototypes)
            for _ in range(n_batches)]


def write_demo(out_dir: str) -> None:
    """Materialize a demo model + calibration data + pipeline config."""
    import json
    from pathlib import Path

    from .dataio import save_batches
    from .ir import save_model

    out = Path(out_dir)
    rng = np.random.default_rng(0)
    g = make_conv_bn_relu_cnn(rng)
    save_model(g, out / "model")
    save_batches(out / "calib", calib_batches(rng, g.inputs[0][1]))
    config = {
        "model": str(out / "model"),
        "calib_data": str(out / "calib"),
        "output": str(out / "build"),
        "seed": 0,
        "quant": {"w_bits": 8, "a_bits": 8, "method": "minmax",
                  "per_channel_w": True},
        "fuse": {"mode": "channelwise", "int_bits": 4, "frac_bits": 12},
        "export": {"format": "hex", "word_bits": 8, "words_per_line": 1},
        "verify": {"max_lsb": 1, "min_agreement": 0.995, "samples": 64},
    }
    (out / "demo.json").write_text(json.dumps(config, indent=2) + "\n",
                                   encoding="utf-8")
    print(f"demo written to {out}: model/, calib/, demo.json")


if __name__ == "__main__":
    write_demo(sys.argv[1] if len(sys.argv) > 1 else "demo")
