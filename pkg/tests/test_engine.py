import numpy as np
import pytest

from conftest import scalar_conv2d
from qlower.engine import (compare_paths, exec_collect, exec_fakequant,
                           exec_float, exec_int, requantize)
from qlower.engine.paths import input_qp
from qlower.errors import IntegerPurityError
from qlower.fixtures import (clustered_inputs, confident_inputs,
                             make_conv_bn_relu_cnn)
from qlower.fuse import FuseMode, fuse_graph
from qlower.ir import Graph, Node, QuantParams, Tensor, int_dtype
from qlower.quant import QConfig, calibrate_graph, quantize
from qlower.rescale import MulQuantParams, apply_int, build_mulquant


def test_exec_float_identity():
    g = Graph(nodes=[Node("f", "flatten", ["x"], ["y"], {}, {})],
              inputs=[("x", (1, 4))], outputs=["y"], tensors={})
    x = np.arange(4.0).reshape(1, 4)
    assert np.array_equal(exec_float(g, x), x)


def test_exec_float_1x1_conv():
    w = Tensor.from_array(np.full((1, 1, 1, 1), 2.0, dtype=np.float32))
    g = Graph(nodes=[Node("c", "conv2d", ["x"], ["y"],
                          {"stride": 1, "padding": 0}, {"weight": "w"})],
              inputs=[("x", (1, 1, 1, 1))], outputs=["y"], tensors={"w": w})
    y = exec_float(g, np.full((1, 1, 1, 1), 3.0))
    assert y[0, 0, 0, 0] == 6.0


def test_exec_float_matches_scalar_loop_oracle(cnn_graph):
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, size=(2,) + cnn_graph.inputs[0][1][1:])
    got = exec_float(cnn_graph, x)

    # hand-rolled forward: conv loops + explicit bn/relu/linear
    cur = x.astype(np.float64)
    for i in range(3):
        w = np.asarray(cnn_graph.tensors[f"conv{i}.w"].data, dtype=np.float64)
        b = np.asarray(cnn_graph.tensors[f"conv{i}.b"].data, dtype=np.float64)
        cur = scalar_conv2d(cur, w, b, 1, 1)
        gm = np.asarray(cnn_graph.tensors[f"bn{i}.gamma"].data, dtype=np.float64)
        bt = np.asarray(cnn_graph.tensors[f"bn{i}.beta"].data, dtype=np.float64)
        mu = np.asarray(cnn_graph.tensors[f"bn{i}.mean"].data, dtype=np.float64)
        vr = np.asarray(cnn_graph.tensors[f"bn{i}.var"].data, dtype=np.float64)
        cur = (cur - mu.reshape(1, -1, 1, 1)) / \
            np.sqrt(vr.reshape(1, -1, 1, 1) + 1e-5) * \
            gm.reshape(1, -1, 1, 1) + bt.reshape(1, -1, 1, 1)
        cur = np.maximum(cur, 0.0)
    cur = cur.reshape(cur.shape[0], -1)
    wl = np.asarray(cnn_graph.tensors["fc.w"].data, dtype=np.float64)
    bl = np.asarray(cnn_graph.tensors["fc.b"].data, dtype=np.float64)
    want = cur @ wl.T + bl
    assert np.abs(got - want).max() <= 1e-5 * max(1.0, np.abs(want).max())


def test_fakequant_with_tiny_scale_approaches_float(cnn_graph):
    # 16-bit grid covering the data: fake-quant converges to the float path
    rng = np.random.default_rng(1)
    g = cnn_graph.copy()
    scale = 2e-4
    fine = QuantParams(scale, 0, 16, True, True)
    from qlower.quant.calibrate import _edges_to_annotate
    for e in _edges_to_annotate(g):
        g.edge_qp[e] = fine
    x = rng.normal(0, 0.5, size=(2,) + cnn_graph.inputs[0][1][1:])
    a = exec_fakequant(g, x)
    b = exec_float(cnn_graph, x)
    assert np.abs(a - b).max() <= scale * len(g.nodes)


def test_fakequant_single_layer_hand_computation():
    w = Tensor.from_array(np.array([[0.52]], dtype=np.float32))
    g = Graph(nodes=[Node("l", "linear", ["x"], ["y"], {}, {"weight": "w"})],
              inputs=[("x", (1, 1))], outputs=["y"], tensors={"w": w},
              param_qp={"w": QuantParams(0.1, 0, 8, True, True)},
              edge_qp={"x": QuantParams(0.2, 0, 8, True, True)})
    # W_DQ = round(0.52/0.1)*0.1 = 0.5, X_DQ = round(1.1/0.2)*0.2 = 1.2
    y = exec_fakequant(g, np.array([[1.1]]))
    assert y[0, 0] == pytest.approx(0.5 * 1.2)


def test_fakequant_argmax_agreement(cnn_graph, cnn_annotated):
    xs = confident_inputs(np.random.default_rng(2), cnn_graph, 1000)
    fl = exec_float(cnn_graph, xs)
    fq = exec_fakequant(cnn_annotated, xs)
    agree = (fl.argmax(1) == fq.argmax(1)).mean()
    assert agree >= 0.99


def test_exec_int_trivial_conv():
    w = Tensor.from_array(np.full((1, 1, 1, 1), 2), int_dtype(8, True))
    oq = QuantParams(1.0, 0, 8, True, True)
    mq = build_mulquant(1.0, 1.0, 1.0, None, None, (12, 4), oq)
    g = Graph(
        nodes=[Node("c", "conv2d", ["x"], ["a"],
                    {"stride": 1, "padding": 0, "in_zp": 0}, {"weight": "w"}),
               Node("c.rq", "mulquant", ["a"], ["y"], mq.to_attrs(), {})],
        inputs=[("x", (1, 1, 1, 1))], outputs=["y"], tensors={"w": w},
        param_qp={"w": QuantParams(1.0, 0, 8, True, True)},
        edge_qp={"x": oq, "y": oq})
    y = exec_int(g, np.full((1, 1, 1, 1), 3, dtype=np.int64))
    assert y[0, 0, 0, 0] == 6


def test_requantize_worked_example():
    oq = QuantParams(1.0, 0, 16, True, False)
    mq = MulQuantParams(m_code=3, b_code=0, int_bits=4, frac_bits=8,
                        out_qp=oq, clamp_lo=-(1 << 15), clamp_hi=(1 << 15) - 1)
    assert requantize(1000, mq) == 12     # 1000 * 3/256 = 11.72 -> 12


def test_requantize_zero_maps_to_zero_point():
    for z in (0, 7):
        oq = QuantParams(0.5, z, 8, True, z == 0)
        mq = build_mulquant(0.5, 1.0, 0.5, None, None, (4, 12), oq)
        assert requantize(0, mq) == z


def test_requantize_odd_symmetry():
    oq = QuantParams(1.0, 0, 16, True, False)
    mq = MulQuantParams(m_code=7, b_code=0, int_bits=8, frac_bits=6,
                        out_qp=oq, clamp_lo=-(1 << 15), clamp_hi=(1 << 15) - 1)
    rng = np.random.default_rng(3)
    for acc in rng.integers(-100_000, 100_000, size=200):
        assert requantize(int(-acc), mq) == -requantize(int(acc), mq)


def test_requantize_against_real_arithmetic_oracle():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10_000):
        acc = int(rng.integers(-(1 << 20), 1 << 20))
        m_code = int(rng.integers(-(1 << 10), 1 << 10))
        b_code = int(rng.integers(-(1 << 16), 1 << 16))
        frac = int(rng.integers(2, 14))
        oq = QuantParams(1.0, 0, 16, True, False)
        lo, hi = -(1 << 15), (1 << 15) - 1
        mq = MulQuantParams(m_code=m_code, b_code=b_code, int_bits=12,
                            frac_bits=frac, out_qp=oq, clamp_lo=lo, clamp_hi=hi)
        got = requantize(acc, mq)
        real = (acc * m_code + b_code) / (1 << frac)
        worst = max(worst, abs(got - np.clip(real, lo, hi)))
    assert worst <= 0.5 + 1e-9


def test_per_layer_agreement_within_1_lsb(cnn_graph, cnn_annotated, cnn_fused):
    xs = clustered_inputs(np.random.default_rng(5), cnn_graph.inputs[0][1], 200)
    report = compare_paths(cnn_graph, cnn_fused, [xs],
                           g_calibrated=cnn_annotated)
    assert report.max_lsb <= 1
    assert report.argmax_agreement >= 0.995


def test_int_path_rejects_float_graph(cnn_annotated):
    with pytest.raises(IntegerPurityError):
        exec_int(cnn_annotated, np.zeros((1, 3, 8, 8), dtype=np.int64))


def test_int_path_bit_exact_across_runs(cnn_fused):
    rng = np.random.default_rng(6)
    x = rng.normal(0, 1, size=(8, 3, 8, 8))
    xq = quantize(x, input_qp(cnn_fused))
    a = exec_int(cnn_fused, xq)
    b = exec_int(cnn_fused, xq)
    assert np.array_equal(a, b)


def test_compare_paths_identical_graphs_zero_diff(cnn_fused):
    rng = np.random.default_rng(7)
    x = rng.normal(0, 1, size=(4, 3, 8, 8))
    rep = compare_paths(None, cnn_fused, [x])
    assert all(row["max_lsb"] <= 1 for row in rep.layers)
    rep2 = compare_paths(None, cnn_fused, [x])
    assert rep.to_json()["layers"] == rep2.to_json()["layers"]


def test_accumulator_overflow_detected():
    w = Tensor.from_array(np.full((1, 1, 1, 1), 100), int_dtype(8, True))
    oq = QuantParams(1.0, 0, 8, True, True)
    mq = build_mulquant(1.0, 1.0, 1.0, None, None, (12, 4), oq)
    attrs = mq.to_attrs()
    attrs["m_code"] = 1 << 11
    g = Graph(
        nodes=[Node("c", "conv2d", ["x"], ["a"],
                    {"stride": 1, "padding": 0, "in_zp": 0}, {"weight": "w"}),
               Node("c.rq", "mulquant", ["a"], ["y"], attrs, {})],
        inputs=[("x", (1, 1, 1, 1))], outputs=["y"], tensors={"w": w},
        param_qp={"w": oq}, edge_qp={"x": oq, "y": oq})
    from qlower.errors import AccumulatorOverflowError
    with pytest.raises(AccumulatorOverflowError):
        exec_int(g, np.full((1, 1, 1, 1), 1 << 53, dtype=np.int64),
                 assert_int_only=False)


def test_avgpool_and_maxpool_paths():
    rng = np.random.default_rng(8)
    w = Tensor.from_array(
        rng.normal(0, 0.3, size=(4, 3, 3, 3)).astype(np.float32))
    g = Graph(
        nodes=[Node("c", "conv2d", ["x"], ["c1"],
                    {"stride": 1, "padding": 1}, {"weight": "w"}),
               Node("r", "relu", ["c1"], ["r1"], {}, {}),
               Node("ap", "avgpool", ["r1"], ["p1"],
                    {"kernel": 2, "stride": 2}, {}),
               Node("mp", "maxpool", ["p1"], ["p2"],
                    {"kernel": 2, "stride": 2}, {}),
               Node("f", "flatten", ["p2"], ["y"], {}, {})],
        inputs=[("x", (1, 3, 8, 8))], outputs=["y"], tensors={"w": w})
    batches = [rng.normal(0, 1, size=(16, 3, 8, 8)) for _ in range(3)]
    ann = calibrate_graph(g, batches, QConfig())
    fused = fuse_graph(ann, FuseMode(mode="channelwise", int_bits=4,
                                     frac_bits=12))
    x = rng.normal(0, 1, size=(32, 3, 8, 8))
    rep = compare_paths(g, fused, [x], g_calibrated=ann)
    assert report_max(rep) <= 1


def report_max(rep):
    return max((r["max_lsb"] for r in rep.layers), default=0)


def test_grouped_conv_matches_per_group():
    rng = np.random.default_rng(10)
    from qlower.engine import conv2d
    x = rng.normal(0, 1, size=(2, 4, 6, 6))
    w = rng.normal(0, 1, size=(6, 2, 3, 3))      # groups=2, 2 in-ch each
    got = conv2d(x, w, None, 1, 1, groups=2)
    a = conv2d(x[:, :2], w[:3], None, 1, 1)
    b = conv2d(x[:, 2:], w[3:], None, 1, 1)
    assert np.allclose(got, np.concatenate([a, b], axis=1))


def test_residual_add_requantizes_inputs():
    rng = np.random.default_rng(9)
    w1 = Tensor.from_array(rng.normal(0, 0.3, (8, 8)).astype(np.float32))
    g = Graph(
        nodes=[Node("fc1", "linear", ["x"], ["h"], {}, {"weight": "w1"}),
               Node("res", "add", ["x", "h"], ["s"], {}, {}),
               Node("r", "relu", ["s"], ["y"], {}, {})],
        inputs=[("x", (1, 8))], outputs=["y"], tensors={"w1": w1})
    batches = [rng.normal(0, 1, size=(16, 8)) for _ in range(3)]
    ann = calibrate_graph(g, batches, QConfig())
    fused = fuse_graph(ann, FuseMode())
    kinds = [n.kind for n in fused.nodes]
    assert kinds.count("mulquant") >= 2      # both add inputs rescaled
    add_node = next(n for n in fused.nodes if n.kind == "add")
    assert add_node.attrs["clamp_lo"] >= add_node.attrs["out_zp"]  # relu folded
    x = rng.normal(0, 1, size=(64, 8))
    rep = compare_paths(g, fused, [x], g_calibrated=ann)
    assert report_max(rep) <= 1
