import numpy as np
import pytest

from conftest import scalar_conv2d
from qlower.errors import FixedPointOverflowError, FusionError
from qlower.fixtures import make_conv_bn_relu_cnn
from qlower.fuse import (FuseMode, NormParams, assert_integer_only,
                         bn_channelwise, bn_prefuse, build_mulquant,
                         fuse_graph, layernorm_fold)
from qlower.ir import Graph, Node, QuantParams, Tensor
from qlower.quant import QConfig, calibrate_graph


def norm(gamma, beta, mean, var, eps):
    as_arr = lambda v: np.atleast_1d(np.asarray(v, dtype=np.float64))
    return NormParams(as_arr(gamma), as_arr(beta), as_arr(mean), as_arr(var), eps)


def test_prefuse_worked_example():
    w = np.ones((1, 1, 1, 1))
    w_fuse, beta_star = bn_prefuse(w, norm(2.0, 0.5, 1.0, 3.0, 1.0))
    assert w_fuse[0, 0, 0, 0] == pytest.approx(1.0)     # 2*1/sqrt(4)
    assert beta_star[0] == pytest.approx(-0.5)          # 0.5 - 2*1/2


def test_prefuse_identity_norm():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 2, 3, 3))
    w_fuse, beta_star = bn_prefuse(w, norm(np.ones(4), np.zeros(4),
                                           np.zeros(4), np.ones(4), 0.0))
    assert np.allclose(w_fuse, w)
    assert np.allclose(beta_star, 0.0)


def test_prefuse_channel_mismatch():
    with pytest.raises(FusionError):
        bn_prefuse(np.ones((4, 1, 1, 1)), norm([1, 1], [0, 0], [0, 0], [1, 1], 0))


def test_prefuse_matches_unfused_float_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.normal(0, 1, size=(5, 3, 3, 3))
        x = rng.normal(0, 1, size=(2, 3, 6, 6))
        np_ = norm(rng.uniform(0.5, 2, 5), rng.normal(0, 1, 5),
                   rng.normal(0, 1, 5), rng.uniform(0.1, 2, 5), 1e-5)
        y = scalar_conv2d(x, w, None, 1, 1)
        denom = np.sqrt(np_.var + np_.eps).reshape(1, -1, 1, 1)
        ref = (y - np_.mean.reshape(1, -1, 1, 1)) / denom \
            * np_.gamma.reshape(1, -1, 1, 1) + np_.beta.reshape(1, -1, 1, 1)
        w_fuse, beta_star = bn_prefuse(w, np_)
        got = scalar_conv2d(x, w_fuse, beta_star, 1, 1)
        assert np.abs(got - ref).max() <= 1e-5 * max(1.0, np.abs(ref).max())


def test_channelwise_worked_example():
    gs, bs = bn_channelwise(norm(2.0, 0.0, 0.0, 3.0, 1.0))
    assert gs[0] == pytest.approx(1.0)


def test_channelwise_identity():
    gs, bs = bn_channelwise(norm(1.0, 0.0, 0.0, 1.0, 0.0))
    assert gs[0] == 1.0 and bs[0] == 0.0


def test_channelwise_matches_norm_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        np_ = norm(rng.uniform(0.5, 2, 8), rng.normal(0, 1, 8),
                   rng.normal(0, 1, 8), rng.uniform(0.1, 2, 8), 1e-5)
        y = rng.normal(0, 3, size=(4, 8))
        gs, bs = bn_channelwise(np_)
        got = gs * y + bs
        ref = (y - np_.mean) / np.sqrt(np_.var + np_.eps) * np_.gamma + np_.beta
        assert np.abs(got - ref).max() <= 1e-6 * max(1.0, np.abs(ref).max())


def test_negative_variance_rejected():
    with pytest.raises(FusionError):
        norm(1.0, 0.0, 0.0, -1.0, 0.0)


# ---------------------------------------------------------------------------
# mulquant construction
# ---------------------------------------------------------------------------

def out_qp(bits=8, z=0):
    return QuantParams(0.05, z, bits, True, z == 0)


def test_multiplier_encoding_examples():
    mq = build_mulquant(0.05, 1.0, 1.0, None, None, (8, 8), out_qp())
    assert mq.m_code == 13                      # round(0.05 * 256) = 12.8
    mq = build_mulquant(1.0, 1.0, 1.0, None, None, (12, 4), out_qp())
    assert mq.m_code == 16


def test_multiplier_encode_decode_error_bound():
    rng = np.random.default_rng(3)
    for frac in (4, 8, 12):
        ms = rng.uniform(-7, 7, size=200)
        mq = build_mulquant(np.abs(ms) + 1e-6, 1.0, 1.0, np.sign(ms), None,
                            (4, frac), out_qp())
        decoded = np.asarray(mq.m_code) / (1 << frac)
        target = (np.abs(ms) + 1e-6) * np.sign(ms)
        assert np.abs(decoded - target).max() <= 2.0 ** (-frac - 1)


def test_multiplier_overflow_reports_channel():
    with pytest.raises(FixedPointOverflowError, match="channel 1"):
        build_mulquant(np.array([0.5, 99.0, 0.5]), 1.0, 1.0, None, None,
                       (4, 12), out_qp())


def test_bias_container_overflow():
    with pytest.raises(FixedPointOverflowError, match="bias"):
        build_mulquant(1.0, 1.0, 1.0, None, np.array([1e6]), (4, 12), out_qp())


def test_relu_fold_raises_clamp_floor():
    oq = QuantParams(0.05, -20, 8, True, False)
    mq = build_mulquant(0.5, 1.0, 1.0, None, None, (4, 12), oq, relu_next=True)
    assert mq.clamp_lo == -20
    assert not mq.validate()


# ---------------------------------------------------------------------------
# graph lowering
# ---------------------------------------------------------------------------

def _conv_bn_relu_graph(rng):
    g = make_conv_bn_relu_cnn(rng, channels=(6,), with_stubs=False)
    # keep only the conv-bn-relu prefix: conv0, bn0, relu0
    nodes = [n for n in g.nodes if n.id in ("conv0", "bn0", "relu0")]
    tensors = {k: v for k, v in g.tensors.items()
               if k.startswith(("conv0", "bn0"))}
    return Graph(nodes=nodes, inputs=g.inputs, outputs=["r0"], tensors=tensors)


def test_prefuse_structure_scalar_multiplier(cnn_batches):
    rng = np.random.default_rng(4)
    g = _conv_bn_relu_graph(rng)
    ann = calibrate_graph(g, cnn_batches, QConfig(per_channel_w=False))
    fused = fuse_graph(ann, FuseMode(mode="prefuse", int_bits=4, frac_bits=12))
    assert len(fused.nodes) == 2
    kinds = [n.kind for n in fused.nodes]
    assert kinds == ["conv2d", "mulquant"]
    mq = fused.nodes[1]
    assert isinstance(mq.attrs["m_code"], int)          # unified scaling
    assert mq.attrs["relu_folded"] is True
    assert not fused.tensors[fused.nodes[0].params["weight"]].dtype.is_float


def test_channelwise_structure_vector_multiplier(cnn_batches):
    rng = np.random.default_rng(5)
    g = _conv_bn_relu_graph(rng)
    ann = calibrate_graph(g, cnn_batches, QConfig(w_bits=4, a_bits=4))
    fused = fuse_graph(ann, FuseMode(mode="channelwise", int_bits=4,
                                     frac_bits=12))
    mq = fused.nodes[1]
    assert isinstance(mq.attrs["m_code"], list)
    assert len(mq.attrs["m_code"]) == 6                 # per output channel


def test_fused_graph_has_no_float_params(cnn_fused):
    assert_integer_only(cnn_fused)
    for name, t in cnn_fused.tensors.items():
        assert not t.dtype.is_float, name


def test_norm_without_linear_producer_rejected(cnn_batches):
    t = Tensor.from_array(np.ones(3, dtype=np.float32))
    g = Graph(
        nodes=[Node("bn", "batchnorm", ["x"], ["y"], {"eps": 1e-5},
                    {"gamma": "g", "beta": "b", "mean": "m", "var": "v"})],
        inputs=[("x", (1, 3, 4, 4))], outputs=["y"],
        tensors={"g": t, "b": t, "m": t, "v": t})
    g.edge_qp["x"] = QuantParams(0.05, 0, 8, True, True)
    g.edge_qp["y"] = QuantParams(0.05, 0, 8, True, True)
    with pytest.raises(FusionError, match="bn"):
        fuse_graph(g, FuseMode())


def test_sub8bit_channelwise_beats_prefuse_on_gamma_spread():
    # 100x scale spread across channels at 4 bits: folding the norm into
    # the weights must lose strictly more than per-channel rescaling,
    # layer by layer
    rng = np.random.default_rng(6)
    g = make_conv_bn_relu_cnn(rng, channels=(8, 8, 8), gamma_spread=100.0)
    from qlower.quant import quantize, weight_qparams
    from qlower.quant.qops import dequantize
    for i in range(3):
        w = np.asarray(g.tensors[f"conv{i}.w"].data, dtype=np.float64)
        np_ = NormParams(
            np.asarray(g.tensors[f"bn{i}.gamma"].data, dtype=np.float64),
            np.asarray(g.tensors[f"bn{i}.beta"].data, dtype=np.float64),
            np.asarray(g.tensors[f"bn{i}.mean"].data, dtype=np.float64),
            np.asarray(g.tensors[f"bn{i}.var"].data, dtype=np.float64), 1e-5)
        gs, _ = bn_channelwise(np_)
        target = w * gs.reshape(-1, 1, 1, 1)   # effective fused weights

        w_fuse, _ = bn_prefuse(w, np_)
        qp_pre = weight_qparams(w_fuse, 4, per_channel=False)
        rec_pre = dequantize(quantize(w_fuse, qp_pre), qp_pre)
        mse_pre = float(np.mean((rec_pre - target) ** 2))

        qp_cw = weight_qparams(w, 4, per_channel=True)
        rec_cw = dequantize(quantize(w, qp_cw), qp_cw) * gs.reshape(-1, 1, 1, 1)
        mse_cw = float(np.mean((rec_cw - target) ** 2))
        assert mse_cw < mse_pre


def test_layernorm_running_fold_matches_bn_structure():
    rng = np.random.default_rng(7)
    w = Tensor.from_array(rng.normal(0, 0.3, size=(6, 6)).astype(np.float32))
    gamma = Tensor.from_array(rng.uniform(0.9, 1.1, 6).astype(np.float32))
    beta = Tensor.from_array(rng.normal(0, 0.05, 6).astype(np.float32))
    g = Graph(
        nodes=[Node("fc", "linear", ["x"], ["h"], {}, {"weight": "w"}),
               Node("ln", "layernorm", ["h"], ["y"], {"eps": 1e-5},
                    {"gamma": "g", "beta": "b"})],
        inputs=[("x", (1, 6))], outputs=["y"],
        tensors={"w": w, "g": gamma, "b": beta})
    batches = [rng.normal(0, 1, size=(16, 6)) for _ in range(3)]
    ann = calibrate_graph(g, batches, QConfig())
    fused = layernorm_fold(ann, "ln", "running_stats")
    kinds = [n.kind for n in fused.nodes]
    assert kinds == ["linear", "mulquant"]     # same shape as a bn fold
    assert isinstance(fused.nodes[1].attrs["m_code"], list)


def test_layernorm_running_without_stats_errors():
    rng = np.random.default_rng(8)
    w = Tensor.from_array(rng.normal(0, 0.3, size=(6, 6)).astype(np.float32))
    gamma = Tensor.from_array(np.ones(6, dtype=np.float32))
    beta = Tensor.from_array(np.zeros(6, dtype=np.float32))
    g = Graph(
        nodes=[Node("fc", "linear", ["x"], ["h"], {}, {"weight": "w"}),
               Node("ln", "layernorm", ["h"], ["y"], {"eps": 1e-5},
                    {"gamma": "g", "beta": "b"})],
        inputs=[("x", (1, 6))], outputs=["y"],
        tensors={"w": w, "g": gamma, "b": beta})
    g.edge_qp = {e: QuantParams(0.05, 0, 8, True, True) for e in ("x", "h", "y")}
    with pytest.raises(FusionError, match="statistics"):
        layernorm_fold(g, "ln", "running_stats")


def test_missing_annotation_reports_edge():
    rng = np.random.default_rng(9)
    g = _conv_bn_relu_graph(rng)
    with pytest.raises(FusionError, match="annotation"):
        fuse_graph(g, FuseMode())
