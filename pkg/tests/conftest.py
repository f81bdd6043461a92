import math

import numpy as np
import pytest

from qlower.fixtures import calib_batches, make_conv_bn_relu_cnn
from qlower.fuse import FuseMode, fuse_graph
from qlower.quant import QConfig, calibrate_graph


@pytest.fixture(scope="session")
def cnn_graph():
    return make_conv_bn_relu_cnn(np.random.default_rng(0))


@pytest.fixture(scope="session")
def cnn_batches(cnn_graph):
    return calib_batches(np.random.default_rng(1), cnn_graph.inputs[0][1])


@pytest.fixture(scope="session")
def cnn_annotated(cnn_graph, cnn_batches):
    return calibrate_graph(cnn_graph, cnn_batches, QConfig())


@pytest.fixture(scope="session")
def cnn_fused(cnn_annotated):
    return fuse_graph(cnn_annotated, FuseMode(mode="channelwise",
                                              int_bits=4, frac_bits=12))


# ---------------------------------------------------------------------------
# Independent scalar oracles (no vectorized shortcuts)
# ---------------------------------------------------------------------------

def scalar_quantize(x: float, scale: float, zp: int, qmin: int, qmax: int) -> int:
    v = x / scale + zp
    r = math.floor(abs(v) + 0.5)
    r = -r if v < 0 else r
    return max(qmin, min(qmax, r))


def scalar_conv2d(x, w, bias, stride, pad):
    """Pure-loop conv oracle: x (N,C,H,W), w (O,C,kh,kw)."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yi in range(oh):
                for xi in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                sy = yi * stride + ky - pad
                                sx = xi * stride + kx - pad
                                if 0 <= sy < h and 0 <= sx < wd:
                                    acc += float(x[ni, ci, sy, sx]) * \
                                        float(w[oi, ci, ky, kx])
                    out[ni, oi, yi, xi] = acc + (bias[oi] if bias is not None
                                                 else 0.0)
    return out
