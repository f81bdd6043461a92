import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scalar_quantize
from qlower.errors import QuantError
from qlower.ir import QuantParams, qrange
from qlower.quant import dequantize, fake_quant, quantize


def qp(scale=0.1, zp=0, bits=8, signed=True, symmetric=True):
    return QuantParams(scale, zp, bits, signed, symmetric)


def test_quantize_basic():
    assert quantize(np.array(0.34), qp()) == 3


def test_quantize_clamps_symmetric():
    assert quantize(np.array(20.0), qp()) == 127
    assert quantize(np.array(-20.0), qp()) == -127   # reserved -128


def test_quantize_rejects_bad_scale():
    with pytest.raises(QuantError):
        quantize(np.array(1.0), QuantParams(1.0, 0, 8).__class__(-1.0, 0, 8,
                                                                 True, False))


def test_quantize_matches_scalar_oracle_4bit():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, size=257).astype(np.float32)
    p = qp(scale=0.17, bits=4)
    got = quantize(x, p)
    qmin, qmax = p.qrange()
    want = [scalar_quantize(float(v), 0.17, 0, qmin, qmax) for v in x]
    assert got.tolist() == want


def test_quantize_asymmetric_unsigned_oracle():
    rng = np.random.default_rng(4)
    x = rng.uniform(-2, 6, size=300).astype(np.float32)
    p = QuantParams(8 / 255, 64, 8, signed=False, symmetric=False)
    got = quantize(x, p)
    want = [scalar_quantize(float(v), 8 / 255, 64, 0, 255) for v in x]
    assert got.tolist() == want


def test_dequantize_basic():
    assert dequantize(np.array(3), qp()) == pytest.approx(0.3)


def test_zero_point_maps_to_zero_exactly():
    p = QuantParams(0.031, 17, 8, signed=False, symmetric=False)
    assert dequantize(np.array(17), p) == 0.0


def test_roundtrip_error_within_half_scale():
    rng = np.random.default_rng(5)
    p = qp(scale=0.05)
    lo, hi = p.qrange()
    x = rng.uniform(lo * 0.05, hi * 0.05, size=4096)
    err = np.abs(dequantize(quantize(x, p), p) - x)
    assert err.max() <= 0.05 / 2 * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(scale=st.floats(1e-3, 10.0), bits=st.sampled_from([2, 4, 8, 16]),
       seed=st.integers(0, 10_000))
def test_roundtrip_property(scale, bits, seed):
    rng = np.random.default_rng(seed)
    p = qp(scale=scale, bits=bits)
    lo, hi = p.qrange()
    x = rng.uniform(lo * scale, hi * scale, size=64)
    err = np.abs(dequantize(quantize(x, p), p) - x)
    assert err.max() <= scale / 2 * (1 + 1e-9)


def test_roundtrip_asymmetric_within_half_scale():
    rng = np.random.default_rng(12)
    p = QuantParams(8 / 255, 64, 8, signed=False, symmetric=False)
    x = rng.uniform(-2.0, 6.0, size=4096)    # the covered range
    err = np.abs(dequantize(quantize(x, p), p) - x)
    assert err.max() <= (8 / 255) / 2 * (1 + 1e-12)


def test_quantize_output_always_in_range():
    rng = np.random.default_rng(6)
    for bits in (2, 3, 4, 8, 16):
        for signed in (True, False):
            for symmetric in (True, False):
                z = 0 if symmetric else (5 if not signed else -3)
                p = QuantParams(0.01, z, bits, signed, symmetric)
                x = rng.normal(0, 100, size=512)
                q = quantize(x, p)
                lo, hi = p.qrange()
                assert q.min() >= lo and q.max() <= hi


def test_fake_quant_fixed_point_of_grid():
    p = qp(scale=0.25)
    x = np.arange(-10, 11) * 0.25
    assert np.array_equal(fake_quant(x, p), x)


def test_fake_quant_example():
    assert fake_quant(np.array(0.3), qp(scale=0.25)) == 0.25


def test_fake_quant_composes():
    rng = np.random.default_rng(7)
    x = rng.normal(0, 2, size=333)
    p = QuantParams(0.07, 11, 6, signed=False, symmetric=False)
    assert np.array_equal(fake_quant(x, p), dequantize(quantize(x, p), p))


def test_dual_path_bit_exact():
    # training-path output == dequantized inference-path integers, bit for bit
    rng = np.random.default_rng(8)
    x = rng.normal(0, 1, size=1000)
    for p in (qp(0.013), QuantParams(0.07, 40, 8, False, False),
              qp(0.3, bits=3)):
        fq = fake_quant(x, p)
        dq = dequantize(quantize(x, p), p)
        assert np.array_equal(fq, dq)


def test_per_channel_quantize_broadcast():
    rng = np.random.default_rng(9)
    w = rng.normal(0, 1, size=(4, 3, 3, 3))
    scales = np.array([0.1, 0.2, 0.3, 0.4])
    p = QuantParams(scales, np.zeros(4, dtype=np.int64), 8, True, True)
    got = quantize(w, p)
    for c in range(4):
        single = QuantParams(float(scales[c]), 0, 8, True, True)
        assert np.array_equal(got[c], quantize(w[c], single))


def test_symmetric_range_reserves_lowest_code():
    assert qrange(8, True, symmetric=True) == (-127, 127)
    assert qrange(8, True, symmetric=False) == (-128, 127)
    assert qrange(4, False) == (0, 15)
