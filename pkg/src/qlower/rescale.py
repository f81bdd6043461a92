"""The fused fixed-point rescaler: integer multiplier/bias/clamp per layer.

Carries codes for out = clamp(round((acc * m + b) / 2^frac), lo, hi) where
``acc`` is a convolution/matmul accumulator (or a plain integer tensor for
residual/pool requantization). The output zero point is folded into the
bias code so there is a single rounding site.

``apply_int`` is the hardware semantic (pure integer); ``apply_float`` is
the training-path mirror operating on real-valued accumulators, sharing
the same decoded codes so the two paths can disagree only at rounding
boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AccumulatorOverflowError, FixedPointOverflowError
from .ir import FixedPointCode, QuantParams

BIAS_CONTAINER_BITS = 32
_ACC_LIMIT = 1 << 62


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def rhaz_shift(v: np.ndarray, shift: int) -> np.ndarray:
    """Round-half-away-from-zero right shift (int64)."""
    v = np.asarray(v, dtype=np.int64)
    if shift <= 0:
        return v << (-shift)
    half = np.int64(1) << (shift - 1)
    mag = (np.abs(v) + half) >> shift
    return np.where(v < 0, -mag, mag)


@dataclass
class MulQuantParams:
    m_code: np.ndarray | int
    b_code: np.ndarray | int
    int_bits: int
    frac_bits: int
    out_qp: QuantParams
    clamp_lo: int
    clamp_hi: int
    relu_folded: bool = False
    in_zp: int = 0
    pool_kernel: int = 1
    acc_scale: np.ndarray | float = 1.0   # real value of one accumulator unit

    def multiplier(self):
        """The multiplier as FixedPointCode(s)."""
        if np.ndim(self.m_code) == 0:
            return FixedPointCode(int(self.m_code), self.int_bits, self.frac_bits)
        return [FixedPointCode(int(c), self.int_bits, self.frac_bits)
                for c in np.asarray(self.m_code)]

    def bias(self):
        """Bias codes in the wide accumulator-aligned container."""
        ib = BIAS_CONTAINER_BITS - self.frac_bits
        if np.ndim(self.b_code) == 0:
            return FixedPointCode(int(self.b_code), ib, self.frac_bits)
        return [FixedPointCode(int(c), ib, self.frac_bits)
                for c in np.asarray(self.b_code)]

    def validate(self) -> list[str]:
        problems = []
        lo, hi = self.out_qp.qrange()
        if not lo <= self.clamp_lo <= self.clamp_hi <= hi:
            problems.append(f"clamp [{self.clamp_lo},{self.clamp_hi}] outside "
                            f"output range [{lo},{hi}]")
        z = int(self.out_qp.zp_array()[0])
        if self.relu_folded and self.clamp_lo < z:
            problems.append("relu folded but clamp.lo below the output zero point")
        try:
            self.multiplier()
            self.bias()
        except ValueError as exc:
            problems.append(str(exc))
        return problems

    def to_attrs(self) -> dict:
        def ints(v):
            return [int(x) for x in np.asarray(v)] if np.ndim(v) else int(v)

        def floats(v):
            return [float(x) for x in np.asarray(v)] if np.ndim(v) else float(v)

        return {
            "m_code": ints(self.m_code),
            "b_code": ints(self.b_code),
            "int_bits": self.int_bits,
            "frac_bits": self.frac_bits,
            "clamp_lo": self.clamp_lo,
            "clamp_hi": self.clamp_hi,
            "relu_folded": self.relu_folded,
            "in_zp": self.in_zp,
            "pool_kernel": self.pool_kernel,
            "acc_scale": floats(self.acc_scale),
            "out_scale": floats(np.asarray(self.out_qp.scale)),
            "out_zp": int(self.out_qp.zp_array()[0]),
            "out_bits": self.out_qp.bits,
            "out_signed": self.out_qp.signed,
            "out_symmetric": self.out_qp.symmetric,
        }

    @classmethod
    def from_attrs(cls, attrs: dict) -> "MulQuantParams":
        def arr(v, dt):
            return np.asarray(v, dtype=dt) if isinstance(v, list) else v
        # out_scale/acc_scale are training-path mirrors; integer-only
        # bundles omit them and the integer path never reads them
        out_qp = QuantParams(
            scale=arr(attrs.get("out_scale", 1.0), np.float64),
            zero_point=int(attrs["out_zp"]),
            bits=int(attrs.get("out_bits", 8)),
            signed=bool(attrs.get("out_signed", True)),
            symmetric=bool(attrs.get("out_symmetric", False)),
        )
        return cls(
            m_code=arr(attrs["m_code"], np.int64),
            b_code=arr(attrs["b_code"], np.int64),
            int_bits=int(attrs["int_bits"]),
            frac_bits=int(attrs["frac_bits"]),
            out_qp=out_qp,
            clamp_lo=int(attrs["clamp_lo"]),
            clamp_hi=int(attrs["clamp_hi"]),
            relu_folded=bool(attrs.get("relu_folded", False)),
            in_zp=int(attrs.get("in_zp", 0)),
            pool_kernel=int(attrs.get("pool_kernel", 1)),
            acc_scale=arr(attrs.get("acc_scale", 1.0), np.float64),
        )


def encode_multiplier(m: float, int_bits: int, frac_bits: int,
                      channel: int | None = None) -> int:
    code = int(round_half_away(m * (1 << frac_bits)))
    bound = 1 << (int_bits + frac_bits - 1)
    if not -bound <= code < bound:
        where = f" (channel {channel})" if channel is not None else ""
        raise FixedPointOverflowError(
            f"multiplier {m}{where} overflows fixed point ({int_bits},{frac_bits})")
    return code


def build_mulquant(s_w, s_x: float, s_x_next: float, gamma_star, beta_star,
                   fp_spec: tuple[int, int], out_qp: QuantParams,
                   relu_next: bool = False, in_zp: int = 0,
                   pool_kernel: int = 1) -> MulQuantParams:
    """Fuse quantizer scales and norm scale/bias into integer codes.

    multiplier m[c] = gamma*[c] * s_w[c] * s_x / s_x_next, bias
    b[c] = beta*[c] / s_x_next; the output zero point folds into the bias
    code. Fixed-point overflow is a hard error naming the channel.
    """
    int_bits, frac_bits = fp_spec
    s_w_arr = np.atleast_1d(np.asarray(s_w, dtype=np.float64))
    if gamma_star is None:
        gs = np.ones_like(s_w_arr)
    else:
        gs = np.atleast_1d(np.asarray(gamma_star, dtype=np.float64))
        if s_w_arr.size == 1 and gs.size > 1:
            s_w_arr = np.broadcast_to(s_w_arr, gs.shape)
        elif gs.size == 1 and s_w_arr.size > 1:
            gs = np.broadcast_to(gs, s_w_arr.shape)
    m = gs * s_w_arr * float(s_x) / float(s_x_next)
    codes = np.asarray(
        [encode_multiplier(float(v), int_bits, frac_bits,
                           c if m.size > 1 else None)
         for c, v in enumerate(m)], dtype=np.int64)

    z_out = int(out_qp.zp_array()[0])
    # the multiplier may stay unified while the bias is per-channel
    if beta_star is None:
        bs = np.zeros(1, dtype=np.float64)
    else:
        bs = np.atleast_1d(np.asarray(beta_star, dtype=np.float64))
    b_codes = round_half_away(bs / float(s_x_next) * (1 << frac_bits)).astype(np.int64) \
        + (np.int64(z_out) << frac_bits)
    bound = 1 << (BIAS_CONTAINER_BITS - 1)
    bad = np.where((b_codes < -bound) | (b_codes >= bound))[0]
    if bad.size:
        raise FixedPointOverflowError(
            f"bias code overflows {BIAS_CONTAINER_BITS}-bit container "
            f"(channel {int(bad[0])}, code {int(b_codes[bad[0]])})")

    lo, hi = out_qp.qrange()
    if relu_next:
        lo = max(lo, z_out)
    scalar = m.size == 1
    return MulQuantParams(
        m_code=int(codes[0]) if scalar else codes,
        b_code=int(b_codes[0]) if b_codes.size == 1 else b_codes,
        int_bits=int_bits,
        frac_bits=frac_bits,
        out_qp=out_qp,
        clamp_lo=int(lo),
        clamp_hi=int(hi),
        relu_folded=relu_next,
        in_zp=in_zp,
        pool_kernel=pool_kernel,
        acc_scale=float(s_w_arr.ravel()[0] * s_x) if scalar
        else s_w_arr * float(s_x),
    )


def _axis_shape(vec, ndim: int, axis: int):
    v = np.asarray(vec)
    if v.ndim == 0:
        return v
    shape = [1] * ndim
    shape[axis] = v.size
    return v.reshape(shape)


def apply_int(acc: np.ndarray, mq: MulQuantParams, axis: int = -1,
              node_id: str = "") -> np.ndarray:
    """Integer requantization of an accumulator tensor."""
    acc = np.asarray(acc, dtype=np.int64)
    eff = acc - mq.in_zp * mq.pool_kernel
    m = _axis_shape(np.asarray(mq.m_code, dtype=np.int64), acc.ndim, axis)
    b = _axis_shape(np.asarray(mq.b_code, dtype=np.int64), acc.ndim, axis)
    if eff.size:
        # bound-check with exact ints before the multiply can wrap
        worst = int(np.abs(eff).max()) * max(int(np.abs(m).max()), 1) \
            + int(np.abs(b).max())
        if worst >= _ACC_LIMIT:
            raise AccumulatorOverflowError(
                f"rescale overflow at node {node_id!r} (worst case {worst})")
    out = rhaz_shift(eff * m + b, mq.frac_bits)
    return np.clip(out, mq.clamp_lo, mq.clamp_hi)


def apply_float(y: np.ndarray, mq: MulQuantParams, axis: int = -1) -> np.ndarray:
    """Training-path mirror on real-valued accumulators; returns dequantized
    values on the output grid."""
    acc = np.asarray(y, dtype=np.float64) / _axis_shape(mq.acc_scale, np.ndim(y), axis)
    m = _axis_shape(np.asarray(mq.m_code, dtype=np.float64), np.ndim(y), axis)
    b = _axis_shape(np.asarray(mq.b_code, dtype=np.float64), np.ndim(y), axis)
    q = round_half_away((acc * m + b) / (1 << mq.frac_bits))
    q = np.clip(q, mq.clamp_lo, mq.clamp_hi)
    s = float(mq.out_qp.scale_array()[0])
    z = int(mq.out_qp.zp_array()[0])
    return (q - z) * s


def requantize(acc: int, mq: MulQuantParams, channel: int | None = None) -> int:
    """Scalar requantization: clamp(round((acc*m + b) / 2^frac), lo, hi)."""
    m = np.asarray(mq.m_code, dtype=np.int64)
    b = np.asarray(mq.b_code, dtype=np.int64)
    mi = int(m if m.ndim == 0 else m[channel or 0])
    bi = int(b if b.ndim == 0 else b[channel or 0])
    eff = int(acc) - mq.in_zp * mq.pool_kernel
    v = eff * mi + bi
    out = int(rhaz_shift(np.asarray(v), mq.frac_bits))
    return int(np.clip(out, mq.clamp_lo, mq.clamp_hi))
