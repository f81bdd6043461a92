"""Table-driven integer nonlinearities (exp, gelu, reciprocal, inv-sqrt).

A table samples fn on an evenly spaced clipped domain; integer inputs are
mapped to indices with a fixed-point affine (multiply, add, shift) so the
lookup path never touches floats. The softmax reciprocal uses a mantissa
table plus exponent shift instead of integer division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..errors import FixedPointOverflowError, QuantError
from ..ir import QuantParams

INDEX_SHIFT = 16
PROB_FRAC = 12        # softmax probabilities live on a 2^-12 grid by default
RECIP_FRAC = 14
ISQRT_FRAC = 30


def _gelu(x: float) -> float:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


_FUNCTIONS = {
    "exp": (math.exp, True),
    "gelu": (_gelu, False),
    "reciprocal": (lambda v: 1.0 / v, True),
    "inv_sqrt": (lambda v: 1.0 / math.sqrt(v), True),
}


def rhaz_shift(v: np.ndarray, shift) -> np.ndarray:
    """Round-half-away-from-zero right shift on int64 arrays.

    Negative shifts degenerate to exact left shifts.
    """
    v = np.asarray(v, dtype=np.int64)
    shift = np.asarray(shift, dtype=np.int64)
    sh = np.maximum(shift, 0)
    half = np.where(shift > 0, np.int64(1) << np.maximum(sh - 1, 0), np.int64(0))
    mag = (np.abs(v) + half) >> sh
    mag = np.where(shift < 0, np.abs(v) << np.maximum(-shift, 0), mag)
    return np.where(v < 0, -mag, mag)


def int_div_rhaz(a: np.ndarray, b: int) -> np.ndarray:
    """Round-half-away integer division by a positive divisor."""
    a = np.asarray(a, dtype=np.int64)
    mag = (np.abs(a) + b // 2) // b
    return np.where(a < 0, -mag, mag)


def int_bit_length(v: np.ndarray) -> np.ndarray:
    """Elementwise bit length of non-negative int64 values (integer ops only)."""
    v = np.asarray(v, dtype=np.int64)
    out = np.zeros_like(v)
    tmp = v.copy()
    while np.any(tmp > 0):
        out += (tmp > 0).astype(np.int64)
        tmp >>= 1
    return out


@dataclass
class LUTTable:
    fn_kind: str
    entries: np.ndarray                 # int64 fixed-point codes
    clip: tuple[float, float]
    in_qp: QuantParams                  # quantization of the clipped domain
    out_fp: tuple[int, int]             # (int_bits, frac_bits) of the entries
    idx_mul: int = 0                    # input-code -> index affine (set at fuse)
    idx_off: int = 0
    idx_shift: int = INDEX_SHIFT

    @property
    def size(self) -> int:
        return int(self.entries.size)

    @property
    def step(self) -> float:
        return (self.clip[1] - self.clip[0]) / (self.size - 1)

    def with_index_map(self, in_scale: float, in_zp: int = 0) -> "LUTTable":
        """Bind the affine mapping integer inputs (scale, zp) to indices."""
        mul = int(round((in_scale / self.step) * (1 << self.idx_shift)))
        off = int(round(((-in_zp * in_scale - self.clip[0]) / self.step)
                        * (1 << self.idx_shift)))
        return LUTTable(self.fn_kind, self.entries, self.clip, self.in_qp,
                        self.out_fp, mul, off, self.idx_shift)

    def indices(self, x_q: np.ndarray) -> np.ndarray:
        """Raw (unclamped) indices for integer inputs; callers clamp/branch."""
        fx = x_q.astype(np.int64) * self.idx_mul + self.idx_off
        return rhaz_shift(fx, self.idx_shift)

    def lookup(self, x_q: np.ndarray) -> np.ndarray:
        idx = np.clip(self.indices(x_q), 0, self.size - 1)
        return self.entries[idx]

    def to_json(self) -> dict:
        return {
            "fn": self.fn_kind,
            "entries": [int(v) for v in self.entries],
            "clip": [float(self.clip[0]), float(self.clip[1])],
            "in_qp": self.in_qp.to_json(),
            "out_fp": [int(self.out_fp[0]), int(self.out_fp[1])],
            "idx_mul": int(self.idx_mul),
            "idx_off": int(self.idx_off),
            "idx_shift": int(self.idx_shift),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LUTTable":
        # clip/in_qp are descriptive; integer-only bundles omit them
        clip = obj.get("clip", [0.0, 1.0])
        in_qp = QuantParams.from_json(obj["in_qp"]) if "in_qp" in obj \
            else QuantParams(1.0, 0, 8, False, False)
        return cls(
            fn_kind=obj["fn"],
            entries=np.asarray(obj["entries"], dtype=np.int64),
            clip=(float(clip[0]), float(clip[1])),
            in_qp=in_qp,
            out_fp=(int(obj["out_fp"][0]), int(obj["out_fp"][1])),
            idx_mul=int(obj["idx_mul"]),
            idx_off=int(obj["idx_off"]),
            idx_shift=int(obj["idx_shift"]),
        )


def lut_build(fn_kind: str, clip: tuple[float, float], entries: int,
              out_fp: tuple[int, int],
              in_qp: QuantParams | None = None) -> LUTTable:
    """Sample fn on [clip.lo, clip.hi] into fixed-point codes.

    Entry k holds fn(lo + k*(hi-lo)/(entries-1)). The exp table floors
    entries at one code so softmax row sums can never be zero. When
    ``in_qp`` describes the integer inputs, the index affine is bound.
    """
    if entries < 2 or entries & (entries - 1):
        raise QuantError(f"LUT size must be a power of two >= 2, got {entries}")
    lo, hi = clip
    if not lo < hi:
        raise QuantError(f"bad clip range ({lo}, {hi})")
    if fn_kind not in _FUNCTIONS:
        raise QuantError(f"unknown LUT function {fn_kind!r}")
    fn, monotone = _FUNCTIONS[fn_kind]
    int_bits, frac_bits = out_fp
    bound = 1 << (int_bits + frac_bits - 1)
    codes = np.empty(entries, dtype=np.int64)
    for k in range(entries):
        v = fn(lo + k * (hi - lo) / (entries - 1))
        code = int(math.floor(abs(v) * (1 << frac_bits) + 0.5))
        code = -code if v < 0 else code
        if not -bound <= code < bound:
            raise FixedPointOverflowError(
                f"LUT {fn_kind} entry {k} value {v} overflows ({int_bits},{frac_bits})")
        codes[k] = code
    if fn_kind == "exp":
        codes = np.maximum(codes, 1)
    if monotone:
        diffs = np.diff(codes)
        if not (np.all(diffs >= 0) or np.all(diffs <= 0)):
            raise QuantError(f"LUT {fn_kind} entries are not monotone")
    step = (hi - lo) / (entries - 1)
    domain_qp = QuantParams(scale=step, zero_point=int(round(-lo / step)),
                            bits=max(2, entries.bit_length() - 1), signed=False,
                            symmetric=False)
    lut = LUTTable(fn_kind, codes, (lo, hi), domain_qp, out_fp)
    if in_qp is not None:
        lut = lut.with_index_map(float(in_qp.scale_array()[0]), 0)
    return lut


def softmax_luts(score_scale: float, exp_entries: int = 256,
                 exp_frac: int = 12) -> tuple[LUTTable, LUTTable]:
    """Build the exp + reciprocal tables for an integer softmax.

    The reciprocal domain is the 9-bit mantissa grid [0.5, 1 - 1/512] so a
    shifted row sum indexes it directly.
    """
    exp_lut = lut_build("exp", (-8.0, 0.0), exp_entries, (2, exp_frac))
    exp_lut = exp_lut.with_index_map(score_scale, 0)
    recip = lut_build("reciprocal", (0.5, 1.0 - 1.0 / 512), 256, (3, RECIP_FRAC))
    return exp_lut, recip


def int_softmax(logits_q: np.ndarray, exp_lut: LUTTable, recip_lut: LUTTable,
                prob_frac: int = PROB_FRAC, axis: int = -1) -> np.ndarray:
    """Row-wise integer softmax; outputs sum to ~2^prob_frac.

    Steps: subtract row max, exp via table, integer row sum, reciprocal via
    mantissa table + exponent shift, scale to the probability grid.
    """
    q = np.asarray(logits_q, dtype=np.int64)
    q = np.moveaxis(q, axis, -1)
    d = q - q.max(axis=-1, keepdims=True)          # <= 0
    e = exp_lut.lookup(d)                          # >= 1 by construction
    s = e.sum(axis=-1, keepdims=True)
    bl = int_bit_length(s)
    # 9-bit mantissa in [256, 511]; top bit implicit
    mant = np.where(bl >= 9, s >> np.maximum(bl - 9, 0), s << np.maximum(9 - bl, 0))
    r = recip_lut.entries[np.clip(mant - 256, 0, recip_lut.size - 1)]
    shift = RECIP_FRAC + bl - prob_frac
    p = rhaz_shift(e * r, shift)
    p = np.clip(p, 0, 1 << prob_frac)
    return np.moveaxis(p, -1, axis)


def int_gelu(x_q: np.ndarray, lut: LUTTable, in_zp: int, out_mul: int,
             ident_mul: int, out_zp: int, clamp_lo: int, clamp_hi: int,
             shift: int = INDEX_SHIFT) -> np.ndarray:
    """LUT gelu with requantization to the consumer's input grid.

    Inputs beyond the clip range bypass the table: below it the output is
    the zero code, above it gelu(x) ~ x so an identity rescale applies.
    """
    x = np.asarray(x_q, dtype=np.int64)
    centered = x - int(in_zp)
    idx = lut.indices(centered)
    frac = lut.out_fp[1]
    mid = rhaz_shift(lut.entries[np.clip(idx, 0, lut.size - 1)] * out_mul
                     + (out_zp << (frac + shift)), frac + shift)
    above = rhaz_shift(centered * ident_mul + (out_zp << shift), shift)
    out = np.where(idx < 0, out_zp, np.where(idx >= lut.size, above, mid))
    return np.clip(out, clamp_lo, clamp_hi)


def _inv_sqrt_scalar(v: int, frac: int) -> int:
    """2^frac / sqrt(v) via bit-scan seed + 2 Newton steps (exact ints)."""
    if v <= 0:
        raise QuantError("inv_sqrt of non-positive value")
    bl = v.bit_length()
    e2, rem = divmod(bl - 1, 2)
    seed_c = 874 if rem == 0 else 618          # ~0.854, ~0.604 in Q10
    y = (seed_c << frac) >> (10 + e2)
    if y == 0:
        y = 1
    two_f = 1 << (2 * frac)
    for _ in range(2):
        y = (y * (3 * two_f - v * y * y)) >> (2 * frac + 1)
    return y


def int_inv_sqrt(v: np.ndarray, frac: int = ISQRT_FRAC) -> np.ndarray:
    """Elementwise integer inverse square root (arbitrary-precision ints)."""
    flat = np.asarray(v).ravel()
    out = np.fromiter((_inv_sqrt_scalar(int(x), frac) for x in flat),
                      dtype=np.int64, count=flat.size)
    return out.reshape(np.asarray(v).shape)


def int_layernorm_instant(x_q: np.ndarray, g_codes: np.ndarray,
                          b_codes: np.ndarray, eps_q: int, frac_r: int,
                          frac_g: int, clamp_lo: int, clamp_hi: int) -> np.ndarray:
    """Integer layer norm with on-the-fly statistics over the last axis.

    g_codes fold gamma * sqrt(C) / out_scale; b_codes fold beta / out_scale
    plus the output zero point. Variance accumulates in int64; the inverse
    square root is the integer Newton iteration.
    """
    x = np.asarray(x_q, dtype=np.int64)
    c = x.shape[-1]
    mu = int_div_rhaz(x.sum(axis=-1, keepdims=True), c)
    d = x - mu
    # the eps floor keeps constant rows (variance 0) well-defined
    var_q = np.maximum((d * d).sum(axis=-1, keepdims=True) + int(eps_q), 1)
    r = int_inv_sqrt(var_q, frac_r)
    acc = d * r * np.asarray(g_codes, dtype=np.int64) \
        + (np.asarray(b_codes, dtype=np.int64) << frac_r)
    out = rhaz_shift(acc, frac_r + frac_g)
    return np.clip(out, clamp_lo, clamp_hi)
