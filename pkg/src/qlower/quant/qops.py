"""Quantize / dequantize / fake-quantize primitives.

Rounding is half-away-from-zero everywhere, matching the fixed-point
hardware convention used by the rescaler. All math runs in float64 so the
round trip bound |dequantize(quantize(x)) - x| <= scale/2 holds exactly
for in-range inputs.
"""

from __future__ import annotations

import numpy as np

from ..errors import QuantError
from ..ir import QuantParams


def round_half_away(x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _broadcast(qp: QuantParams, ndim: int) -> tuple[np.ndarray, np.ndarray]:
    """Scale / zero-point shaped for broadcasting along the channel axis."""
    s = np.asarray(qp.scale, dtype=np.float64)
    z = np.asarray(qp.zero_point, dtype=np.float64)
    if s.ndim > 0 and ndim > 1:
        shape = [1] * ndim
        shape[qp.channel_axis] = s.size
        s = s.reshape(shape)
        z = np.broadcast_to(z, (s.size,)).reshape(shape) if z.ndim > 0 else z
    return s, z


def quantize(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Map floats to integer codes: clamp(round(x / S + Z), qmin, qmax)."""
    s, z = _broadcast(qp, np.ndim(x))
    if np.any(np.asarray(s) <= 0):
        raise QuantError("scale must be positive")
    qmin, qmax = qp.qrange()
    q = round_half_away(np.asarray(x, dtype=np.float64) / s + z)
    return np.clip(q, qmin, qmax).astype(np.int64)


def dequantize(xq: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Map integer codes back to reals: (xq - Z) * S."""
    s, z = _broadcast(qp, np.ndim(xq))
    return (np.asarray(xq, dtype=np.float64) - z) * s


def fake_quant(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Quantize-then-dequantize; the training-path view of precision loss."""
    return dequantize(quantize(x, qp), qp)
