"""Calibration observers and scale/zero-point selection.

Three modes:

* ``minmax``     -- running extrema; merging two observers is exact.
* ``percentile`` -- 2048-bin histogram that re-bins when the range grows;
                    clips outliers at the requested percentile.
* ``mse``        -- buffers samples (deterministic first-N cap) and picks
                    the clip minimizing quantization MSE on them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import QuantError
from ..ir import QuantParams, qrange
from .qops import fake_quant, round_half_away

HIST_BINS = 2048
SAMPLE_CAP = 1 << 16


@dataclass
class Observer:
    mode: str = "minmax"          # minmax | percentile | mse
    name: str = ""
    per_channel: bool = False
    percentile: float = 99.9
    min_val: np.ndarray | None = None
    max_val: np.ndarray | None = None
    count: int = 0
    hist: np.ndarray | None = None
    hist_lo: float = 0.0
    hist_hi: float = 0.0
    samples: list = field(default_factory=list)
    sample_count: int = 0


def _reduce(batch: np.ndarray, fn) -> np.ndarray:
    """Per-tensor scalar or per-channel (axis 0) reduction."""
    return fn(batch.reshape(batch.shape[0], -1), axis=1)


def _rebin(obs: Observer, lo: float, hi: float) -> None:
    """Grow the histogram range, redistributing old counts proportionally."""
    new = np.zeros(HIST_BINS, dtype=np.float64)
    if obs.hist is not None and obs.hist.sum() > 0:
        old_edges = np.linspace(obs.hist_lo, obs.hist_hi, HIST_BINS + 1)
        width_new = (hi - lo) / HIST_BINS
        for i, c in enumerate(obs.hist):
            if c == 0:
                continue
            a, b = old_edges[i], old_edges[i + 1]
            j0 = int(np.clip((a - lo) / width_new, 0, HIST_BINS - 1))
            j1 = int(np.clip((b - lo) / width_new, 0, HIST_BINS - 1))
            if j0 == j1:
                new[j0] += c
            else:
                # split the count over the covered new bins by overlap
                for j in range(j0, j1 + 1):
                    nlo, nhi = lo + j * width_new, lo + (j + 1) * width_new
                    overlap = max(0.0, min(b, nhi) - max(a, nlo))
                    new[j] += c * overlap / (b - a)
    obs.hist, obs.hist_lo, obs.hist_hi = new, lo, hi


def observe(obs: Observer, batch: np.ndarray) -> Observer:
    """Fold a batch into the observer's running statistics."""
    batch = np.asarray(batch, dtype=np.float64)
    if not np.all(np.isfinite(batch)):
        raise QuantError(f"non-finite value observed at {obs.name or '<unnamed>'}")
    if obs.per_channel:
        bmin, bmax = _reduce(batch, np.min), _reduce(batch, np.max)
    else:
        bmin = np.asarray(batch.min())
        bmax = np.asarray(batch.max())
    if obs.min_val is None:
        obs.min_val, obs.max_val = bmin, bmax
    else:
        obs.min_val = np.minimum(obs.min_val, bmin)
        obs.max_val = np.maximum(obs.max_val, bmax)
    obs.count += batch.size

    if obs.mode == "percentile":
        lo = float(np.min(obs.min_val))
        hi = float(np.max(obs.max_val))
        if hi == lo:
            hi = lo + 1e-12
        if obs.hist is None or lo < obs.hist_lo or hi > obs.hist_hi:
            _rebin(obs, lo, hi)
        counts, _ = np.histogram(batch.ravel(), bins=HIST_BINS,
                                 range=(obs.hist_lo, obs.hist_hi))
        obs.hist += counts
    elif obs.mode == "mse":
        if obs.sample_count < SAMPLE_CAP:
            take = batch.ravel()[: SAMPLE_CAP - obs.sample_count]
            obs.samples.append(take.copy())
            obs.sample_count += take.size
    return obs


def merge(a: Observer, b: Observer) -> Observer:
    """Combine two shards; exact for minmax, up to binning for histograms."""
    if a.mode != b.mode or a.per_channel != b.per_channel:
        raise QuantError("cannot merge observers with different configs")
    out = Observer(mode=a.mode, name=a.name or b.name, per_channel=a.per_channel,
                   percentile=a.percentile)
    for src in (a, b):
        if src.min_val is None:
            continue
        if out.min_val is None:
            out.min_val, out.max_val = src.min_val, src.max_val
        else:
            out.min_val = np.minimum(out.min_val, src.min_val)
            out.max_val = np.maximum(out.max_val, src.max_val)
        out.count += src.count
    if a.mode == "percentile" and out.min_val is not None:
        lo, hi = float(np.min(out.min_val)), float(np.max(out.max_val))
        _rebin(out, lo, hi if hi > lo else lo + 1e-12)
        for src in (a, b):
            if src.hist is None:
                continue
            centers = np.linspace(src.hist_lo, src.hist_hi, HIST_BINS + 1)
            centers = (centers[:-1] + centers[1:]) / 2
            counts, _ = np.histogram(centers, bins=HIST_BINS,
                                     range=(out.hist_lo, out.hist_hi),
                                     weights=src.hist)
            out.hist += counts
    elif a.mode == "mse":
        out.samples = list(a.samples) + list(b.samples)
        out.sample_count = a.sample_count + b.sample_count
    return out


def _clip_range(obs: Observer) -> tuple[np.ndarray, np.ndarray]:
    if obs.count == 0 or obs.min_val is None:
        raise QuantError(f"observer {obs.name or '<unnamed>'} has no samples")
    if obs.mode == "percentile" and obs.hist is not None and not obs.per_channel:
        cdf = np.cumsum(obs.hist)
        total = cdf[-1]
        edges = np.linspace(obs.hist_lo, obs.hist_hi, HIST_BINS + 1)
        p = obs.percentile / 100.0
        hi_idx = int(np.searchsorted(cdf, p * total))
        lo_idx = int(np.searchsorted(cdf, (1 - p) * total))
        lo = edges[min(lo_idx, HIST_BINS - 1)]
        hi = edges[min(hi_idx + 1, HIST_BINS)]
        return np.asarray(min(lo, 0.0)), np.asarray(max(hi, 0.0))
    return np.asarray(obs.min_val), np.asarray(obs.max_val)


def qparams_from_range(lo, hi, bits: int, signed: bool, symmetric: bool,
                       channel_axis: int = 0) -> QuantParams:
    """Affine parameters covering [lo, hi]; degenerate ranges get S=1."""
    lo = np.minimum(np.asarray(lo, dtype=np.float64), 0.0)
    hi = np.maximum(np.asarray(hi, dtype=np.float64), 0.0)
    qmin, qmax = qrange(bits, signed, symmetric)
    if symmetric:
        scale = np.maximum(np.abs(lo), np.abs(hi)) / qmax
        degenerate = scale == 0
        if np.any(degenerate):
            warnings.warn("degenerate all-constant observation; using scale=1")
            scale = np.where(degenerate, 1.0, scale)
        zp = np.zeros_like(scale, dtype=np.int64)
    else:
        scale = (hi - lo) / (qmax - qmin)
        degenerate = scale == 0
        if np.any(degenerate):
            warnings.warn("degenerate all-constant observation; using scale=1")
            scale = np.where(degenerate, 1.0, scale)
        zp = np.clip(round_half_away(qmin - lo / scale), qmin, qmax).astype(np.int64)
    if scale.ndim == 0:
        return QuantParams(float(scale), int(zp), bits, signed, symmetric, channel_axis)
    return QuantParams(scale, zp, bits, signed, symmetric, channel_axis)


def compute_qparams(obs: Observer, bits: int, signed: bool = True,
                    symmetric: bool = True) -> QuantParams:
    lo, hi = _clip_range(obs)
    return qparams_from_range(lo, hi, bits, signed, symmetric)


def weight_qparams(w: np.ndarray, bits: int, per_channel: bool = True,
                   symmetric: bool = True) -> QuantParams:
    """Symmetric weight parameters straight from the tensor (no streaming)."""
    if per_channel:
        flat = w.reshape(w.shape[0], -1)
        lo, hi = flat.min(axis=1), flat.max(axis=1)
    else:
        lo, hi = w.min(), w.max()
    return qparams_from_range(lo, hi, bits, signed=True, symmetric=symmetric)


def compute_qparams_mse(samples: np.ndarray, bits: int, signed: bool = True,
                        grid: int = 100) -> QuantParams:
    """Pick the symmetric clip minimizing sum((x - fake_quant(x))^2).

    Scans ``grid`` clip ratios in [0.5, 1.0] of max|x|.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 64:
        raise QuantError(f"mse calibration needs >= 64 samples, got {x.size}")
    amax = float(np.abs(x).max())
    if amax == 0.0:
        warnings.warn("degenerate all-constant observation; using scale=1")
        return QuantParams(1.0, 0, bits, signed, True)
    best_qp, best_err = None, np.inf
    for ratio in np.linspace(0.5, 1.0, grid):
        qp = qparams_from_range(-ratio * amax, ratio * amax, bits, signed, True)
        err = float(np.sum((x - fake_quant(x, qp)) ** 2))
        if err < best_err:
            best_qp, best_err = qp, err
    return best_qp
