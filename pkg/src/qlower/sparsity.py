"""Post-training weight sparsification.

Element-wise magnitude pruning and N:M structured pruning, both writing
raw zeros into the weights so they survive symmetric quantization as
integer zeros. Ties break by first index for determinism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import QuantError
from .ir import Graph, Tensor, int_dtype
from .quant.qops import quantize


@dataclass
class SparsityConfig:
    mode: str = "nm"                 # "elementwise" | "nm"
    target_sparsity: float = 0.5
    n: int = 2
    m: int = 4
    group_axis: int = 1              # input-channel axis
    schedule: tuple[float, float, int] | None = None   # (s_init, s_final, steps)

    def __post_init__(self):
        if self.mode not in ("elementwise", "nm"):
            raise QuantError(f"unknown sparsity mode {self.mode!r}")
        if self.mode == "elementwise" and not 0.0 <= self.target_sparsity < 1.0:
            raise QuantError(f"target sparsity {self.target_sparsity} outside [0, 1)")
        if self.mode == "nm" and not 0 < self.n < self.m:
            raise QuantError(f"N:M requires 0 < N < M, got {self.n}:{self.m}")


def prune_magnitude(w: np.ndarray, sparsity: float) -> np.ndarray:
    """Zero the ceil(s * numel) smallest-magnitude elements (per layer)."""
    if not 0.0 <= sparsity < 1.0:
        raise QuantError(f"sparsity {sparsity} outside [0, 1)")
    out = np.array(w, copy=True)
    k = math.ceil(sparsity * out.size)
    if k == 0:
        return out
    order = np.argsort(np.abs(out).ravel(), kind="stable")
    flat = out.reshape(-1)
    flat[order[:k]] = 0.0
    return out


def _grouped(w: np.ndarray, m: int, group_axis: int):
    moved = np.moveaxis(w, group_axis, -1)
    extent = moved.shape[-1]
    full = (extent // m) * m
    return moved, full


def prune_nm(w: np.ndarray, n: int, m: int, group_axis: int = 1) -> np.ndarray:
    """Keep the N largest-magnitude values per group of M along the axis.

    A trailing partial group stays dense.
    """
    if n >= m:
        raise QuantError(f"N:M requires N < M, got {n}:{m}")
    moved, full = _grouped(np.array(w, copy=True), m, group_axis)
    if full:
        groups = moved[..., :full].reshape(*moved.shape[:-1], full // m, m)
        # stable sort keeps the earlier index on magnitude ties
        order = np.argsort(-np.abs(groups), axis=-1, kind="stable")
        drop = order[..., n:]
        np.put_along_axis(groups, drop, 0.0, axis=-1)
        moved[..., :full] = groups.reshape(*moved.shape[:-1], full)
    return np.moveaxis(moved, -1, group_axis)


def verify_nm(w: np.ndarray, n: int, m: int,
              group_axis: int = 1) -> tuple[bool, int | None]:
    """True iff every complete group has at least M-N zeros; else the index
    of the first violating group (row-major over groups)."""
    moved, full = _grouped(np.asarray(w), m, group_axis)
    if not full:
        return True, None
    groups = moved[..., :full].reshape(-1, m)
    zeros = (groups == 0).sum(axis=1)
    bad = np.where(zeros < m - n)[0]
    if bad.size:
        return False, int(bad[0])
    return True, None


def schedule_sparsity(cfg: SparsityConfig, step: int) -> float:
    """Cubic ramp s(t) = s_final + (s_init - s_final) * (1 - t/T)^3."""
    if cfg.schedule is None:
        return cfg.target_sparsity
    s_init, s_final, total = cfg.schedule
    if not 0 <= step <= total:
        raise QuantError(f"step {step} outside [0, {total}]")
    return s_final + (s_init - s_final) * (1.0 - step / total) ** 3


def prune_graph(g: Graph, cfg: SparsityConfig) -> Graph:
    """Prune every conv/linear weight; refresh frozen integer codes so the
    zeros land in the deployed tensors as raw integer zeros."""
    out = g.copy()
    for node in out.nodes:
        if node.kind not in ("conv2d", "linear"):
            continue
        wname = node.params["weight"]
        w = np.asarray(out.tensors[wname].data, dtype=np.float64)
        if cfg.mode == "elementwise":
            pruned = prune_magnitude(w, cfg.target_sparsity)
        else:
            # group along the flattened reduction dimension (row-major)
            flat = w.reshape(w.shape[0], -1)
            pruned = prune_nm(flat, cfg.n, cfg.m, group_axis=1).reshape(w.shape)
        out.tensors[wname] = Tensor.from_array(pruned.astype(np.float32))
        qp = out.param_qp.get(wname)
        if qp is not None and (wname + ".q") in out.tensors:
            out.tensors[wname + ".q"] = Tensor.from_array(
                quantize(pruned, qp), int_dtype(qp.bits, True))
    return out
