"""Reference conv / linear / pooling kernels (im2col based).

Dtype-generic: float inputs run in their own precision, integer inputs
accumulate in int64. Correctness-first; no performance tricks beyond
batched matmul.
"""

from __future__ import annotations

import numpy as np

from ..errors import AccumulatorOverflowError

ACC_LIMIT = 1 << 62


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (list, tuple)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def im2col(x: np.ndarray, kh: int, kw: int, stride, padding,
           pad_value=0) -> tuple[np.ndarray, int, int]:
    """(N, C, H, W) -> (N, out_h*out_w, C*kh*kw) patch matrix."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)),
                   constant_values=pad_value)
    n, c, h, w = x.shape
    out_h = (h - kh) // sh + 1
    out_w = (w - kw) // sw + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, out_h, out_w, kh, kw),
        strides=(s0, s1, s2 * sh, s3 * sw, s2, s3),
        writeable=False,
    )
    patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, out_h * out_w, c * kh * kw)
    return np.ascontiguousarray(patches), out_h, out_w


def conv2d(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None,
           stride, padding, groups: int = 1) -> np.ndarray:
    """Float convolution, OIHW weights, NCHW activations."""
    o, ci, kh, kw = w.shape
    n = x.shape[0]
    outs = []
    for gi in range(groups):
        xg = x[:, gi * ci:(gi + 1) * ci]
        wg = w[gi * (o // groups):(gi + 1) * (o // groups)]
        patches, out_h, out_w = im2col(xg, kh, kw, stride, padding, pad_value=0.0)
        y = patches @ wg.reshape(wg.shape[0], -1).T
        outs.append(y.transpose(0, 2, 1).reshape(n, wg.shape[0], out_h, out_w))
    y = np.concatenate(outs, axis=1) if groups > 1 else outs[0]
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y


def check_matmul_bound(a: np.ndarray, b: np.ndarray, k: int,
                       node_id: str, what: str) -> None:
    """Reject products that could wrap int64 (checked before multiplying)."""
    if a.size == 0 or b.size == 0:
        return
    worst = int(np.abs(a).max()) * int(np.abs(b).max()) * int(k)
    if worst >= ACC_LIMIT:
        raise AccumulatorOverflowError(
            f"{what} accumulator overflow at node {node_id!r} "
            f"(worst case {worst})")


def conv2d_int(x_q: np.ndarray, w_q: np.ndarray, in_zp: int,
               stride, padding, groups: int = 1, node_id: str = "") -> np.ndarray:
    """Integer convolution with 64-bit accumulation.

    The input zero point is subtracted up front so real zero padding is
    integer zero padding.
    """
    x = x_q.astype(np.int64) - int(in_zp)
    w = w_q.astype(np.int64)
    o, ci, kh, kw = w.shape
    n = x.shape[0]
    check_matmul_bound(x, w, ci * kh * kw, node_id, "conv")
    outs = []
    for gi in range(groups):
        xg = x[:, gi * ci:(gi + 1) * ci]
        wg = w[gi * (o // groups):(gi + 1) * (o // groups)]
        patches, out_h, out_w = im2col(xg, kh, kw, stride, padding, pad_value=0)
        acc = patches @ wg.reshape(wg.shape[0], -1).T
        outs.append(acc.transpose(0, 2, 1).reshape(n, wg.shape[0], out_h, out_w))
    return np.concatenate(outs, axis=1) if groups > 1 else outs[0]


def linear(x: np.ndarray, w: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    y = x @ w.T
    if bias is not None:
        y = y + bias
    return y


def linear_int(x_q: np.ndarray, w_q: np.ndarray, in_zp: int,
               node_id: str = "") -> np.ndarray:
    x = x_q.astype(np.int64) - int(in_zp)
    w = w_q.astype(np.int64)
    check_matmul_bound(x, w, w.shape[-1], node_id, "linear")
    return x @ w.T


def _pool_windows(x: np.ndarray, kernel, stride, padding, pad_value):
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=pad_value)
    n, c, h, w = x.shape
    out_h = (h - kh) // sh + 1
    out_w = (w - kw) // sw + 1
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, out_h, out_w, kh, kw),
        strides=(s0, s1, s2 * sh, s3 * sw, s2, s3), writeable=False)
    return win


def avgpool(x: np.ndarray, kernel, stride, padding=0) -> np.ndarray:
    win = _pool_windows(x, kernel, stride, padding, 0.0)
    return win.mean(axis=(4, 5))


def sumpool_int(x_q: np.ndarray, kernel, stride, padding=0) -> np.ndarray:
    win = _pool_windows(x_q.astype(np.int64), kernel, stride, padding, 0)
    return win.sum(axis=(4, 5))


def maxpool(x: np.ndarray, kernel, stride, padding=0) -> np.ndarray:
    sentinel = np.finfo(x.dtype).min if np.issubdtype(x.dtype, np.floating) \
        else np.iinfo(x.dtype).min
    win = _pool_windows(x, kernel, stride, padding, sentinel)
    return win.max(axis=(4, 5))
