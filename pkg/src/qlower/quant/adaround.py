"""Learned rounding for weights (layer-wise output reconstruction).

The weight grid point is floor(W/S) plus a learnable offset. During
fitting the offset is the rectified sigmoid h(alpha) in [0, 1]; at freeze
time it hardens to {0, 1} by the sign of alpha. The objective

    ||X (W_soft - W)^T||^2 / N  +  lambda * sum(1 - |2 h - 1|^beta)

is closed-form, so gradients are analytic and optimization is plain
gradient descent (fixed step). beta anneals from ``beta_start`` to
``beta_end``, sharpening the push toward binary offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ir import qrange

ZETA = 1.1
GAMMA = -0.1


@dataclass
class AdaRoundState:
    alpha: np.ndarray
    bits: int = 8
    signed: bool = True
    symmetric: bool = True
    zeta: float = ZETA
    gamma: float = GAMMA
    lambda_reg: float = 0.01
    beta_start: float = 18.0
    beta_end: float = 2.0
    lr: float = 1e-2
    fitted: bool = False
    loss_trace: list = field(default_factory=list)


def rect_sigmoid(alpha: np.ndarray, zeta: float = ZETA, gamma: float = GAMMA) -> np.ndarray:
    sig = 1.0 / (1.0 + np.exp(-alpha))
    return np.clip(sig * (zeta - gamma) + gamma, 0.0, 1.0)


def _rect_sigmoid_grad(alpha: np.ndarray, zeta: float, gamma: float) -> np.ndarray:
    sig = 1.0 / (1.0 + np.exp(-alpha))
    pre = sig * (zeta - gamma) + gamma
    inside = (pre > 0.0) & (pre < 1.0)
    return np.where(inside, (zeta - gamma) * sig * (1.0 - sig), 0.0)


def adaround_init(w: np.ndarray, scale, bits: int = 8, signed: bool = True,
                  symmetric: bool = True, lambda_reg: float = 0.01) -> AdaRoundState:
    """Start from the soft offset that reproduces W exactly (h = frac part)."""
    s = _scale_for(w, scale)
    rest = np.clip(w / s - np.floor(w / s), 0.01, 0.99)
    inv = np.clip((rest - GAMMA) / (ZETA - GAMMA), 0.01, 0.99)
    alpha = np.log(inv / (1.0 - inv))
    return AdaRoundState(alpha=alpha, bits=bits, signed=signed, symmetric=symmetric,
                         lambda_reg=lambda_reg)


def _scale_for(w: np.ndarray, scale) -> np.ndarray:
    s = np.asarray(scale, dtype=np.float64)
    if s.ndim > 0 and w.ndim > 1:
        shape = [1] * w.ndim
        shape[0] = s.size
        s = s.reshape(shape)
    return s


def soft_weight(w: np.ndarray, scale, state: AdaRoundState) -> np.ndarray:
    s = _scale_for(w, scale)
    return s * (np.floor(w / s) + rect_sigmoid(state.alpha, state.zeta, state.gamma))


def loss_and_grad(w: np.ndarray, scale, gram: np.ndarray, state: AdaRoundState,
                  beta: float, n_samples: int) -> tuple[float, np.ndarray]:
    """Objective value and d/d_alpha.

    ``gram`` is X^T X (K x K) for the flattened layer; the reconstruction
    term is tr(dW gram dW^T) / N with dW = W_soft - W.
    """
    s = _scale_for(w, scale)
    h = rect_sigmoid(state.alpha, state.zeta, state.gamma)
    w2 = w.reshape(w.shape[0], -1)
    s2 = np.broadcast_to(s, w.shape).reshape(w.shape[0], -1)
    h2 = h.reshape(w.shape[0], -1)
    dw = s2 * (np.floor(w2 / s2) + h2) - w2

    with np.errstate(over="ignore", invalid="ignore"):
        rec = float(np.sum((dw @ gram) * dw)) / n_samples
        grad_dw = 2.0 * (dw @ gram) / n_samples

    t = np.abs(2.0 * h2 - 1.0)
    reg = state.lambda_reg * float(np.sum(1.0 - t ** beta))
    # d/dh of (1 - |2h-1|^beta)
    grad_reg_h = -state.lambda_reg * beta * np.where(
        t > 0, t ** (beta - 1.0), 0.0) * np.sign(2.0 * h2 - 1.0) * 2.0

    dh_da = _rect_sigmoid_grad(state.alpha, state.zeta, state.gamma)
    grad_alpha = (grad_dw * s2 + grad_reg_h).reshape(w.shape) * dh_da
    return rec + reg, grad_alpha


def adaround_fit(w: np.ndarray, scale, x_batches, state: AdaRoundState,
                 iters: int = 600) -> AdaRoundState:
    """Optimize alpha against calibration activations.

    ``x_batches``: iterable of (N_i, K) arrays where K matches the
    flattened weight's inner extent (use im2col patches for conv layers).
    """
    x = np.concatenate([np.asarray(b, dtype=np.float64).reshape(-1, w.reshape(w.shape[0], -1).shape[1])
                        for b in x_batches], axis=0)
    gram = x.T @ x
    n = x.shape[0]
    state.loss_trace.clear()
    for it in range(iters):
        beta = state.beta_start + (state.beta_end - state.beta_start) * (it / max(iters - 1, 1))
        loss, grad = loss_and_grad(w, scale, gram, state, beta, n)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        state.alpha = state.alpha - state.lr * grad
        state.loss_trace.append(loss)
    state.fitted = True
    return state


def adaround_freeze(w: np.ndarray, scale, state: AdaRoundState) -> np.ndarray:
    """Harden to integers: floor(W/S) + (alpha >= 0), clamped to range."""
    s = _scale_for(w, scale)
    qmin, qmax = qrange(state.bits, state.signed, state.symmetric)
    wq = np.floor(w / s) + (state.alpha >= 0.0)
    return np.clip(wq, qmin, qmax).astype(np.int64)
