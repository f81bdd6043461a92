import numpy as np
import pytest

from qlower.quant import (AdaRoundState, adaround_fit, adaround_freeze,
                          adaround_init, loss_and_grad, rect_sigmoid,
                          soft_weight)
from qlower.quant.qops import round_half_away


def test_rect_sigmoid_range():
    a = np.linspace(-20, 20, 1001)
    h = rect_sigmoid(a)
    assert h.min() >= 0.0 and h.max() <= 1.0
    assert rect_sigmoid(np.array(0.0)) == pytest.approx(0.5)


def test_freeze_follows_alpha_sign():
    # W/S = 2.3: positive offset rounds up, negative rounds down
    w = np.array([2.3 * 0.5])
    st = AdaRoundState(alpha=np.array([0.7]), bits=8)
    assert adaround_freeze(w, 0.5, st).tolist() == [3]
    st = AdaRoundState(alpha=np.array([-0.5]), bits=8)
    assert adaround_freeze(w, 0.5, st).tolist() == [2]


def test_freeze_is_two_choice_argmin():
    # frozen grid point = argmin over {floor, floor+1} of |soft - choice|
    rng = np.random.default_rng(0)
    w = rng.normal(0, 1, size=(6, 6))
    scale = 0.13
    st = adaround_init(w, scale, bits=8)
    st.alpha = rng.normal(0, 2, size=w.shape)
    frozen = adaround_freeze(w, scale, st)
    soft = soft_weight(w, scale, st) / scale
    floor = np.floor(w / scale)
    for idx in np.ndindex(w.shape):
        lo, hi = floor[idx], floor[idx] + 1
        pick = lo if abs(soft[idx] - lo) < abs(soft[idx] - hi) else hi
        assert frozen[idx] == pick


def test_on_grid_weights_recover_nearest():
    w = np.array([[0.4, -0.8, 1.2, 0.0]])
    scale = 0.4
    st = adaround_init(w, scale, bits=8)
    st = adaround_fit(w, scale, [np.eye(4)], st, iters=300)
    frozen = adaround_freeze(w, scale, st)
    assert np.array_equal(frozen, round_half_away(w / scale))
    h = rect_sigmoid(st.alpha)
    assert np.all((h < 0.05) | (h > 0.95))


def test_reconstruction_beats_nearest_rounding():
    rng = np.random.default_rng(1)
    wins = 0
    for trial in range(8):
        w = rng.normal(0, 1, size=(8, 8))
        x = rng.normal(0, 1, size=(64, 8))
        scale = np.abs(w).max() / 3       # 3-bit symmetric
        st = adaround_init(w, scale, bits=3)
        st = adaround_fit(w, scale, [x], st, iters=600)
        wq = adaround_freeze(w, scale, st)
        nearest = np.clip(round_half_away(w / scale), -3, 3)
        err_ada = np.sum((x @ (scale * wq - w).T) ** 2)
        err_nn = np.sum((x @ (scale * nearest - w).T) ** 2)
        wins += err_ada <= err_nn
    assert wins >= 7


def test_scalar_alpha_moves_toward_residual():
    # lambda=0, one weight, one sample: the optimum is h = frac(w/s), so
    # starting from h=0.5 the sign of alpha after fitting must match the
    # sign of (frac - 0.5)
    for frac in (0.2, 0.8):
        w = np.array([[(2 + frac) * 0.1]])
        x = np.array([[1.0]])
        st = adaround_init(w, 0.1, bits=8)
        st.alpha = np.zeros((1, 1))
        st.lambda_reg = 0.0
        st = adaround_fit(w, 0.1, [x], st, iters=200)
        assert np.sign(st.alpha[0, 0]) == np.sign(frac - 0.5)


def test_analytic_gradient_matches_central_differences():
    rng = np.random.default_rng(2)
    w = rng.normal(0, 1, size=(3, 4))
    x = rng.normal(0, 1, size=(16, 4))
    gram = x.T @ x
    st = adaround_init(w, 0.2, bits=4)
    st.alpha = rng.normal(0, 1, size=w.shape)
    beta = 6.0
    _, grad = loss_and_grad(w, 0.2, gram, st, beta, x.shape[0])
    eps = 1e-6
    for idx in np.ndindex(w.shape):
        ap = st.alpha.copy(); ap[idx] += eps
        am = st.alpha.copy(); am[idx] -= eps
        sp = AdaRoundState(alpha=ap, lambda_reg=st.lambda_reg)
        sm = AdaRoundState(alpha=am, lambda_reg=st.lambda_reg)
        lp, _ = loss_and_grad(w, 0.2, gram, sp, beta, x.shape[0])
        lm, _ = loss_and_grad(w, 0.2, gram, sm, beta, x.shape[0])
        fd = (lp - lm) / (2 * eps)
        if abs(fd) > 1e-8:
            assert grad[idx] == pytest.approx(fd, rel=1e-4)


def test_non_finite_loss_reports_iteration():
    w = np.array([[1.03]])
    st = adaround_init(w, 0.1, bits=8)
    with pytest.raises(FloatingPointError, match="iteration"):
        adaround_fit(w, 0.1, [np.array([[np.inf]])], st, iters=50)


def test_per_channel_scale_support():
    rng = np.random.default_rng(3)
    w = rng.normal(0, 1, size=(4, 5))
    scales = np.abs(w).max(axis=1) / 7
    st = adaround_init(w, scales, bits=4)
    st = adaround_fit(w, scales, [rng.normal(0, 1, size=(32, 5))], st, iters=100)
    wq = adaround_freeze(w, scales, st)
    assert wq.shape == w.shape and np.abs(wq).max() <= 7
