import math

import numpy as np
import numpy.testing as npt
import pytest

from namestate.nncore import (
    OptimizerState,
    adam_step,
    cell_backward,
    cell_forward,
    clip_grad_norm,
    init_cell,
    sgd_momentum_step,
    softmax_nll,
)

from gradcheck import cell_sequence_check
from oracles import finite_difference, max_rel_error, nll, scalar_cell

KINDS = ["RNN", "GRU", "LSTM"]


def _cell(kind, d=4, h=4, seed=0, dtype=np.float64):
    return init_cell(kind, d, h, np.random.default_rng(seed), dtype)


def test_zero_weight_rnn_gives_zero_state():
    cell = _cell("RNN")
    for w in cell.weights.values():
        w[...] = 0
    h, c, _ = cell_forward(cell, np.ones(4), np.ones(4))
    assert c is None
    npt.assert_array_equal(h, np.zeros(4))


def test_gru_update_gate_saturated_keeps_state():
    cell = _cell("GRU")
    cell.weights["b_ih"][:4] = 50.0  # update gate z -> 1
    h_prev = np.array([0.3, -0.2, 0.9, 0.0])
    h, _, _ = cell_forward(cell, np.random.default_rng(1).normal(size=4), h_prev)
    npt.assert_allclose(h, h_prev, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_forward_matches_scalar_oracle(kind):
    rng = np.random.default_rng(5)
    cell = _cell(kind, seed=5)
    x, h = rng.normal(size=4), rng.normal(size=4)
    c = rng.normal(size=4) if kind == "LSTM" else None
    h_t, c_t, _ = cell_forward(cell, x, h, c)
    w = {k: v.tolist() for k, v in cell.weights.items()}
    h_ref, c_ref = scalar_cell(kind, w, x.tolist(), h.tolist(), None if c is None else c.tolist())
    npt.assert_allclose(h_t, h_ref, rtol=1e-12, atol=1e-14)
    if kind == "LSTM":
        npt.assert_allclose(c_t, c_ref, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_forward_deterministic_and_batch_consistent(kind):
    rng = np.random.default_rng(2)
    cell = _cell(kind)
    X, Hs = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    C = rng.normal(size=(3, 4)) if kind == "LSTM" else None
    a, _, _ = cell_forward(cell, X, Hs, C)
    b, _, _ = cell_forward(cell, X, Hs, C)
    npt.assert_array_equal(a, b)
    for i in range(3):
        row, _, _ = cell_forward(cell, X[i], Hs[i], None if C is None else C[i])
        npt.assert_allclose(row, a[i], rtol=1e-13)


def test_lstm_forget_bias_initialised_to_one():
    cell = _cell("LSTM", h=5)
    npt.assert_array_equal(cell.weights["b_ih"][5:10], np.ones(5))
    npt.assert_array_equal(cell.weights["b_hh"][5:10], np.zeros(5))


def test_dimension_errors_name_the_operand():
    cell = _cell("GRU")
    with pytest.raises(ValueError, match="x_t"):
        cell_forward(cell, np.ones(3), np.ones(4))
    with pytest.raises(ValueError, match="h_prev"):
        cell_forward(cell, np.ones(4), np.ones(5))
    with pytest.raises(ValueError, match="c_prev"):
        cell_forward(cell, np.ones(4), np.ones(4), np.ones(4))
    with pytest.raises(ValueError, match="c_prev"):
        cell_forward(_cell("LSTM"), np.ones(4), np.ones(4))


def test_backward_rejects_foreign_cache():
    _, _, cache = cell_forward(_cell("GRU"), np.ones(4), np.ones(4))
    with pytest.raises(ValueError):
        cell_backward(_cell("RNN"), cache, np.ones(4))


@pytest.mark.parametrize("kind", KINDS)
def test_zero_upstream_gradient(kind):
    cell = _cell(kind)
    c = np.ones(4) if kind == "LSTM" else None
    _, _, cache = cell_forward(cell, np.ones(4), np.ones(4), c)
    dx, dh, dc = cell_backward(cell, cache, np.zeros(4), None if c is None else np.zeros(4))
    npt.assert_array_equal(dx, 0)
    npt.assert_array_equal(dh, 0)
    for g in cell.grads.values():
        npt.assert_array_equal(g, 0)


@pytest.mark.parametrize("kind", KINDS)
def test_backward_accumulates(kind):
    rng = np.random.default_rng(3)
    cell = _cell(kind)
    c = rng.normal(size=4) if kind == "LSTM" else None
    _, _, cache = cell_forward(cell, rng.normal(size=4), rng.normal(size=4), c)
    dh = rng.normal(size=4)
    cell_backward(cell, cache, dh)
    once = {k: v.copy() for k, v in cell.grads.items()}
    cell_backward(cell, cache, dh)
    for k in once:
        npt.assert_allclose(cell.grads[k], 2 * once[k], rtol=1e-14)


def test_rnn_3dim_gradient_example():
    assert cell_sequence_check("RNN", 3, 3, seed=0, steps=1, batch=1) < 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_gradients_random_shapes(kind):
    rng = np.random.default_rng(99)
    for seed in range(20):
        d, h = (int(v) for v in rng.integers(1, 9, size=2))
        assert cell_sequence_check(kind, d, h, seed) < 1e-4, (kind, d, h, seed)


def test_softmax_nll_uniform():
    loss, d = softmax_nll(np.zeros(7), 3)
    assert loss == pytest.approx(math.log(7), abs=1e-15)
    assert d.sum() == pytest.approx(0, abs=1e-15)


def test_softmax_nll_confident():
    loss, d = softmax_nll(np.array([10.0, -10.0]), 0)
    p1 = math.exp(-20) / (1 + math.exp(-20))
    assert loss == pytest.approx(-math.log(1 - p1), rel=1e-9)
    assert loss == pytest.approx(2.06e-9, rel=1e-2)
    assert d[0] < 0 < d[1] or d[0] > 0 > d[1]
    assert d[1] == pytest.approx(p1, rel=1e-12)
    assert d[0] == pytest.approx(-p1, rel=1e-6)


def test_softmax_nll_extreme_logits_stay_finite():
    loss, d = softmax_nll(np.array([1000.0, -1000.0, 0.0]), 1)
    assert math.isfinite(loss) and np.all(np.isfinite(d))


def test_softmax_nll_gradient_fd():
    rng = np.random.default_rng(4)
    for _ in range(10):
        z = rng.normal(size=5) * 3
        t = int(rng.integers(5))
        loss, d = softmax_nll(z, t)
        assert loss >= 0
        assert abs(d.sum()) < 1e-12
        assert loss == pytest.approx(nll(z.tolist(), t), rel=1e-12)
        (num,) = finite_difference(lambda: nll(z.tolist(), t), [z])
        assert max_rel_error([d], [num]) < 1e-6


def test_softmax_nll_batch_matches_rows():
    rng = np.random.default_rng(8)
    Z, T = rng.normal(size=(4, 6)), np.array([0, 5, 2, 2])
    losses, D = softmax_nll(Z, T)
    for i in range(4):
        l, d = softmax_nll(Z[i], T[i])
        assert losses[i] == pytest.approx(l, rel=1e-14)
        npt.assert_allclose(D[i], d, rtol=1e-14)


def test_sgd_momentum():
    p, g = np.array([1.0, -2.0]), np.array([0.5, 0.25])
    st = OptimizerState("sgd", learning_rate=0.1, momentum=0.9)
    sgd_momentum_step([p], [g], st)
    npt.assert_allclose(p, [1.0 - 0.05, -2.0 - 0.025])
    before = p.copy()
    sgd_momentum_step([p], [g], st)
    npt.assert_allclose(before - p, 0.1 * 1.9 * g, rtol=1e-14)
    npt.assert_array_equal(g, [0.5, 0.25])
    assert st.step_count == 2


def test_sgd_without_momentum_is_plain_sgd():
    p, g = np.array([1.0]), np.array([2.0])
    st = OptimizerState("sgd", learning_rate=0.01, momentum=0.0)
    for _ in range(3):
        sgd_momentum_step([p], [g], st)
    npt.assert_allclose(p, [1.0 - 3 * 0.02])


def test_adam_first_step_is_lr_sign():
    g = np.array([3.0, -0.001, 250.0])
    p = np.zeros(3)
    st = OptimizerState("adam", learning_rate=3e-4)
    adam_step([p], [g], st)
    npt.assert_allclose(p, -3e-4 * np.sign(g), rtol=1e-4)
    assert st.step_count == 1


def test_adam_zero_gradient_never_moves():
    p = np.array([0.5, -1.0])
    st = OptimizerState("adam", learning_rate=3e-4)
    for _ in range(50):
        adam_step([p], [np.zeros(2)], st)
    npt.assert_array_equal(p, [0.5, -1.0])


def test_adam_quadratic_bowl_decreases():
    # scalar reference simulation of the same update rule
    w = np.array([1.0])
    st = OptimizerState("adam", learning_rate=3e-4)
    m = v = 0.0
    ref = 1.0
    prev = 1.0
    for t in range(1, 11):
        g = w.copy()
        adam_step([w], [g], st)
        m = 0.9 * m + 0.1 * ref
        v = 0.999 * v + 0.001 * ref * ref
        ref -= 3e-4 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert w[0] < prev
        assert w[0] == pytest.approx(ref, rel=1e-12)
        prev = w[0]


def test_optimizer_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_momentum_step([np.zeros(2)], [np.zeros(3)], OptimizerState("sgd", 0.1))
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros((2, 1))], OptimizerState("adam", 0.1))
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(2)], OptimizerState("sgd", 0.1))


def test_optimizer_preserves_shapes_and_dtype():
    p = [np.ones((3, 2), dtype=np.float32), np.ones(4, dtype=np.float32)]
    g = [np.full((3, 2), 0.1, dtype=np.float32), np.full(4, -0.1, dtype=np.float32)]
    for kind in ("sgd", "adam"):
        st = OptimizerState(kind, 0.01)
        (sgd_momentum_step if kind == "sgd" else adam_step)(p, g, st)
        assert [a.shape for a in p] == [(3, 2), (4,)]
        assert all(a.dtype == np.float32 for a in p)


def test_clip_grad_norm():
    g = [np.array([3.0]), np.array([4.0])]
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    npt.assert_allclose([g[0][0], g[1][0]], [0.6, 0.8])
    g = [np.array([0.3])]
    clip_grad_norm(g, 1.0)
    assert g[0][0] == 0.3
