import math

import numpy as np
import pytest

from geogrow.nn import (
    AdamState, BatchNormState, ShapeError, adam_step, batchnorm_backward,
    batchnorm_forward, cross_entropy, dense_forward, gru_init,
    gru_layer_backward, gru_layer_forward, sigmoid, softmax,
    softmax_cross_entropy_backward,
)
from oracles import fd_gradient_errors


# ------------------------------------------------------------------- dense

def test_dense_shapes_and_zero_weights():
    x = np.random.default_rng(0).random((4, 3))
    w = np.zeros((3, 5))
    b = np.zeros(5)
    out, _ = dense_forward(x, w, b)
    assert out.shape == (4, 5)
    assert not out.any()
    with pytest.raises(ShapeError):
        dense_forward(x, np.zeros((4, 5)), b)


def test_sigmoid_dense_properties():
    from geogrow.model import dense_embed
    rng = np.random.default_rng(1)
    x = rng.random(6)
    assert np.allclose(dense_embed(x, np.zeros((6, 4)), np.zeros(4)), 0.5)
    big_neg = dense_embed(x, np.full((6, 4), -50.0), np.zeros(4))
    assert np.all(big_neg < 1e-6)
    # 2-dim hand example: y = sigmoid(W x + b)
    w = np.array([[0.5], [-1.0]])
    b = np.array([0.25])
    y = dense_embed(np.array([2.0, 1.0]), w, b)
    assert y[0] == pytest.approx(1.0 / (1.0 + math.exp(-(0.5 * 2 - 1.0 + 0.25))))


# --------------------------------------------------------------- batch norm

def test_batchnorm_train_standardizes():
    rng = np.random.default_rng(2)
    x = rng.normal(3.0, 2.0, size=(64, 8))
    state = BatchNormState()
    out, cache = batchnorm_forward(x, np.ones(8), np.zeros(8), state, train=True)
    x_hat = cache[0]
    assert np.allclose(x_hat.mean(axis=0), 0.0, atol=1e-6)
    assert np.allclose(x_hat.var(axis=0), 1.0, atol=1e-4)  # eps shifts it slightly
    assert np.allclose(out, x_hat)


def test_batchnorm_eval_before_training_errors():
    state = BatchNormState()
    with pytest.raises(RuntimeError):
        batchnorm_forward(np.zeros((4, 3)), np.ones(3), np.zeros(3), state, train=False)


def test_batchnorm_running_stats_ema():
    rng = np.random.default_rng(3)
    state = BatchNormState()
    x1 = rng.normal(0, 1, (32, 4))
    x2 = rng.normal(5, 2, (32, 4))
    batchnorm_forward(x1, np.ones(4), np.zeros(4), state, train=True, update_running=True)
    m1 = state.mean.copy()
    batchnorm_forward(x2, np.ones(4), np.zeros(4), state, train=True, update_running=True)
    expected = 0.9 * m1 + 0.1 * x2.mean(axis=0)
    assert np.allclose(state.mean, expected)


def test_batchnorm_gradients_train_and_eval():
    rng = np.random.default_rng(4)
    x = rng.normal(0, 1, (8, 5))
    params = {"x": x.copy(), "gamma": rng.normal(1, 0.1, 5), "beta": rng.normal(0, 0.1, 5)}
    state = BatchNormState()
    batchnorm_forward(x, params["gamma"], params["beta"], state, train=True,
                      update_running=True)

    for train in (True, False):
        def loss_fn():
            out, _ = batchnorm_forward(params["x"], params["gamma"], params["beta"],
                                       state, train=train)
            return float((out ** 2).sum())

        out, cache = batchnorm_forward(params["x"], params["gamma"], params["beta"],
                                       state, train=train)
        dx, dgamma, dbeta = batchnorm_backward(2.0 * out, cache)
        grads = {"x": dx, "gamma": dgamma, "beta": dbeta}
        worst, which = fd_gradient_errors(loss_fn, params, grads,
                                          np.random.default_rng(5))
        assert worst < 1e-4, (train, which)


# ----------------------------------------------------------- softmax + loss

def test_softmax_sums_to_one_and_symmetry():
    rng = np.random.default_rng(6)
    logits = rng.normal(0, 3, (32, 2))
    p = softmax(logits)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    same = softmax(np.array([[1.7, 1.7]]))
    assert np.allclose(same, 0.5)


def test_cross_entropy_values():
    assert cross_entropy(np.array([[0.0, 1.0]]), np.array([1])) == pytest.approx(0.0)
    assert cross_entropy(np.array([[0.5, 0.5]]), np.array([0])) == pytest.approx(math.log(2))
    # Batch mean
    probs = np.array([[0.25, 0.75], [0.9, 0.1]])
    labels = np.array([1, 0])
    expected = -(math.log(0.75) + math.log(0.9)) / 2
    assert cross_entropy(probs, labels) == pytest.approx(expected)


def test_softmax_ce_gradient():
    rng = np.random.default_rng(7)
    params = {"logits": rng.normal(0, 1, (6, 2))}
    labels = np.array([0, 1, 1, 0, 1, 0])

    def loss_fn():
        return cross_entropy(softmax(params["logits"]), labels)

    probs = softmax(params["logits"])
    grads = {"logits": softmax_cross_entropy_backward(probs, labels)}
    worst, which = fd_gradient_errors(loss_fn, params, grads, np.random.default_rng(8),
                                      samples_per_tensor=12)
    assert worst < 1e-5, which


# ---------------------------------------------------------------------- gru

def test_gru_zero_weights_zero_embedding():
    x = np.random.default_rng(9).random((3, 8, 4))
    zeros = {"wx": np.zeros((4, 15)), "wh": np.zeros((5, 10)),
             "wc": np.zeros((5, 5)), "b": np.zeros(15)}
    h_seq, _ = gru_layer_forward(x, **zeros)
    assert not h_seq.any()


def test_gru_single_unit_hand_computed():
    # One unit, one step, hand-set weights; h0 = 0 so h1 = (1 - z) * cand.
    wxz, wxr, wxc = 0.5, -0.3, 0.8
    bz, br, bc = 0.0, 0.1, 0.1
    x_val = 1.0
    params = {
        "wx": np.array([[wxz, wxr, wxc]]),
        "wh": np.zeros((1, 2)),
        "wc": np.zeros((1, 1)),
        "b": np.array([bz, br, bc]),
    }
    h_seq, _ = gru_layer_forward(np.array([[[x_val]]]), **params)
    z = 1.0 / (1.0 + math.exp(-(wxz * x_val + bz)))
    cand = math.tanh(wxc * x_val + bc)
    assert h_seq[0, 0, 0] == pytest.approx((1.0 - z) * cand, abs=1e-12)


def test_gru_hidden_state_bounded():
    rng = np.random.default_rng(10)
    params = gru_init(rng, 6, 5)
    x = rng.random((4, 8, 6))
    h_seq, _ = gru_layer_forward(x, **params)
    assert np.all(np.isfinite(h_seq))
    assert np.all(np.abs(h_seq) < 1.0)


def test_gru_bptt_gradients():
    rng = np.random.default_rng(11)
    params = gru_init(rng, 3, 4)
    x = rng.random((2, 5, 3))
    target = rng.random((2, 4))

    def loss_fn():
        h_seq, _ = gru_layer_forward(x, **params)
        return float(((h_seq[:, -1, :] - target) ** 2).sum())

    h_seq, cache = gru_layer_forward(x, **params)
    d_h_seq = np.zeros_like(h_seq)
    d_h_seq[:, -1, :] = 2.0 * (h_seq[:, -1, :] - target)
    _, dwx, dwh, dwc, db = gru_layer_backward(d_h_seq, cache)
    grads = {"wx": dwx, "wh": dwh, "wc": dwc, "b": db}
    worst, which = fd_gradient_errors(loss_fn, params, grads, np.random.default_rng(12))
    assert worst < 1e-4, which


def test_gru_input_gradient():
    rng = np.random.default_rng(13)
    weights = gru_init(rng, 3, 4)
    params = {"x": rng.random((2, 4, 3))}

    def loss_fn():
        h_seq, _ = gru_layer_forward(params["x"], **weights)
        return float(h_seq[:, -1, :].sum())

    h_seq, cache = gru_layer_forward(params["x"], **weights)
    d_h_seq = np.zeros_like(h_seq)
    d_h_seq[:, -1, :] = 1.0
    d_x, *_ = gru_layer_backward(d_h_seq, cache)
    worst, which = fd_gradient_errors(loss_fn, params, {"x": d_x},
                                      np.random.default_rng(14))
    assert worst < 1e-4, which


# --------------------------------------------------------------------- adam

def test_adam_first_step_magnitude():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -40.0, 1e-3])}
    adam_step(params, grads, AdamState(), lr=0.01)
    step = np.array([1.0, -2.0, 0.5]) - params["w"]
    # Bias-corrected first step is lr * sign(g) up to the epsilon smoothing.
    assert np.allclose(np.abs(step), 0.01, rtol=1e-4)
    assert np.all(np.sign(step) == np.sign([0.3, -40.0, 1e-3]))


def test_adam_zero_gradient_no_change():
    params = {"w": np.array([1.0, 2.0])}
    adam_step(params, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    assert np.array_equal(params["w"], [1.0, 2.0])


def test_adam_converges_on_quadratic():
    params = {"x": np.array([0.0])}
    state = AdamState()
    for _ in range(500):
        grads = {"x": 2.0 * (params["x"] - 3.0)}
        adam_step(params, grads, state, lr=0.05)
    assert abs(params["x"][0] - 3.0) < 1e-3


def test_sigmoid_stable():
    assert sigmoid(np.array([-1000.0]))[0] == pytest.approx(0.0, abs=1e-12)
    assert sigmoid(np.array([1000.0]))[0] == pytest.approx(1.0, abs=1e-12)
