import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TOY_ARCH, central_diff, rel_err, train_toy
from sbnn.data import load_dataset
from sbnn.errors import NonFiniteLoss, OutOfRange, ShapeMismatch, StaleCache, WrongMode
from sbnn.graph import SoftmaxCE, build_model
from sbnn.selfbin import (
    AdamState,
    ConstrainedWeights,
    Mode,
    NuSchedule,
    TrainConfig,
    adam_step,
    alpha_chain_backward,
    alpha_optimal,
    grad_P_from_grad_W,
    histogram_snapshot,
    mass_near_binary,
    nu_at,
    refresh_weights,
    train,
)
from sbnn.selfbin.weights import sign

# --- schedule ----------------------------------------------------------------


def test_nu_endpoints_exact():
    s = NuSchedule(1.0, 1000.0, 100)
    assert nu_at(s, 0) == 1.0
    assert nu_at(s, 100) == 1000.0
    assert math.isclose(nu_at(s, 50), 1000**0.5, rel_tol=1e-12)
    assert abs(nu_at(s, 50) - 31.622) < 1e-3


@given(st.integers(1, 500))
def test_nu_strictly_increasing(M):
    vals = list(NuSchedule(1.0, 1000.0, M))
    assert len(vals) == M + 1
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[0] == 1.0 and vals[-1] == 1000.0


def test_nu_out_of_range():
    s = NuSchedule(total_epochs=5)
    for e in (-1, 6):
        with pytest.raises(OutOfRange):
            nu_at(s, e)


def test_for_training_reaches_end_on_last_epoch():
    s = NuSchedule.for_training(30)
    assert s.total_epochs == 29 and nu_at(s, 29) == 1000.0


# --- constrained weights -------------------------------------------------------


def test_refresh_weights_examples():
    cw = ConstrainedWeights(np.array([0.0, 0.01, -0.01]))
    refresh_weights(cw, 1000.0)
    assert cw.W[0] == 0
    np.testing.assert_allclose(cw.W[1:], [math.tanh(10), -math.tanh(10)], rtol=1e-7)
    with pytest.raises(WrongMode):
        refresh_weights(ConstrainedWeights(np.zeros(2), Mode.HARD_STE), 1.0)


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(1, 1000))
def test_soft_weights_bounded(vals, nu):
    cw = ConstrainedWeights(np.asarray(vals, np.float32))
    refresh_weights(cw, nu)
    assert np.all(np.abs(cw.W) <= 1)
    np.testing.assert_array_equal(cw.W, np.tanh(nu * cw.P).astype(np.float32))


def test_grad_P_examples():
    cw = ConstrainedWeights(np.zeros(3))
    refresh_weights(cw, 7.0)
    np.testing.assert_array_equal(grad_P_from_grad_W(cw, np.array([1.0, -2.0, 0.5]), 7.0), [7.0, -14.0, 3.5])
    cw = ConstrainedWeights(np.array([5.0]))
    refresh_weights(cw, 100.0)
    assert abs(grad_P_from_grad_W(cw, np.array([1.0]), 100.0)[0]) < 1e-12
    with pytest.raises(StaleCache):
        grad_P_from_grad_W(cw, np.array([1.0]), 50.0)
    with pytest.raises(WrongMode):
        grad_P_from_grad_W(ConstrainedWeights(np.zeros(1), Mode.HARD_STE), np.ones(1), 1.0)


def test_hard_forward_is_exact_sign(rng):
    P = rng.uniform(-1, 1, (4, 5))
    P[0, 0] = 0.0
    cw = ConstrainedWeights(P, Mode.HARD_STE)
    np.testing.assert_array_equal(cw.forward(1000.0), sign(P))
    assert cw.forward(1000.0)[0, 0] == -1


@pytest.mark.parametrize("nu", [1.0, 5.0, 20.0])
def test_soft_chain_matches_end_to_end_finite_differences(nu, rng):
    m = build_model("dense:5, bn, act, dense:3", (4,), 3, seed=3, dtype=np.float64, init_range=0.3)
    x = rng.uniform(-1, 1, (8, 4))
    y = rng.integers(0, 3, 8)
    m.loss_and_backward(x, y, nu)
    grads = [p.grad.copy() for p in m.params()]

    def f():
        return SoftmaxCE().forward(m.forward(x, nu, train=True), y)

    for p, g in zip(m.params(), grads):
        assert rel_err(g, central_diff(f, p.value)) < 1e-4, p.name


# --- alpha -------------------------------------------------------------------------


def test_alpha_self_consistent_on_binary_weights():
    W = np.sign(np.random.default_rng(0).standard_normal((3, 16)))
    np.testing.assert_allclose(alpha_optimal(W, 1000.0).alpha, 1.0, rtol=1e-12)


def test_alpha_exact_fit():
    # for W = c * s with s in {-1, +1} and large nu, tanh(nu W) = s exactly, so alpha = c
    s = np.sign(np.random.default_rng(1).standard_normal((2, 8)))
    W = np.array([[0.3], [2.5]]) * s
    np.testing.assert_allclose(alpha_optimal(W, 1000.0).alpha, [0.3, 2.5], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(1, 20))
def test_alpha_matches_grid_search(seed, nu):
    W = np.random.default_rng(seed).uniform(-1, 1, (1, 16))
    F = np.tanh(nu * W)
    grid = np.linspace(0, 5, 50001)
    cost = ((W[0][None, :] - grid[:, None] * F[0][None, :]) ** 2).sum(1)
    best = grid[np.argmin(cost)]
    assert abs(alpha_optimal(W, nu).alpha[0] - best) <= grid[1] - grid[0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(1, 1000))
def test_alpha_never_worse_than_unscaled(seed, nu):
    W = np.random.default_rng(seed).uniform(-1, 1, (4, 9))
    F = np.tanh(nu * W)
    a = alpha_optimal(W, nu).alpha[:, None]
    assert np.all(((W - a * F) ** 2).sum(1) <= ((W - F) ** 2).sum(1) + 1e-12)


def test_alpha_degenerate_channel():
    a = alpha_optimal(np.zeros((2, 4)), 10.0)
    np.testing.assert_array_equal(a.alpha, 1.0)
    assert a.degenerate.all()


def test_alpha_chain_zero_upstream(rng):
    W = rng.uniform(-1, 1, (3, 5))
    assert not alpha_chain_backward(np.zeros_like(W), W, alpha_optimal(W, 4.0), 4.0).any()


@settings(max_examples=50)
@given(st.floats(0.01, 2), st.sampled_from([-1.0, 1.0]), st.floats(1, 20), st.floats(-3, 3))
def test_alpha_chain_single_element_closed_form(mag, sgn, nu, g):
    # one weight per channel: alpha = w / tanh(nu w), so alpha * tanh(nu w) = w and dB/dw = 1
    w = np.array([[sgn * mag]])
    out = alpha_chain_backward(np.array([[g]]), w, alpha_optimal(w, nu), nu)
    assert abs(out[0, 0] - g) <= 1e-8 * max(1.0, abs(g))


def test_hard_alpha_backward_requires_forward():
    cw = ConstrainedWeights(np.full((2, 3), 0.2), Mode.HARD_STE_ALPHA)
    with pytest.raises(StaleCache):
        cw.backward(np.ones((2, 3)), 5.0)
    cw.forward(5.0)
    assert cw.backward(np.ones((2, 3)), 5.0).shape == (2, 3)


# --- Adam ---------------------------------------------------------------------------


def test_adam_zero_grad_leaves_param():
    p = np.array([0.5, -0.25])
    st_ = AdamState.like(p)
    adam_step(st_, p, np.zeros(2), 0)
    np.testing.assert_array_equal(p, [0.5, -0.25])


def test_adam_one_step_hand_values():
    g = 0.37
    p = np.array([1.0])
    st_ = AdamState.like(p)
    adam_step(st_, p, np.array([g]), 0)
    assert math.isclose(st_.m[0], 0.1 * g, rel_tol=1e-12)
    assert math.isclose(st_.v[0], 0.001 * g * g, rel_tol=1e-12)
    # bias-corrected m_hat / sqrt(v_hat) = g / |g|
    assert math.isclose(p[0], 1.0 - 1e-3 * g / (abs(g) + 1e-8), rel_tol=1e-12)


def test_adam_lr_schedule_and_shapes():
    st_ = AdamState.like(np.zeros(2))
    assert st_.lr(0) == 1e-3
    assert math.isclose(st_.lr(10), 1e-3 * 0.95**10)
    with pytest.raises(ShapeMismatch):
        adam_step(st_, np.zeros(2), np.zeros(3), 0)


def test_adam_two_steps_against_reference():
    p = np.array([0.2])
    st_ = AdamState.like(p)
    m = v = 0.0
    ref = 0.2
    for t, g in enumerate([0.5, -1.5], start=1):
        adam_step(st_, p, np.array([g]), 1)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 1e-3 * 0.95 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert math.isclose(p[0], ref, rel_tol=1e-12)


# --- histograms ---------------------------------------------------------------------


def test_histogram_all_zero_weights():
    cw = ConstrainedWeights(np.zeros(10))
    centers, pre, post = histogram_snapshot(cw, 100, nu=1.0)
    width = centers[1] - centers[0]
    assert len(centers) == 100 and math.isclose(width, 0.03)
    # all mass in one bin touching 0, and one bin containing -1
    assert np.isclose(pre.max() * width, 1.0) and abs(centers[np.argmax(pre)]) <= width
    assert np.isclose(post.max() * width, 1.0) and abs(centers[np.argmax(post)] + 1) <= width / 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_post_histogram_only_at_plus_minus_one(seed):
    cw = ConstrainedWeights(np.random.default_rng(seed).uniform(-1, 1, 50))
    centers, pre, post = histogram_snapshot(cw, 100, nu=3.0)
    width = centers[1] - centers[0]
    near = (np.abs(np.abs(centers) - 1) <= width)
    assert post[~near].sum() == 0
    assert math.isclose(post.sum() * width, 1.0) and math.isclose(pre.sum() * width, 1.0)


# --- training ------------------------------------------------------------------------


def test_toy_training_accuracy(toy_run):
    model, data, result = toy_run
    assert result.metrics[-1].train_acc >= 0.95
    assert result.metrics[0].nu == 1.0 and result.metrics[-1].nu == 1000.0
    assert model.nu_final == 1000.0


def test_soft_weights_end_near_binary(toy_run):
    model, _, _ = toy_run
    for layer in model.weighted:
        assert mass_near_binary(layer.weights, 1000.0) >= 0.95


def test_freeze_gap_on_toy_task(toy_run):
    model, data, _ = toy_run
    x = data.val.tensor()
    changed = np.mean(model.predict(x, 1000.0) != model.predict(x, 1000.0, binary=True))
    assert changed <= 0.005


def test_histogram_rows_recorded(toy_run):
    _, _, result = toy_run
    layers = {r[0] for r in result.histograms}
    assert layers == {"dense0", "dense3", "dense6"}
    assert len(result.histograms) == 3 * 30 * 100


def test_training_is_deterministic():
    a = train_toy(seed=3, epochs=5)[2]
    b = train_toy(seed=3, epochs=5)[2]
    assert [m.row() for m in a.metrics] == [m.row() for m in b.metrics]


def test_hard_modes_keep_latent_weights_clipped():
    for mode in ("HardSTE", "HardSTEWithAlpha"):
        model = train_toy(seed=1, mode=mode, epochs=5)[0]
        assert all(np.abs(l.weights.P).max() <= 1.0 for l in model.weighted)


def test_soft_beats_hard_in_most_seeds():
    wins = 0
    for seed in range(10):
        soft = train_toy(seed, "Soft")[2].final_val_acc
        hard = train_toy(seed, "HardSTE")[2].final_val_acc
        wins += soft >= hard
    assert wins >= 7


def test_non_finite_loss_aborts():
    model = build_model(TOY_ARCH, (2,), 2)
    data = load_dataset(n=200)
    model.weighted[0].weights.P[0, 0] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        train(model, data, NuSchedule.for_training(2), TrainConfig(epochs=2))
    assert info.value.epoch == 0 and info.value.batch == 0
