import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stecformer import tensor as T
from stecformer.layers import Parameter
from stecformer.model import ModelConfig, Stecformer
from stecformer.tensor import Tensor, grad_check
from stecformer.training import (Adam, AdamState, EarlyStopping, LossWeights, TrainConfig,
                                 TrainingDiverged, WindowData, adam_step, joint_loss,
                                 loss_weights, train)


# ---------------------------------------------------------------- loss weights

def test_loss_weights_examples():
    assert loss_weights(1).lambdas == (1.0,)
    assert loss_weights(2).lambdas == (0.9, 1.0)
    assert loss_weights(4).lambdas == (0.7, 0.8, 0.9, 1.0)


@pytest.mark.parametrize("N", range(1, 11))
def test_loss_weights_properties(N):
    lam = loss_weights(N).lambdas
    assert len(lam) == N and lam[-1] == 1.0 and min(lam) > 0
    assert all(a < b for a, b in zip(lam, lam[1:]))


@pytest.mark.parametrize("N", [0, 11])
def test_loss_weights_range(N):
    with pytest.raises(ValueError):
        loss_weights(N)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights((0.5, 0.9))


# ---------------------------------------------------------------- joint loss

def test_joint_loss_arithmetic():
    # interval MSEs are exactly 0.5 and 1.0
    target = np.zeros((1, 4, 2))
    y1 = Tensor(np.array([[[1.0, 0.0]]]))
    y2 = Tensor(np.ones((1, 3, 2)))
    loss = joint_loss([y1, y2], target, loss_weights(2)).item()
    assert loss == 1.45


def test_joint_loss_perfect():
    y = np.random.default_rng(0).normal(size=(2, 6, 3))
    assert joint_loss([Tensor(y[:, :2]), Tensor(y[:, 2:])], y, (0.9, 1.0)).item() == 0.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 5, 2), elements=st.floats(-100, 100)),
       arrays(np.float64, (2, 5, 2), elements=st.floats(-100, 100)))
def test_joint_loss_nonnegative(a, b):
    assert joint_loss([Tensor(a[:, :1]), Tensor(a[:, 1:])], b, (0.9, 1.0)).item() >= 0.0


def test_joint_loss_mismatch():
    with pytest.raises(ValueError):
        joint_loss([Tensor(np.zeros((1, 2, 1)))], np.zeros((1, 3, 1)), (1.0,))
    with pytest.raises(ValueError):
        joint_loss([Tensor(np.zeros((1, 3, 1)))], np.zeros((1, 3, 1)), (0.9, 1.0))


def test_joint_loss_gradient_through_cascade():
    cfg = ModelConfig(V=2, T_in=8, T_pred=4, d_model=4, num_heads=2, kernel=3, C_in=2, C_mid=2,
                      C_out=2, interval_fractions=(0.5, 0.5), layers_per_stage=1)
    m = Stecformer(cfg, seed=0)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(1, 8, 2)), rng.normal(size=(1, 4, 2))
    assert grad_check(lambda: joint_loss(m.forward(x)[0], y, loss_weights(2)), m.parameters()) < 1e-4


# ---------------------------------------------------------------- Adam

def test_first_step_is_lr():
    p = Parameter(np.array([1.0]))
    cfg = TrainConfig()
    adam_step([p], [np.array([1.0])], AdamState.zeros_like([p]), cfg)
    # bias-corrected moments are both 1, so the step is lr / (1 + eps)
    assert p.data[0] == pytest.approx(0.999900000001, abs=1e-15)


def test_first_step_is_sign_like():
    p = Parameter(np.array([0.0, 0.0, 0.0]))
    adam_step([p], [np.array([1e-3, -50.0, 7.0])], AdamState.zeros_like([p]), TrainConfig(lr=0.1))
    np.testing.assert_allclose(p.data, [-0.1, 0.1, -0.1], rtol=1e-5)


def test_zero_gradient_is_noop_and_advances_time():
    p = Parameter(np.array([[1.0, -2.0]]))
    state = AdamState.zeros_like([p])
    adam_step([p], [np.zeros((1, 2))], state, TrainConfig())
    assert p.data.tolist() == [[1.0, -2.0]] and state.t == 1


def test_quadratic_converges_like_reference():
    x = Parameter(np.array(1.0))
    opt = Adam([x], TrainConfig(lr=1e-2))
    for _ in range(2000):
        opt.zero_grad()
        with T.Tape():
            loss = T.square(x)
        T.backward(loss)
        opt.step()
    assert abs(x.data) < 1e-3
    # frozen from a scalar pure-Python run of the same update rule
    assert float(x.data) == pytest.approx(-8.991984779230635e-44, abs=1e-12)


# ---------------------------------------------------------------- early stopping

def test_early_stopping_counter():
    es = EarlyStopping(patience=3)
    stops = []
    for epoch, v in enumerate([3, 2, 2.5, 2.6, 2.7], start=1):
        es.step(v, epoch)
        stops.append(es.should_stop)
    assert stops == [False, False, False, False, True]
    assert es.best == 2 and es.best_epoch == 2


def test_early_stopping_min_delta():
    es = EarlyStopping(patience=1, min_delta=1e-7)
    assert es.step(1.0, 1)
    assert not es.step(1.0 - 5e-8, 2)
    assert es.should_stop


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lr": 1e-3, "momentum": 0.9})
    assert TrainConfig.from_dict({"lr": 1e-3}).lr == 1e-3


# ---------------------------------------------------------------- loop

def sine_task(n=120, V=2, T_in=16, T_pred=8):
    t = np.arange(n + T_in + T_pred)
    series = np.stack([np.sin(2 * np.pi * t / 8 + k) for k in range(V)], axis=1)
    idx = np.arange(n)[:, None] + np.arange(T_in + T_pred)[None, :]
    block = series[idx]
    return block[:, :T_in], block[:, T_in:]


def tiny_model(seed=0):
    cfg = ModelConfig(V=2, T_in=16, T_pred=8, d_model=8, num_heads=2, kernel=5, C_in=4, C_mid=2,
                      C_out=2, interval_fractions=(0.5, 0.5), layers_per_stage=1)
    return Stecformer(cfg, seed=seed)


def sine_data():
    x, y = sine_task()
    return WindowData(x[:96], y[:96], x[96:], y[96:])


def test_training_loss_decreases_first_epochs():
    res = train(tiny_model(), sine_data(), TrainConfig(lr=1e-3, max_epochs=3))
    losses = [h["train_loss"] for h in res.history]
    assert len(losses) == 3 and losses[0] > losses[1] > losses[2]


def test_training_is_deterministic():
    cfg = TrainConfig(lr=1e-3, max_epochs=2, seed=4)
    a = train(tiny_model(1), sine_data(), cfg)
    b = train(tiny_model(1), sine_data(), cfg)
    assert a.history == b.history
    for k in a.best_state:
        np.testing.assert_array_equal(a.best_state[k], b.best_state[k])


def test_best_checkpoint_is_never_worse_than_history():
    m = tiny_model(2)
    res = train(m, sine_data(), TrainConfig(lr=3e-2, max_epochs=6, patience=2))
    vals = [h["val_loss"] for h in res.history]
    assert vals[res.best_epoch - 1] == min(vals)
    assert res.stopped_epoch == len(vals)
    from stecformer.training import evaluate_loss
    d = sine_data()
    assert evaluate_loss(m, d.val_x, d.val_y, loss_weights(2)) == pytest.approx(min(vals), rel=1e-12)


def test_divergence_reports_diagnostic():
    m = tiny_model(3)
    d = sine_data()
    d.train_x[0, 0, 0] = 1e300
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        with np.errstate(all="ignore"):
            train(m, d, TrainConfig(max_epochs=1))
