import numpy as np
import pytest

from skillstream.autodiff import Tensor
from skillstream.optim import SGD, Adam, make_optimizer


def test_sgd_basic_step():
    p = {"w": Tensor(np.array([1.0]), requires_grad=True)}
    SGD(lr=0.1).step(p, {"w": np.array([2.0])})
    assert p["w"].data[0] == pytest.approx(0.8)


def test_zero_gradient_leaves_params_unchanged():
    w = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    before = w.data.copy()
    Adam(lr=0.1).step({"w": w}, {"w": np.zeros(2)})
    assert np.array_equal(w.data, before)


def test_adam_first_step_magnitude_is_lr():
    # with g == 1 everywhere, bias correction makes the first update
    # lr * 1 / (1 + eps) in every coordinate
    lr = 5e-4
    w = Tensor(np.zeros(4), requires_grad=True)
    opt = Adam(lr=lr)
    opt.step({"w": w}, {"w": np.ones(4)})
    expected = lr * 1.0 / (1.0 + opt.eps * 1.0)
    assert np.allclose(-w.data, expected, rtol=1e-9)


def test_adam_sparse_updates_track_per_param_steps():
    a = Tensor(np.zeros(1), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam(lr=1e-3)
    opt.step({"a": a, "b": b}, {"a": np.ones(1)})
    opt.step({"a": a, "b": b}, {"a": np.ones(1), "b": np.ones(1)})
    assert opt.t["a"] == 2
    assert opt.t["b"] == 1
    # b's first step gets full bias correction despite starting later
    assert abs(b.data[0]) == pytest.approx(1e-3, rel=1e-6)


def test_nan_gradient_aborts_with_name():
    w = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ValueError, match="w"):
        Adam().step({"w": w}, {"w": np.array([1.0, np.nan])})


def test_gradient_shape_mismatch_rejected():
    w = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ValueError, match="shape"):
        SGD().step({"w": w}, {"w": np.zeros(3)})


def test_adam_state_round_trip():
    w = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam(lr=0.01)
    rng = np.random.default_rng(0)
    for _ in range(5):
        opt.step({"w": w}, {"w": rng.standard_normal(3)})
    arrays = {k: v.copy() for k, v in opt.state_arrays().items()}

    opt2 = Adam(lr=0.01)
    opt2.load_state_arrays(arrays)
    w1 = Tensor(w.data.copy(), requires_grad=True)
    w2 = Tensor(w.data.copy(), requires_grad=True)
    g = rng.standard_normal(3)
    opt.step({"w": w1}, {"w": g})
    opt2.step({"w": w2}, {"w": g})
    assert w1.data.tobytes() == w2.data.tobytes()


def test_make_optimizer_rejects_unknown():
    with pytest.raises(ValueError, match="unknown optimizer"):
        make_optimizer("lamb", 1e-3)
