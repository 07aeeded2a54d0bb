import math

import numpy as np
import pytest

from lite_nvist.autodiff import Tensor
from lite_nvist.common import ConfigError, DimensionError
from lite_nvist.optim import Adam, OptimizerState, adam_step, lr_schedule


def test_schedule_boundaries():
    assert lr_schedule(0, 100, 4e-4) == pytest.approx(4e-4)
    assert lr_schedule(50, 100, 4e-4) == pytest.approx(2e-4)
    assert lr_schedule(100, 100, 4e-4) == 0.0
    assert lr_schedule(150, 100, 4e-4) == 0.0
    assert lr_schedule(25, 100, 1.0) == pytest.approx(0.5 * (1 + math.cos(math.pi / 4)))
    with pytest.raises(ConfigError):
        lr_schedule(0, 0, 1.0)


def test_schedule_is_monotone():
    values = [lr_schedule(s, 40, 1.0) for s in range(41)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_first_adam_step_moves_by_learning_rate(float64):
    p = Tensor(np.array([1.0, -1.0, 0.5]), requires_grad=True)
    state = OptimizerState()
    adam_step(["p"], [p], [np.array([0.3, -2.0, 1e-2])], state, [0.1])
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(p.data, [0.9, -0.9, 0.4], atol=1e-6)
    assert state.step == 1
    np.testing.assert_allclose(state.m["p"], 0.1 * np.array([0.3, -2.0, 1e-2]))


def test_adam_rejects_mismatched_gradients(float64):
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(DimensionError):
        adam_step(["p"], [p], [np.zeros(4)], OptimizerState(), [0.1])
    with pytest.raises(DimensionError):
        adam_step(["p"], [p], [np.zeros(3)], OptimizerState(), [])


def test_groups_use_their_own_learning_rate(float64):
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.ones(2)
    b.grad = np.ones(2)
    opt = Adam({"encoder": (0.01, [("a", a)]), "decoder_renderer": (0.1, [("b", b)])})
    opt.step(lr_scale=0.5)
    np.testing.assert_allclose(a.data, -0.005, atol=1e-7)
    np.testing.assert_allclose(b.data, -0.05, atol=1e-6)
    assert opt.base_lr("decoder_renderer") == 0.1


def test_frozen_parameters_are_skipped(float64):
    a = Tensor(np.zeros(2), requires_grad=False)
    a.grad = np.ones(2)
    b = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam({"encoder": (0.01, [("a", a)]), "decoder_renderer": (0.1, [("b", b)])})
    opt.step()
    np.testing.assert_array_equal(a.data, 0.0)
    assert "a" not in opt.state.m


def test_non_positive_learning_rate_is_rejected():
    with pytest.raises(ConfigError):
        Adam({"encoder": (0.0, [])})


def test_state_arrays_round_trip(float64, rng):
    p = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    p.grad = rng.normal(size=(2, 3))
    opt = Adam({"all": (0.1, [("w", p)])})
    opt.step()
    opt.step()
    arrays = opt.state_arrays()
    assert set(arrays) == {"adam_m/w", "adam_v/w", "meta/opt_step"}
    fresh = Adam({"all": (0.1, [("w", p)])})
    fresh.load_state_arrays(arrays)
    assert fresh.state.step == 2
    np.testing.assert_array_equal(fresh.state.v["w"], opt.state.v["w"])
    with pytest.raises(DimensionError):
        fresh.load_state_arrays({"adam_m/w": np.zeros((3, 2))})
    with pytest.raises(DimensionError):
        fresh.load_state_arrays({"adam_m/unknown": np.zeros((2, 3))})
