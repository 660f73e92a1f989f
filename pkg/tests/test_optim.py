import numpy as np
import pytest

from fskws import tensor as T
from fskws.optim import AdamState, adam_step
from fskws.tensor import Tape, Tensor


def param(values):
    return Tensor(np.array(values, dtype=np.float32), requires_grad=True)


def test_zero_gradient_leaves_params_unchanged():
    p = {"w": param([1.0, -2.0, 3.0])}
    before = p["w"].data.copy()
    state = AdamState()
    for _ in range(3):
        adam_step(p, {"w": np.zeros(3, np.float32)}, state)
    np.testing.assert_array_equal(p["w"].data, before)
    assert state.step == 3


def test_first_step_moves_by_lr_against_gradient_sign():
    p = {"w": param([0.0, 0.0, 0.0])}
    adam_step(p, {"w": np.array([3.0, -0.01, 200.0], np.float32)}, AdamState(), lr=0.1)
    np.testing.assert_allclose(p["w"].data, [-0.1, 0.1, -0.1], rtol=1e-5)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": param([1.0, 2.0])}, {"w": np.zeros(3, np.float32)}, AdamState())


def test_converges_on_quadratic():
    c = np.array([1.5, -2.0, 0.25], dtype=np.float32)
    p = {"x": param(np.zeros(3))}
    state = AdamState()
    for _ in range(200):
        with Tape() as tape:
            loss = T.sum(T.square(p["x"] - c))
        tape.backward(loss)
        adam_step(p, {"x": p["x"].grad}, state, lr=0.05)
    assert np.linalg.norm(p["x"].data - c) < 1e-2
