import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from narrative_infill.nn.optim import Adam, OptimizerState, adam_step, clip_gradients, global_norm
from narrative_infill.nn.tensor import Tensor, backward


def test_clip_halves_norm_20():
    g = [np.array([12.0, 16.0])]  # norm 20
    clipped, norm = clip_gradients(g, 10.0)
    assert norm == 20.0
    np.testing.assert_array_equal(clipped[0], [6.0, 8.0])


def test_clip_leaves_small_norm():
    g = [np.array([3.0]), np.array([4.0])]  # norm 5
    clipped, norm = clip_gradients(g, 10.0)
    assert norm == 5.0
    for a, b in zip(clipped, g):
        np.testing.assert_array_equal(a, b)


grad_lists = st.lists(arrays(np.float64, st.integers(1, 6), elements=st.floats(-1e3, 1e3)), min_size=1, max_size=4)


@given(grad_lists, st.floats(1e-3, 100.0))
def test_clip_is_idempotent(grads, max_norm):
    once, _ = clip_gradients(grads, max_norm)
    twice, _ = clip_gradients(once, max_norm)
    for a, b in zip(once, twice):
        np.testing.assert_array_equal(a, b)
    assert global_norm(once) <= max_norm * (1 + 1e-9)


@pytest.mark.parametrize("g", [0.37, -5.0, 1e-3])
def test_adam_first_step_is_lr_sign(g):
    p = Tensor(np.array([1.0]))
    state = OptimizerState.for_params([p], lr=4e-4)
    adam_step([p], [np.array([g])], state)
    assert state.t == 1
    expected = 1.0 - 4e-4 * g / (abs(g) + 1e-8)
    assert p.data[0] == pytest.approx(expected, rel=0, abs=1e-15)
    assert p.data[0] == pytest.approx(1.0 - 4e-4 * np.sign(g), abs=1e-8)


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([0.5, -2.0]))
    state = OptimizerState.for_params([p])
    for _ in range(100):
        adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [0.5, -2.0])


def test_adam_minimizes_square():
    w = Tensor(np.array(1.0), requires_grad=True)
    opt = Adam([w], lr=4e-4, clip=10.0)
    for _ in range(5000):
        opt.zero_grad()
        backward(w * w)
        opt.step()
    assert abs(float(w.data)) < 1e-2


def test_adam_rejects_mismatched_shapes():
    p = Tensor(np.zeros(2))
    state = OptimizerState.for_params([p])
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(3)], state)
