import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from narrative_infill.nn import tensor as T
from narrative_infill.nn.tensor import ShapeError, Tensor, backward, no_grad


def test_softmax_symmetric():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(2, 5))
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)


def test_dropout_eval_is_identity():
    x = Tensor(np.arange(6.0))
    assert T.dropout(x, 0.2, np.random.default_rng(0), training=False) is x


def test_dropout_train_keeps_expectation():
    x = Tensor(np.ones(200_000))
    out = T.dropout(x, 0.2, np.random.default_rng(0), training=True).data
    assert set(np.unique(out)) <= {0.0, 1.25}
    assert out.mean() == pytest.approx(1.0, abs=0.01)


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x)).data
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


def test_log_softmax_matches_log_of_softmax():
    x = np.random.default_rng(1).normal(size=(3, 4))
    np.testing.assert_allclose(T.log_softmax(Tensor(x)).data, np.log(T.softmax(Tensor(x)).data), atol=1e-14)


# --- cross entropy ----------------------------------------------------------

def test_cross_entropy_uniform():
    loss = T.cross_entropy(Tensor(np.zeros((1, 4))), [2], ignore_id=None)
    assert loss.item() == pytest.approx(math.log(4), abs=1e-15)
    assert loss.item() == pytest.approx(1.386294, abs=1e-6)


def test_cross_entropy_perfect_limit():
    logits = np.zeros((1, 4))
    logits[0, 1] = 60.0
    assert T.cross_entropy(Tensor(logits), [1], ignore_id=None).item() < 1e-25


def test_cross_entropy_pad_position_is_ignored():
    logits = np.array([[0.3, -1.2, 2.0, 0.1], [5.0, 0.0, 0.0, 0.0]])
    both = T.cross_entropy(Tensor(logits), [2, 0], ignore_id=0).item()
    # hand value for the single remaining position
    row = logits[0]
    expected = -(row[2] - math.log(sum(math.exp(v) for v in row)))
    assert both == pytest.approx(expected, abs=1e-14)


def test_cross_entropy_all_ignored_errors():
    with pytest.raises(ValueError, match="empty loss"):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 0], ignore_id=0)


# --- backward ---------------------------------------------------------------

def test_grad_of_sum_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
    backward(T.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))


def test_grad_of_product():
    x = Tensor(3.0, requires_grad=True)
    y = Tensor(-2.5, requires_grad=True)
    backward(x * y)
    assert x.grad == -2.5 and y.grad == 3.0


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_shared_node_accumulates():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    backward(y + y)
    assert x.grad == 8.0


def test_broadcast_gradient_is_reduced():
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    backward(T.sum(x + b))
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_wrt_gets_zero_grads_when_unused():
    x = Tensor(1.0, requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    grads = backward(x * 3.0, wrt=[x, unused])
    assert grads[0] == 3.0
    np.testing.assert_array_equal(grads[1], np.zeros(2))


def test_no_grad_records_nothing():
    x = Tensor(1.0, requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y._parents == ()
    assert T.is_grad_enabled()


def test_getitem_repeated_index_accumulates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    backward(T.sum(T.getitem(x, np.array([1, 1, 3]))))
    np.testing.assert_array_equal(x.grad, [0, 2, 0, 1])


def test_embedding_lookup_gradient():
    w = Tensor(np.zeros((5, 2)), requires_grad=True)
    backward(T.sum(T.embedding_lookup(w, np.array([[4, 4], [0, 1]]))))
    np.testing.assert_array_equal(w.grad[:, 0], [1, 1, 0, 0, 2])
