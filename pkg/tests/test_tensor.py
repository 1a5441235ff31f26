import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scenafuse.Errors import DimensionError, ScenaFuseError
from scenafuse.Tensor import (ComputationTape, Tensor, add, backward, concat, count_multiply_adds, cross_entropy,
                              dropout, elementwise, grad_check, layer_norm, mask_keys, matmul, mul, no_grad,
                              sigmoid, slice_axis, softmax, split, stack, sum, take, tanh)

TOLERANCE = 1e-6

finite = st.floats(min_value=-30.0, max_value=30.0, allow_nan=False, allow_infinity=False)


def leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def weighted(x, weights):
    return sum(mul(x, Tensor(weights)))


def test_add_broadcasts_rows_and_columns(rng):
    a, row, col = leaf(rng, (4, 3)), leaf(rng, (1, 3)), leaf(rng, (4, 1))
    w = rng.normal(size=(4, 3))
    assert grad_check(lambda: weighted(add(add(a, row), col), w), [a, row, col]) < TOLERANCE


def test_broadcast_is_trailing_axis_only(rng):
    with pytest.raises(DimensionError):
        add(leaf(rng, (4, 3)), leaf(rng, (2, 3)))
    with pytest.raises(DimensionError):
        mul(leaf(rng, (4, 3)), leaf(rng, (3,)))


def test_matmul_gradients_and_batch(rng):
    a, b = leaf(rng, (2, 3, 4)), leaf(rng, (2, 4, 5))
    w = rng.normal(size=(2, 3, 5))
    assert grad_check(lambda: weighted(matmul(a, b), w), [a, b]) < TOLERANCE
    with pytest.raises(DimensionError):
        matmul(leaf(rng, (3, 4)), leaf(rng, (3, 4)))


@pytest.mark.parametrize("axis", [0, 1])
def test_softmax_gradient(rng, axis):
    x = leaf(rng, (4, 5))
    w = rng.normal(size=(4, 5))
    assert grad_check(lambda: weighted(softmax(x, axis=axis), w), [x]) < TOLERANCE


@given(arrays(np.float64, (3, 6), elements=finite))
def test_softmax_slices_are_distributions(values):
    y = softmax(Tensor(values), axis=1).data
    assert np.all(y >= 0.0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_survives_huge_scores():
    y = softmax(Tensor([[1e4, 0.0, -1e4]]), axis=1).data
    assert np.all(np.isfinite(y))
    assert y[0, 0] == pytest.approx(1.0)


def test_layer_norm_gradient(rng):
    x, gain, bias = leaf(rng, (3, 6)), leaf(rng, (6,)), leaf(rng, (6,))
    w = rng.normal(size=(3, 6))
    assert grad_check(lambda: weighted(layer_norm(x, gain, bias), w), [x, gain, bias]) < TOLERANCE


@settings(max_examples=50)
@given(arrays(np.float64, (2, 8), elements=st.floats(min_value=-10, max_value=10)))
def test_layer_norm_rows_are_standardised(values):
    y = layer_norm(Tensor(values), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-9)
    assert np.all(y.std(axis=1) <= 1.0 + 1e-9)


def test_cross_entropy_gradient_and_value(rng):
    logits = leaf(rng, (4, 3))
    labels = [0, 2, 1, 2]
    assert grad_check(lambda: cross_entropy(logits, labels), [logits]) < TOLERANCE
    uniform = cross_entropy(Tensor(np.zeros((2, 3))), [0, 1]).item()
    assert uniform == pytest.approx(np.log(3.0))


def test_cross_entropy_rejects_bad_labels(rng):
    with pytest.raises(DimensionError):
        cross_entropy(leaf(rng, (2, 3)), [0, 3])
    with pytest.raises(DimensionError):
        cross_entropy(leaf(rng, (2, 3)), [0])


def test_mask_keys_removes_padded_weight(rng):
    scores = leaf(rng, (2, 3, 4))
    weights = softmax(mask_keys(scores, [1, 1, 0, 0]), axis=-1).data
    assert np.all(weights[..., 2:] == 0.0)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0)
    w = rng.normal(size=(2, 3, 4))
    assert grad_check(lambda: weighted(softmax(mask_keys(scores, [1, 0, 1, 1]), axis=-1), w), [scores]) < TOLERANCE


def test_concat_and_split_are_inverse(rng):
    a, b = leaf(rng, (2, 3)), leaf(rng, (4, 3))
    joined = concat(a, b, axis=0)
    head, tail = split(joined, 2, axis=0)
    np.testing.assert_array_equal(head.data, a.data)
    np.testing.assert_array_equal(tail.data, b.data)
    wa, wb = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
    backward(add(weighted(head, wa), weighted(tail, wb)))
    np.testing.assert_array_equal(a.grad, wa)
    np.testing.assert_array_equal(b.grad, wb)
    w = rng.normal(size=(3, 6))
    assert grad_check(lambda: weighted(concat(a, b, axis=0).T, w), [a, b]) < TOLERANCE
    with pytest.raises(DimensionError):
        concat(a, leaf(rng, (2, 4)), axis=0)


def test_take_scatter_adds_repeated_rows(rng):
    table = leaf(rng, (5, 3))
    out = take(table, [1, 1, 4])
    backward(sum(out))
    np.testing.assert_array_equal(table.grad[1], 2.0)
    np.testing.assert_array_equal(table.grad[0], 0.0)
    with pytest.raises(DimensionError):
        take(table, [5])


def test_stack_and_slice(rng):
    parts = [leaf(rng, (3,)) for _ in range(4)]
    w = rng.normal(size=(2, 3))
    assert grad_check(lambda: weighted(slice_axis(stack(parts), 1, 3), w), parts) < TOLERANCE
    with pytest.raises(DimensionError):
        slice_axis(parts[0], 2, 5)


def test_elementwise_registry(rng):
    x = leaf(rng, (2, 2))
    np.testing.assert_array_equal(elementwise(x, "tanh").data, tanh(x).data)
    assert sigmoid(Tensor([0.0])).data[0] == 0.5
    with pytest.raises(ScenaFuseError):
        elementwise(x, "gelu")


def test_no_grad_records_nothing(rng):
    x = leaf(rng, (2, 2))
    with no_grad():
        y = tanh(x)
    assert not y.requires_grad and y.is_leaf
    assert tanh(x).requires_grad


def test_tape_is_topological(rng):
    x = leaf(rng, (2, 2))
    y = tanh(x)
    loss = sum(mul(y, y))
    tape = ComputationTape.record(loss)
    order = {id(node): i for i, node in enumerate(tape)}
    for node in tape:
        for parent in node._parents:
            assert order[id(parent)] < order[id(node)]
    assert list(tape)[-1] is loss


def test_leaf_gradients_accumulate(rng):
    x = leaf(rng, (3,))
    backward(sum(x))
    backward(sum(x))
    np.testing.assert_array_equal(x.grad, 2.0)


def test_backward_needs_a_scalar(rng):
    with pytest.raises(DimensionError):
        backward(tanh(leaf(rng, (2,))))
    with pytest.raises(DimensionError):
        leaf(rng, (2,)).item()


def test_dropout(rng):
    x = leaf(rng, (50, 50))
    assert dropout(x, 0.1, None) is x
    assert dropout(x, 0.0, rng) is x
    dropped = dropout(x, 0.5, np.random.default_rng(0)).data
    kept = dropped != 0.0
    np.testing.assert_allclose(dropped[kept], 2.0 * x.data[kept])
    with pytest.raises(ScenaFuseError):
        dropout(x, 1.0, rng)


def test_multiply_add_counter(rng):
    with count_multiply_adds() as counter:
        matmul(leaf(rng, (3, 4)), leaf(rng, (4, 5)))
    assert counter.total == 3 * 4 * 5
    matmul(leaf(rng, (3, 4)), leaf(rng, (4, 5)))
    assert counter.total == 60


def test_scalar_operators(rng):
    x = leaf(rng, (2, 3))
    np.testing.assert_allclose((1.0 - x).data, 1.0 - x.data)
    np.testing.assert_allclose((x / 4).data, x.data / 4)
    np.testing.assert_allclose((-x + 2).data, 2 - x.data)
    with pytest.raises(DimensionError):
        x / x
