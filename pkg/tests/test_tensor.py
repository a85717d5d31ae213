import gc
import weakref

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from transnetr import functional as F
from transnetr.tensor import Tensor, _topological_order, no_grad


def test_sum_backward_is_all_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_square_sum_gradient_by_hand():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2).backward()


def test_fan_out_accumulates():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    y = x * 3
    (y + y * y).sum().backward()
    # d/dx (3x + 9x^2) = 3 + 18x
    np.testing.assert_allclose(x.grad, 3 + 18 * np.array([1.0, -2.0]))


def test_leaf_grad_accumulates_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    x.sum().backward()
    (x * 2).sum().backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_grad_shape_matches_data_with_broadcasting():
    a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    b = Tensor(np.ones((3, 1)), requires_grad=True)
    (a * b).sum().backward()
    assert a.grad.shape == a.shape
    assert b.grad.shape == b.shape
    np.testing.assert_array_equal(b.grad, np.full((3, 1), 8.0))


def test_every_reachable_requires_grad_tensor_gets_grad():
    rng = np.random.default_rng(0)
    leaves = [Tensor(rng.standard_normal((3, 3)), requires_grad=True) for _ in range(4)]
    frozen = Tensor(rng.standard_normal((3, 3)))
    out = ((leaves[0] @ leaves[1]) * frozen + leaves[2].exp() - leaves[3] ** 2).sum()
    out.backward()
    assert all(leaf.grad is not None and leaf.grad.shape == (3, 3) for leaf in leaves)
    assert frozen.grad is None


def test_topological_order_inputs_precede_outputs():
    a = Tensor(np.ones(3), requires_grad=True)
    b = a * 2
    c = b + a
    d = (c * b).sum()
    order = _topological_order(d)
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        for p in t._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(t)]
    assert order[-1] is d and order[0] is a


def test_deep_chain_does_not_hit_recursion_limit():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def test_graph_is_released_after_backward():
    x = Tensor(np.ones(4), requires_grad=True)
    mid = x * 2
    ref = weakref.ref(mid)
    loss = (mid * mid).sum()
    del mid
    loss.backward()
    del loss
    gc.collect()
    assert ref() is None


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad and y._parents == ()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_result_raises():
    with pytest.raises(FloatingPointError):
        Tensor(np.array([0.0])).log()


def test_int_input_defaults_to_single_precision_and_float64_is_kept():
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64


@given(
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4), elements=st.floats(-3, 3)),
    st.floats(-2, 2),
    st.floats(-2, 2),
)
def test_backward_is_linear(x, a, b):
    """grad(a·f + b·g) == a·grad(f) + b·grad(g) on a shared input."""

    def f(t):
        return (F.sigmoid(t) * t).sum()

    def g(t):
        return (t * t * t).sum()

    t1 = Tensor(x, requires_grad=True)
    (f(t1) * a + g(t1) * b).backward()
    t2 = Tensor(x, requires_grad=True)
    f(t2).backward()
    gf = t2.grad.copy()
    t3 = Tensor(x, requires_grad=True)
    g(t3).backward()
    np.testing.assert_allclose(t1.grad, a * gf + b * t3.grad, rtol=1e-10, atol=1e-10)


OPS_ON_BOUNDED = [
    ("conv2d", lambda x: F.conv2d(x, Tensor(np.full((2, 3, 3, 3), 0.5)), None, 1, 1)),
    ("batchnorm_train", lambda x: F.batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), True)),
    ("layernorm", lambda x: F.layernorm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))),
    ("leaky_relu", lambda x: F.leaky_relu(x)),
    ("sigmoid", F.sigmoid),
    ("gelu", F.gelu),
    ("softmax", F.softmax),
    ("upsample", F.bilinear_upsample2x),
    ("maxpool", lambda x: F.maxpool2d(x, 3, 2, 1)),
    ("gaussian", lambda x: (-(x * x)).exp()),
]


@pytest.mark.parametrize("name,op", OPS_ON_BOUNDED, ids=[n for n, _ in OPS_ON_BOUNDED])
@given(x=hnp.arrays(np.float64, (2, 3, 5, 5), elements=st.floats(-1e3, 1e3)))
def test_finite_inputs_in_range_give_finite_outputs(name, op, x):
    out = op(Tensor(x))
    assert np.all(np.isfinite(out.data))
