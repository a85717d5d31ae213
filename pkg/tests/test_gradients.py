import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import gradcases
from transnetr import functional as F
from transnetr.gradcheck import finite_diff_check, relative_error
from transnetr.tensor import Tensor

CASES = gradcases.build_cases(0)
PAIRS = [(name, i) for name, (_, _, which) in CASES.items() for i in which]


@pytest.mark.parametrize("name,which", PAIRS, ids=[f"{n}-{i}" for n, i in PAIRS])
def test_op_gradient_matches_central_differences(name, which):
    fn, inputs, _ = CASES[name]
    f, x = gradcases._contract(fn, inputs, which)
    assert finite_diff_check(f, x) <= gradcases.TOL


@given(st.integers(0, 10_000))
def test_random_shapes_and_values(seed):
    for key, err in gradcases.run_all(seed).items():
        assert err <= gradcases.TOL, key


def test_bce_dice_loss_gradient_on_1x1x8x8():
    f, x = gradcases.bce_dice_case(3, (1, 1, 8, 8))
    assert finite_diff_check(f, x) <= 1e-4


def test_sum_has_zero_error():
    x = np.random.default_rng(0).standard_normal((3, 4))
    assert finite_diff_check(lambda t: t.sum(), x) < 1e-9


def test_sigmoid_sum_at_eps_1e5_is_within_1e6():
    x = np.random.default_rng(1).standard_normal((4, 6))
    assert finite_diff_check(lambda t: F.sigmoid(t).sum(), x, eps=1e-5) <= 1e-6


def test_broken_backward_is_caught():
    def wrong_square(t):
        # forward t², backward claims 3t
        return Tensor._make(t.data**2, (t,), lambda g: (g * 3 * t.data,), "wrong_square")

    x = np.random.default_rng(2).uniform(0.5, 2.0, (5,))
    assert finite_diff_check(lambda t: wrong_square(t).sum(), x) > 1e-2


def test_composite_conv_bn_leaky_graph():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((3, 2, 3, 3))
    gamma, beta = rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)
    r = rng.standard_normal((2, 3, 6, 6))

    def f(t):
        y = F.conv2d(t, Tensor(w), None, 1, 1)
        y = F.batchnorm2d(y, Tensor(gamma), Tensor(beta), np.zeros(3), np.ones(3), True)
        return (F.leaky_relu(y) * Tensor(r)).sum()

    assert finite_diff_check(f, rng.standard_normal((2, 2, 6, 6))) <= 1e-4


def test_eps_must_be_positive():
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: t.sum(), np.ones(2), eps=0)


def test_relative_error_denominator_floor():
    assert relative_error(np.array([0.0]), np.array([1e-10])) == pytest.approx(1e-2)
