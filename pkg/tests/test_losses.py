import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from transnetr.losses import bce_dice_loss, bce_loss, dice_loss
from transnetr.tensor import Tensor


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def test_half_prediction_bce_is_ln2():
    target = (np.random.default_rng(0).random((2, 1, 8, 8)) < 0.3).astype(np.float64)
    assert bce_loss(T(np.full(target.shape, 0.5)), T(target)).item() == pytest.approx(math.log(2), abs=1e-15)


def test_perfect_prediction_dice_term():
    target = np.ones((1, 1, 64, 64))
    assert dice_loss(T(np.full(target.shape, 1 - 1e-6)), T(target)).item() < 1e-3
    # pred at the clamp level on a matching mask: BCE is at the clamp floor
    pred = np.where(target > 0, 1 - 1e-7, 1e-7)
    assert bce_loss(T(pred), T(target)).item() == pytest.approx(-math.log(1 - 1e-7), rel=1e-6)


def test_empty_mask_and_empty_prediction_give_zero_dice():
    assert dice_loss(T(np.zeros((2, 1, 4, 4))), T(np.zeros((2, 1, 4, 4)))).item() == 0.0


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 9))
def test_matches_scalar_recomputation(seed, n, side):
    r = np.random.default_rng(seed)
    pred = r.uniform(1e-9, 1 - 1e-9, (n, 1, side, side))
    target = (r.random((n, 1, side, side)) < 0.5).astype(np.float64)
    got = bce_dice_loss(T(pred), T(target)).item()
    assert got == pytest.approx(oracles.scalar_bce_dice(pred, target), rel=1e-12)


@given(st.integers(0, 10_000))
def test_loss_is_non_negative(seed):
    r = np.random.default_rng(seed)
    pred = r.random((2, 1, 6, 6))
    target = (r.random((2, 1, 6, 6)) < 0.5).astype(np.float64)
    assert bce_dice_loss(T(pred), T(target)).item() >= 0


def test_loss_shrinks_as_prediction_approaches_target():
    target = (np.random.default_rng(1).random((1, 1, 8, 8)) < 0.5).astype(np.float64)
    losses = [bce_dice_loss(T(np.abs(target - d)), T(target)).item() for d in (0.4, 0.1, 1e-3, 1e-6)]
    assert losses == sorted(losses, reverse=True) and losses[-1] < 1e-3


def test_weights_scale_terms():
    r = np.random.default_rng(2)
    pred, target = T(r.random((1, 1, 5, 5))), T((r.random((1, 1, 5, 5)) < 0.5).astype(float))
    combo = bce_dice_loss(pred, target, bce_weight=2.0, dice_weight=0.5).item()
    assert combo == pytest.approx(2 * bce_loss(pred, target).item() + 0.5 * dice_loss(pred, target).item())


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape mismatch"):
        bce_dice_loss(T(np.full((1, 1, 4, 4), 0.5)), T(np.zeros((1, 1, 4, 5))))


def test_non_binary_target_rejected():
    with pytest.raises(ValueError, match="binary"):
        bce_dice_loss(T(np.full((1, 1, 2, 2), 0.5)), T(np.full((1, 1, 2, 2), 0.3)))
