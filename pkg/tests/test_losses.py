import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from seqmargin.datamodel import make_dataset, make_fig1_toy
from seqmargin.losses import (LOGISTIC, LossSpec, joint_gradient, joint_hessian, joint_loss,
                              loss_derivative, loss_second_derivative, loss_value,
                              smoothness_constants, task_gradient, task_loss, task_losses)

us = st.floats(-30, 30, allow_nan=False)


def test_logistic_values():
    assert loss_value(LOGISTIC, 0.0) == pytest.approx(math.log(2))
    assert loss_derivative(LOGISTIC, 0.0) == pytest.approx(-0.5)
    assert loss_second_derivative(LOGISTIC, 0.0) == pytest.approx(0.25)
    # stable far in both tails
    assert loss_value(LOGISTIC, 800.0) == pytest.approx(math.exp(-800.0), rel=1e-12)
    assert loss_value(LOGISTIC, -800.0) == pytest.approx(800.0)
    assert np.isfinite(loss_derivative(LOGISTIC, -1e4))


def test_unknown_kind():
    with pytest.raises(ValueError):
        LossSpec("hinge", 1.0, 1.0)


@given(us)
def test_derivatives_match_finite_differences(u):
    h = 1e-6
    fd1 = (loss_value(LOGISTIC, u + h) - loss_value(LOGISTIC, u - h)) / (2 * h)
    fd2 = (loss_derivative(LOGISTIC, u + h) - loss_derivative(LOGISTIC, u - h)) / (2 * h)
    assert loss_derivative(LOGISTIC, u) == pytest.approx(fd1, rel=1e-6, abs=1e-9)
    assert loss_second_derivative(LOGISTIC, u) == pytest.approx(fd2, rel=1e-5, abs=1e-9)


@given(us)
def test_shape_and_tail_sandwich(u):
    val = loss_value(LOGISTIC, u)
    d = loss_derivative(LOGISTIC, u)
    assert d < 0 and loss_second_derivative(LOGISTIC, u) <= LOGISTIC.beta
    assert val >= LOGISTIC.G * max(0.0, -u)
    # tail: (1 - e^{-u}) e^{-u} <= -l'(u) <= (1 + e^{-u}) e^{-u} for u >= u_bar
    if u >= LOGISTIC.u_bar:
        e = math.exp(-u)
        assert (1 - e) * e - 1e-15 <= -d <= (1 + e) * e + 1e-15
    assert val <= math.exp(-u) + 1e-15


def _rand_ds(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(7, 3))
    return make_dataset(X, rng.choice([-1, 1], 7), [0, 1, 2, 0, 1, 2, 2], M=3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), hnp.arrays(float, 3, elements=st.floats(-2, 2)))
def test_task_losses_sum_and_gradients(seed, w):
    ds = _rand_ds(seed)
    per = task_losses(LOGISTIC, ds, w)
    assert per.sum() == pytest.approx(joint_loss(LOGISTIC, ds, w))
    assert per[1] == pytest.approx(task_loss(LOGISTIC, ds, 1, w))
    g = sum(task_gradient(LOGISTIC, ds, m, w) for m in range(3))
    assert np.allclose(g, joint_gradient(LOGISTIC, ds, w))
    h = 1e-6
    fd = np.array([(joint_gradient(LOGISTIC, ds, w + h * e) - joint_gradient(LOGISTIC, ds, w - h * e))
                   / (2 * h) for e in np.eye(3)])
    assert np.allclose(fd, joint_hessian(LOGISTIC, ds, w), atol=1e-6)


def test_smoothness_constants_bound_task_hessians():
    ds = _rand_ds(3)
    sig, beta_m, B = smoothness_constants(LOGISTIC, ds)
    assert sig == pytest.approx(np.linalg.svd(ds.X, compute_uv=False)[0])
    assert B == pytest.approx(beta_m.sum())
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.normal(size=3)
        for m in range(3):
            sub = ds.subset(m)
            top = np.linalg.eigvalsh(joint_hessian(LOGISTIC, sub, w))[-1]
            assert top <= beta_m[m] + 1e-12


def test_dimension_and_task_errors():
    ds = make_fig1_toy()
    with pytest.raises(ValueError, match="dimension"):
        joint_loss(LOGISTIC, ds, np.zeros(2))
    with pytest.raises(IndexError):
        task_gradient(LOGISTIC, ds, 2, np.zeros(3))
