import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqmargin.datamodel import (make_dataset, make_fig1_toy, make_fig3_dataset, make_nonseparable,
                                 sample_2d_tasks, three_task_2d_generator)
from seqmargin.geometry import (CertificateError, NotSeparableError, b_lower_bound, exact_b,
                                iterate_ball_radius_sq, joint_minimizer, max_margin_certificate,
                                nonsep_certificate, nonseparability_coefficient_b,
                                residual_target_w_tilde, sampled_strong_convexity,
                                separability_check, strong_convexity_on_ball, task_max_margin)
from seqmargin.losses import LOGISTIC, joint_gradient, joint_hessian, task_gradient


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def test_toy_certificate():
    c = max_margin_certificate(make_fig1_toy())
    assert np.allclose(c.w_hat, [1, 0, 0], atol=1e-12)
    assert c.phi == pytest.approx(1.0) and c.theta is None
    assert c.support == (0, 1, 2, 3) and c.task_support == ((0, 1), (2, 3))
    # four support rows in R^3: duals exist but are not unique
    assert c.positive_duals and not c.non_degenerate and c.sv_span_full
    assert np.allclose(c.alpha @ make_fig1_toy().X, c.w_hat)


def test_toy_task_directions():
    ds = make_fig1_toy()
    assert np.allclose(task_max_margin(ds, 0).direction, _unit([10, 1, 3]), atol=1e-9)
    assert np.allclose(task_max_margin(ds, 1).direction, _unit([10, 3, 1]), atol=1e-9)


def test_six_point_certificate():
    c = max_margin_certificate(make_fig3_dataset("contradicting"))
    assert np.allclose(c.w_hat, [1, 0]) and c.support == (0, 3)
    assert c.theta == pytest.approx(1.1) and c.non_degenerate
    assert c.task_support == ((0,), (3,))
    assert np.allclose(c.alpha[[0, 3]], [0.5, 0.5])


def test_three_task_2d_direction():
    c = max_margin_certificate(sample_2d_tasks(three_task_2d_generator(0)))
    assert np.allclose(c.direction, _unit([1, 1]), atol=1e-9)
    assert c.phi == pytest.approx(0.6 * math.sqrt(2), rel=1e-9)


def test_not_separable():
    ds = make_dataset([[1.0, 0.0], [-1.0, 0.0]])
    ok, w = separability_check(ds)
    assert not ok and w is None
    with pytest.raises(NotSeparableError):
        max_margin_certificate(ds)


def test_single_point_phi():
    c = max_margin_certificate(make_dataset([[2.0, 0.0]]))
    assert c.phi == pytest.approx(2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_b_refined_matches_exact_and_bound_is_below(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 4))
    ds = make_dataset(rng.normal(size=(int(rng.integers(3, 9)), d)))
    ex = exact_b(ds)
    assert b_lower_bound(ds, 720) <= ex + 1e-12
    b = nonseparability_coefficient_b(ds, resolution=720)
    assert b >= ex - 1e-12
    if d == 2:
        assert b == pytest.approx(ex, abs=1e-9)


def test_b_zero_when_separable():
    assert exact_b(make_fig1_toy()) == 0.0
    assert nonseparability_coefficient_b(make_fig3_dataset()) == 0.0


def test_b_hand_value():
    # rows (1,0) and (-1,0): any unit v=(c,s) gives |c|, minimised at c=0 -> 0;
    # add (0,1),(0,-1): objective |c| + |s| >= 1 with equality on the axes
    ds = make_dataset([[1, 0], [-1, 0], [0, 1], [0, -1]])
    assert exact_b(ds) == pytest.approx(1.0)
    assert nonseparability_coefficient_b(ds) == pytest.approx(1.0)


def test_joint_minimizer_and_certificate():
    ds = make_nonseparable(1.0, seed=2)
    nc = nonsep_certificate(ds)
    assert np.linalg.norm(joint_gradient(LOGISTIC, ds, nc.w_star)) < 1e-12
    assert nc.eta == pytest.approx(1 / (2 * math.sqrt(2) * nc.B))
    V = sum(np.sum(task_gradient(LOGISTIC, ds, m, nc.w_star) ** 2) / nc.beta_m[m]
            for m in range(ds.M))
    assert nc.V_star == pytest.approx(V)
    r2 = iterate_ball_radius_sq(nc.b, 1.0, nc.loss_star, np.linalg.norm(nc.w_star), nc.eta, 1,
                                nc.B, nc.V_star)
    assert nc.radius_sq == pytest.approx(r2)
    # curvature bound at the centre never exceeds the true smallest Hessian eigenvalue
    assert nc.mu <= np.linalg.eigvalsh(joint_hessian(LOGISTIC, ds, nc.w_star))[0]


def test_closed_form_mu_below_sampled_cover():
    ds = make_nonseparable(0.8, seed=5)
    w = joint_minimizer(ds)
    for r in (0.1, 1.0, 3.0):
        assert strong_convexity_on_ball(ds, LOGISTIC, w, r) <= \
            sampled_strong_convexity(ds, LOGISTIC, w, r, n=2000) + 1e-15


def test_certificate_errors():
    with pytest.raises(CertificateError):
        nonsep_certificate(make_fig3_dataset())
    with pytest.raises(CertificateError):
        nonsep_certificate(make_dataset([[1.0, 0.0], [-1.0, 0.0]]))   # rank 1


@pytest.mark.parametrize("make", [make_fig1_toy, lambda: make_fig3_dataset("aligned")])
@pytest.mark.parametrize("eta", [0.01, 0.5])
def test_w_tilde_stationarity(make, eta):
    ds = make()
    c = max_margin_certificate(ds)
    w0 = np.arange(ds.d, dtype=float)
    wt = residual_target_w_tilde(ds, c, eta, w0)
    XS = ds.X[list(c.support)]
    alpha = eta * np.exp(-XS @ wt)
    assert np.allclose(alpha @ XS, c.w_hat, atol=1e-10)
    # no movement outside the support span
    U, s, _ = np.linalg.svd(XS.T, full_matrices=False)
    Q = U[:, s > 1e-10]
    assert np.allclose((np.eye(ds.d) - Q @ Q.T) @ (wt - w0), 0.0)


def test_w_tilde_toy_value():
    c = max_margin_certificate(make_fig1_toy())
    wt = residual_target_w_tilde(make_fig1_toy(), c, 0.01)
    # symmetric support forces w~ = (s, 0, 0) with 4 eta e^{-s} = 1
    assert np.allclose(wt, [math.log(0.04), 0, 0], atol=1e-9)
