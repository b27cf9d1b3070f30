import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqmargin.convex import Polyhedron
from seqmargin.datamodel import (make_c3_toy, make_dataset, make_fig1_toy, make_fig3_dataset,
                                 sample_2d_tasks, three_task_2d_generator)
from seqmargin.geometry import max_margin_certificate
from seqmargin.losses import LOGISTIC, joint_loss, task_gradient, task_losses
from seqmargin.trainer import (DivergenceError, GuardError, OrderingSchedule, TrainConfig,
                               _snapshot_stages, guard_eta, parse_eta, run_joint_gd,
                               run_sequential_gd, run_smm)


def test_schedules():
    c = OrderingSchedule("cyclic", 3)
    assert c.tasks(7).tolist() == [0, 1, 2, 0, 1, 2, 0]
    r = OrderingSchedule("random", 4, seed=11)
    a = r.tasks(50)
    assert a.tolist() == OrderingSchedule("random", 4, seed=11).tasks(50).tolist()
    assert r.task_at(37) == a[37]
    assert set(a) <= set(range(4)) and len(set(a)) > 1
    with pytest.raises(ValueError):
        OrderingSchedule("random", 2)


def test_config_validation_and_eta_parsing():
    with pytest.raises(ValueError):
        TrainConfig(stages=3, cycles=2)
    with pytest.raises(ValueError):
        TrainConfig(cycles=1, K=0)
    with pytest.raises(ValueError):
        TrainConfig(cycles=1, eta=-1.0)
    assert parse_eta("auto:0.5") == ("auto", 0.5)
    assert parse_eta("auto") == ("auto", 0.9)
    assert parse_eta(0.1) == ("fixed", 0.1)


def test_guard_formulas():
    ds = make_fig3_dataset()
    c = max_margin_certificate(ds)
    phi, s, b, K, M = c.phi, c.sigma_max, 0.25, 10, 2
    assert guard_eta("T3.1", ds, K=K, cert=c) == pytest.approx(phi**2 / (2*K*b*s**3*(M*phi + s)))
    assert guard_eta("T3.3", ds, K=K, cert=c) == pytest.approx(phi**2 / (4*K*b*s**3*(M*phi + s)))
    assert guard_eta("T4.1", ds, K=K, cert=c) == pytest.approx(2 * phi**2 / (b * s**4))
    with pytest.raises(GuardError):
        guard_eta("T5.2", ds)
    with pytest.raises(GuardError):
        guard_eta("T9.9", ds)


def _reference_loop(ds, K, eta, tasks, w0):
    w = np.array(w0, float)
    out = []
    for m in tasks:
        for _ in range(K):
            w = w - eta * task_gradient(LOGISTIC, ds, int(m), w)
        out.append(w.copy())
    return out


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.sampled_from(["cyclic", "random"]))
def test_seqgd_matches_reference_loop(seed, K, kind):
    rng = np.random.default_rng(seed)
    ds = make_dataset(rng.normal(size=(6, 2)), tasks=[0, 1, 2, 0, 1, 2])
    w0 = rng.normal(size=2)
    sched = OrderingSchedule(kind, 3, seed if kind == "random" else None)
    run = run_sequential_gd(ds, TrainConfig(K=K, stages=9, eta=0.05, w0=w0), sched)
    ref = _reference_loop(ds, K, 0.05, sched.tasks(9), w0)
    for t in range(9):
        assert np.allclose(run.end_weight(t), ref[t], rtol=0, atol=1e-13)
        assert np.allclose(run.task_loss_end[t], task_losses(LOGISTIC, ds, ref[t]))
    assert np.array_equal(run.end_weight(-1), w0)
    assert run.initial_loss == pytest.approx(joint_loss(LOGISTIC, ds, w0))


def test_step_recording_and_square_sum():
    ds = make_c3_toy()
    run = run_sequential_gd(ds, TrainConfig(K=3, cycles=2, eta=0.01, record_steps=True),
                            OrderingSchedule("cyclic", 5))
    assert run.step_loss.shape == (10, 4)
    assert np.allclose(run.step_loss[:, -1], run.joint_loss_end)
    assert np.allclose(run.step_loss[1:, 0], run.step_loss[:-1, -1])
    assert np.all(np.diff(run.sq_step_sum) >= 0)


def test_single_task_seqgd_equals_joint_gd():
    ds = make_fig3_dataset()
    cfg = TrainConfig(K=4, stages=6, eta=0.01)
    a = run_joint_gd(ds, cfg)
    one = make_dataset(ds.X)
    b = run_sequential_gd(one, TrainConfig(K=4, stages=12, eta=0.01), OrderingSchedule("cyclic", 1))
    assert np.array_equal(a.final_w, b.end_weight(5))


def test_cycle_helpers():
    ds = make_fig3_dataset()
    run = run_sequential_gd(ds, TrainConfig(K=2, cycles=4, eta=0.01), OrderingSchedule("cyclic", 2))
    assert run.n_cycles == 4 and run.T == 8
    assert np.array_equal(run.cycle_start_weight(2), run.end_weight(3))
    losses = run.cycle_start_losses()
    assert losses[0] == pytest.approx(6 * math.log(2))
    assert losses[3] == pytest.approx(joint_loss(LOGISTIC, ds, run.end_weight(5)))


def test_divergence_aborts():
    ds = make_dataset([[1.0], [-3.0]])
    with pytest.raises(DivergenceError) as ei:
        run_sequential_gd(ds, TrainConfig(K=1, stages=200, eta=1e13), OrderingSchedule())
    assert ei.value.run is not None and ei.value.run.T < 200


def test_auto_eta_uses_guard():
    ds = make_fig3_dataset()
    run = run_sequential_gd(ds, TrainConfig(K=10, cycles=1, eta="auto:0.5", guard="T3.3"),
                            OrderingSchedule("cyclic", 2))
    assert run.eta == pytest.approx(0.5 * guard_eta("T3.3", ds, K=10))


def test_online_mode_needs_fixed_eta():
    online = sample_2d_tasks(three_task_2d_generator(1, 5), resample=True)
    with pytest.raises(GuardError):
        run_sequential_gd(online, TrainConfig(cycles=1), OrderingSchedule("cyclic", 3))
    run = run_sequential_gd(online, TrainConfig(cycles=2, eta=0.01), OrderingSchedule("cyclic", 3))
    assert run.T == 6 and np.all(np.isfinite(run.final_w))


def test_snapshot_thinning_keeps_cycle_ends():
    s = _snapshot_stages(10_000, 3, 100)
    assert set(range(2, 10_000, 3)) <= set(s.tolist())
    assert s[-1] == 9_999 and 0 in s


def test_smm_feasible_after_each_stage_and_limit():
    ds = make_fig1_toy()
    run = run_smm(ds, cycles=10)
    for t in range(run.T):
        m = run.stage_tasks[t]
        assert np.all(ds.task_X(m) @ run.end_weight(t) >= 1 - 1e-9)
    assert np.allclose(run.final_w, np.array([12, 1, 1]) / 11, atol=1e-4)
    P = Polyhedron(ds.X)
    assert np.all(P.A @ run.final_w >= 1 - 1e-4)
