"""Named acceptance experiments; each returns a ``CriterionResult``."""
from __future__ import annotations

import filecmp
import math
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..convex import Polyhedron, active_set_oracle, min_norm_in_polyhedron, project_onto_polyhedron
from ..datamodel import (JointDataset, make_c3_toy, make_dataset, make_fig1_toy, make_fig3_dataset,
                         make_nonseparable, three_task_2d_generator, sample_2d_tasks)
from ..geometry import max_margin_certificate, nonsep_certificate, task_max_margin
from ..losses import LOGISTIC, joint_gradient, joint_loss, task_gradient, task_loss
from ..metrics import cycle_averaged_forgetting, direction_angle, report_T33, report_T34, report_T52
from ..trainer import OrderingSchedule, TrainConfig, guard_eta, run_sequential_gd, run_smm
from .config import validate_config
from .runner import run_experiment, save_result, worker_count


@dataclass
class CriterionResult:
    key: str
    title: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        parts = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.key}: {self.title} ({parts})"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)) and v and isinstance(v[0], float):
        return "[" + ", ".join(f"{x:.4g}" for x in v) + "]"
    return str(v)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# 1 ----------------------------------------------------------------------------------------
def margin_exactness() -> CriterionResult:
    ds = make_fig1_toy()
    errs = [
        float(np.max(np.abs(max_margin_certificate(ds).direction - [1, 0, 0]))),
        float(np.max(np.abs(task_max_margin(ds, 0).direction - _unit([10, 1, 3])))),
        float(np.max(np.abs(task_max_margin(ds, 1).direction - _unit([10, 3, 1])))),
    ]
    return CriterionResult("margin", "max-margin directions on the 3-D toy",
                           max(errs) <= 1e-6, {"max_err": errs})


# 2 ----------------------------------------------------------------------------------------
def smm_limit() -> CriterionResult:
    ds = make_fig1_toy()
    run = run_smm(ds, cycles=10)
    err = float(np.linalg.norm(run.final_w - np.array([12, 1, 1]) / 11))
    return CriterionResult("smm", "SMM limit after 10 cycles", err <= 1e-4,
                           {"final_w": run.final_w.tolist(), "err": err})


# 3 ----------------------------------------------------------------------------------------
def _bias_one(ds: JointDataset, T=300, K=1000):
    cert = max_margin_certificate(ds)
    cfg = TrainConfig(K=K, stages=T, eta="auto:0.9", guard="T3.1")
    run = run_sequential_gd(ds, cfg, OrderingSchedule("cyclic", ds.M))
    sine = {t: direction_angle(run.end_weight(t), cert.w_hat) for t in (10, T - 1)}
    nw = np.linalg.norm(cert.w_hat)
    ratios = [np.linalg.norm(run.end_weight(t)) / (math.log(t) * nw) for t in range(T // 2, T)]
    norm_ok = bool(min(ratios) >= 0.5 and max(ratios) <= 2.0)
    ok = sine[T - 1] < 0.05 and sine[T - 1] < sine[10] and norm_ok
    return ok, {"eta": run.eta, "sine_t10": sine[10], "sine_final": sine[T - 1],
                "norm_ratio_min": float(min(ratios)), "norm_ratio_max": float(max(ratios))}


def implicit_bias() -> CriterionResult:
    detail = {}
    ok = True
    for name, ds in (("toy", make_fig1_toy()), ("2d", sample_2d_tasks(three_task_2d_generator(0)))):
        o, d = _bias_one(ds)
        ok &= o
        detail.update({f"{name}.{k}": v for k, v in d.items()})
    return CriterionResult("bias", "direction and norm growth of cyclic seqgd", bool(ok), detail)


# 4 ----------------------------------------------------------------------------------------
def thm33() -> CriterionResult:
    detail = {}
    viol = 0
    for split in ("contradicting", "aligned"):
        ds = make_fig3_dataset(split)
        cert = max_margin_certificate(ds)
        cfg = TrainConfig(K=10, cycles=100, eta="auto:0.9", guard="T3.3")
        run = run_sequential_gd(ds, cfg, OrderingSchedule("cyclic", ds.M))
        rep = report_T33(run, ds, cert, cfg)
        viol += rep.violations
        detail[f"{split}.violations"] = rep.violations
        detail[f"{split}.min_slack"] = float(rep.slack.min())
    return CriterionResult("thm33", "joint-loss bound over J=1..100", viol == 0, detail)


# 5 ----------------------------------------------------------------------------------------
def thm34() -> CriterionResult:
    detail = {}
    ok = True
    for split in ("contradicting", "aligned"):
        ds = make_fig3_dataset(split)
        cert = max_margin_certificate(ds)
        cfg = TrainConfig(K=10, cycles=51, eta="auto:0.9", guard="T3.4")
        run = run_sequential_gd(ds, cfg, OrderingSchedule("cyclic", ds.M))
        F = np.array([cycle_averaged_forgetting(run, j) for j in range(1, 51)])
        if split == "contradicting":
            sign_ok = bool(np.all(F > 0) and np.all(np.diff(np.abs(F[-25:])) < 0))
        else:
            sign_ok = bool(np.all(F < 0) and np.all(np.diff(F) > 0))
        rep = report_T34(run, ds, cert, cfg, j_min=2)
        ok &= sign_ok and rep.violations == 0
        detail[f"{split}.sign_ok"] = sign_ok
        detail[f"{split}.sandwich_violations"] = rep.violations
        detail[f"{split}.F1"] = float(F[0])
        detail[f"{split}.F50"] = float(F[-1])
    return CriterionResult("thm34", "forgetting signs and sandwich", bool(ok), detail)


# 6 ----------------------------------------------------------------------------------------
def loss_bump(cycles: int = 20) -> CriterionResult:
    ds = make_c3_toy()
    cfg = TrainConfig(K=10, cycles=cycles, eta=1e-6, record_steps=True)
    run = run_sequential_gd(ds, cfg, OrderingSchedule("cyclic", ds.M))
    inc = np.any(np.diff(run.step_loss, axis=1) > 0, axis=1)
    bumps = np.flatnonzero(inc[: 7 * ds.M])
    ends = run.cycle_start_losses()
    mono = bool(np.all(np.diff(ends) <= 0))
    return CriterionResult("bump", "mid-cycle loss increase with monotone cycle ends",
                           bool(len(bumps) > 0 and mono),
                           {"first_bump_stage": int(bumps[0]) if len(bumps) else -1,
                            "cycle_end_monotone": mono})


# 7 ----------------------------------------------------------------------------------------
RANDOM_K = 1000


def _random_one(seed: int):
    ds = sample_2d_tasks(three_task_2d_generator(0))
    cert = max_margin_certificate(ds)
    cfg = TrainConfig(K=RANDOM_K, stages=300, eta="auto:0.9", guard="T4.1")
    run = run_sequential_gd(ds, cfg, OrderingSchedule("random", ds.M, seed))
    return float(run.joint_loss_end[-1]), direction_angle(run.final_w, cert.w_hat), run.eta


def random_order(seeds=(0, 1, 2)) -> CriterionResult:
    n = worker_count(len(seeds))
    if n > 1:
        with ProcessPoolExecutor(n) as ex:
            out = list(ex.map(_random_one, seeds))
    else:
        out = [_random_one(s) for s in seeds]
    losses = [o[0] for o in out]
    sines = [o[1] for o in out]
    ok = all(l < 1e-2 for l in losses) and all(s < 0.1 for s in sines)
    return CriterionResult("random", "random ordering loss and direction",
                           ok, {"eta": out[0][2], "final_loss": losses, "final_sine": sines})


# 8 ----------------------------------------------------------------------------------------
NONSEP_J = 500
MONO_RTOL = 1e-10


def nonsep(seed: int = 0) -> CriterionResult:
    ds = make_nonseparable(1.0, seed, pair_jitter=0.01)
    nc = nonsep_certificate(ds, K=1)
    eta = guard_eta("T5.2", ds, K=1, J=NONSEP_J, nonsep=nc)
    nc = nonsep_certificate(ds, K=1, eta=eta, b=nc.b)
    cfg = TrainConfig(K=1, cycles=NONSEP_J, eta=eta)
    run = run_sequential_gd(ds, cfg, OrderingSchedule("cyclic", ds.M))
    dist2 = np.array([np.sum((run.cycle_start_weight(j) - nc.w_star) ** 2)
                      for j in range(NONSEP_J + 1)])
    final = float(math.sqrt(dist2[-1]))
    # once at the end-of-cycle fixed point, rounding moves dist2 by ~1e-13 relative
    mono = bool(np.all(np.diff(dist2[5:]) <= MONO_RTOL * dist2[5:-1]))
    rep = report_T52(run, nc, cfg)
    need = rep.constants["minimal_constant"]
    bound_ok = rep.violations == 0 or need <= 1e3
    ok = final < 1e-3 and mono and bound_ok and nc.b >= 0.1 and ds.d == 2
    return CriterionResult("nonsep", "convergence to the joint minimiser", bool(ok),
                           {"N": ds.N, "b": nc.b, "eta": eta, "final_dist": final,
                            "monotone_after_5": mono, "t52_violations": rep.violations,
                            "minimal_constant": need})


# 9 ----------------------------------------------------------------------------------------
def random_separable(rng: np.random.Generator) -> JointDataset:
    d = int(rng.integers(1, 4))
    N = int(rng.integers(1, 7))
    u = rng.normal(size=d)
    X = rng.normal(size=(N, d))
    X = X * np.sign(X @ u)[:, None]
    X[np.abs(X @ u) < 1e-3] += u
    M = int(rng.integers(1, N + 1))
    tasks = np.concatenate([np.arange(M), rng.integers(0, M, size=N - M)])
    return make_dataset(X, tasks=rng.permutation(tasks), M=M)


def _agree(a, b, tol=1e-8) -> bool:
    return bool(np.max(np.abs(a.w - b.w)) <= tol and a.active == b.active)


def oracle_equivalence(n_random: int = 30, seed: int = 0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    sets = [make_fig1_toy(), make_fig3_dataset("contradicting"), make_fig3_dataset("aligned"),
            make_c3_toy()]
    sets += [random_separable(rng) for _ in range(n_random)]
    bad = []
    for i, ds in enumerate(sets):
        P = Polyhedron(ds.X)
        if not _agree(min_norm_in_polyhedron(P), active_set_oracle(P)):
            bad.append((i, "min_norm"))
        w0 = rng.normal(size=ds.d) * 2
        if not _agree(project_onto_polyhedron(P, w0), active_set_oracle(P, w0)):
            bad.append((i, "projection"))
    return CriterionResult("oracle", "solvers match brute-force enumeration", not bad,
                           {"datasets": len(sets), "mismatches": bad})


# 10 ---------------------------------------------------------------------------------------
def _fd_cases(n: int, seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-5
    for _ in range(n):
        d = int(rng.integers(1, 5))
        N = int(rng.integers(2, 9))
        M = int(rng.integers(1, N + 1))
        tasks = np.concatenate([np.arange(M), rng.integers(0, M, size=N - M)])
        ds = make_dataset(rng.normal(size=(N, d)), rng.choice([-1, 1], size=N), tasks, M=M)
        w = rng.normal(size=d)
        m = int(rng.integers(M))
        for f, g in ((lambda v: joint_loss(LOGISTIC, ds, v), joint_gradient(LOGISTIC, ds, w)),
                     (lambda v: task_loss(LOGISTIC, ds, m, v), task_gradient(LOGISTIC, ds, m, w))):
            E = np.eye(d) * h
            fd = np.array([(f(w + e) - f(w - e)) / (2 * h) for e in E])
            worst = max(worst, float(np.linalg.norm(fd - g) / np.linalg.norm(g)))
    return worst


def _phi_err(seed: int = 1):
    rng = np.random.default_rng(seed)
    certs = []
    for ds in (make_fig1_toy(), make_fig3_dataset("contradicting"), make_fig3_dataset("aligned"),
               make_c3_toy(), sample_2d_tasks(three_task_2d_generator(0))):
        certs.append(max_margin_certificate(ds))
        certs += [task_max_margin(ds, m) for m in range(ds.M)]
    certs += [max_margin_certificate(random_separable(rng)) for _ in range(30)]
    return max(abs(c.phi * np.linalg.norm(c.w_hat) - 1.0) for c in certs)


DETERMINISM_CONFIGS = [
    {"name": "det_thm33", "dataset": {"builtin": "fig3_contradicting"},
     "train": {"K": 10, "cycles": 20, "eta": "auto:0.9", "guard": "T3.3"},
     "metrics": ["loss_joint", "loss_task_m", "forget_cycle", "bound_t33", "bound_t34_lo",
                 "bound_t34_hi", "angle_sine", "rho_norm", "norm_w"],
     "checks": ["T3.3", "T3.4"]},
    {"name": "det_random", "dataset": {"generator": {"kind": "disks2d", "seed": 3,
                                                     "n_per_task": 20}},
     "train": {"K": 5, "stages": 60, "eta": "auto:0.9"},
     "schedule": {"kind": "random", "seed": 7}, "metrics": ["loss_joint", "angle_sine"]},
    {"name": "det_online", "dataset": {"generator": {"kind": "disks2d", "seed": 2,
                                                     "n_per_task": 10, "resample": True}},
     "train": {"K": 3, "stages": 30, "eta": 0.01}, "metrics": ["loss_joint", "norm_w"]},
    {"name": "det_nonsep", "dataset": {"builtin": "nonsep"},
     "train": {"K": 1, "cycles": 40, "eta": "auto:1.0"}, "checks": ["T5.2"],
     "metrics": ["loss_joint", "dist_wstar_sq", "bound_t52"]},
    {"name": "det_smm", "dataset": {"builtin": "fig1"},
     "train": {"algorithm": "smm", "cycles": 5}, "metrics": ["loss_joint", "norm_w"]},
]


def determinism(configs=None) -> bool:
    configs = configs or DETERMINISM_CONFIGS
    with tempfile.TemporaryDirectory() as tmp:
        for raw in configs:
            cfg = validate_config(raw)
            for rep in ("a", "b"):
                save_result(run_experiment(cfg), Path(tmp) / rep / cfg.name)
            for fname in ("trace.csv", "summary.json"):
                a = Path(tmp) / "a" / cfg.name / fname
                b = Path(tmp) / "b" / cfg.name / fname
                if not filecmp.cmp(a, b, shallow=False):
                    return False
    return True


def hygiene() -> CriterionResult:
    fd = _fd_cases(200, 0)
    phi = _phi_err()
    det = determinism()
    return CriterionResult("hygiene", "finite differences, phi*||w_hat||, determinism",
                           fd < 1e-5 and phi <= 1e-9 and det,
                           {"fd_rel_err": fd, "phi_err": phi, "deterministic": det})


SUITES = {
    "margin": margin_exactness,
    "smm": smm_limit,
    "bias": implicit_bias,
    "thm33": thm33,
    "thm34": thm34,
    "bump": loss_bump,
    "random": random_order,
    "nonsep": nonsep,
    "oracle": oracle_equivalence,
    "hygiene": hygiene,
}


def run_suite(name: str = "all") -> list[CriterionResult]:
    if name == "all":
        return [fn() for fn in SUITES.values()]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from all, {', '.join(SUITES)}")
    return [SUITES[name]()]
