"""Sequential GD, joint full-batch GD and sequential projection (SMM) engines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .convex import Polyhedron, project_onto_polyhedron
from .datamodel import JointDataset, ResampledTasks
from .geometry import MarginCertificate, NonSepCertificate, max_margin_certificate
from .losses import LOGISTIC, LossSpec, rows_gradient, rows_loss, smoothness_constants, task_losses

ABORT_NORM = 1e12
GUARDS = ("T3.1", "T3.3", "T3.4", "T4.1", "T5.2")


class DivergenceError(RuntimeError):
    def __init__(self, message, run=None):
        super().__init__(message)
        self.run = run


class GuardError(ValueError):
    pass


@dataclass(frozen=True)
class OrderingSchedule:
    kind: str = "cyclic"
    M: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("cyclic", "random"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "random" and self.seed is None:
            raise ValueError("random schedule needs a seed")
        if self.M < 1:
            raise ValueError("M must be positive")

    def task_at(self, t: int) -> int:
        if self.kind == "cyclic":
            return t % self.M
        # keyed by (seed, t) so stage t's task never depends on what was recorded
        return int(np.random.default_rng([self.seed, t]).integers(self.M))

    def tasks(self, T: int) -> np.ndarray:
        return np.array([self.task_at(t) for t in range(T)], dtype=np.int64)


@dataclass
class TrainConfig:
    algorithm: str = "seqgd"
    K: int = 1
    eta: float | str = "auto:0.9"
    guard: str | None = None
    stages: int | None = None
    cycles: int | None = None
    w0: Sequence[float] | None = None
    record_steps: bool = False
    max_snapshots: int = 10_000

    def __post_init__(self):
        if self.algorithm not in ("seqgd", "jointgd", "smm"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if (self.stages is None) == (self.cycles is None):
            raise ValueError("give exactly one of stages or cycles")
        if self.guard is not None and self.guard not in GUARDS:
            raise ValueError(f"unknown guard {self.guard!r}")
        if isinstance(self.eta, str):
            parse_eta(self.eta)
        elif not self.eta > 0:
            raise ValueError("eta must be positive")

    def n_stages(self, M: int) -> int:
        return self.stages if self.stages is not None else self.cycles * M


def parse_eta(eta) -> tuple[str, float]:
    """``0.1`` -> ("fixed", 0.1); ``"auto:0.9"`` -> ("auto", 0.9)."""
    if isinstance(eta, str):
        if eta == "auto":
            return "auto", 0.9
        if eta.startswith("auto:"):
            frac = float(eta[5:])
            if not 0 < frac:
                raise ValueError("auto fraction must be positive")
            return "auto", frac
        return "fixed", float(eta)
    return "fixed", float(eta)


def guard_eta(rule: str, ds: JointDataset, spec: LossSpec = LOGISTIC, K: int = 1,
              M: int | None = None, J: int | None = None, cert: MarginCertificate | None = None,
              nonsep: NonSepCertificate | None = None, w0=None) -> float:
    """Step-size threshold (separable rules) or step-size choice (T5.2)."""
    M = ds.M if M is None else M
    beta = spec.beta
    if rule in ("T3.1", "T3.3", "T3.4", "T4.1"):
        if cert is None:
            cert = max_margin_certificate(ds)
        phi, sig = cert.phi, cert.sigma_max
        if rule == "T3.1":
            return phi ** 2 / (2 * K * beta * sig ** 3 * (M * phi + sig))
        if rule in ("T3.3", "T3.4"):
            return phi ** 2 / (4 * K * beta * sig ** 3 * (M * phi + sig))
        return 2 * phi ** 2 / (beta * sig ** 4)
    if rule == "T5.2":
        if nonsep is None:
            raise GuardError("T5.2 step size needs a non-separable certificate")
        if J is None or J < 2:
            raise GuardError("T5.2 step size needs the cycle count J > 1")
        w0 = np.zeros(ds.d) if w0 is None else np.asarray(w0, dtype=float)
        B, V, mu = nonsep.B, nonsep.V_star, nonsep.mu
        d0 = float(np.sum((w0 - nonsep.w_star) ** 2))
        ratio = math.inf if V == 0 else d0 * mu ** 3 / (B ** 2 * V)
        first = 1.0 / (2 * math.sqrt(2) * K * B)
        second = (1 + 2 * math.sqrt(2)) / (2 * math.sqrt(2) * K * J) * math.log(J ** 2 * max(1.0, ratio))
        return min(first, second)
    raise GuardError(f"unknown guard {rule!r}")


def default_guard(cfg: TrainConfig, schedule: OrderingSchedule) -> str:
    if cfg.guard:
        return cfg.guard
    return "T4.1" if schedule.kind == "random" else "T3.1"


def resolve_eta(cfg: TrainConfig, ds: JointDataset, schedule: OrderingSchedule,
                spec: LossSpec = LOGISTIC, **kw) -> float:
    mode, val = parse_eta(cfg.eta)
    if mode == "fixed":
        return val
    guard = default_guard(cfg, schedule)
    J = cfg.cycles if cfg.cycles is not None else None
    return val * guard_eta(guard, ds, spec, cfg.K, J=J, w0=cfg.w0, **kw)


@dataclass
class TrainRun:
    algorithm: str
    K: int
    M: int
    eta: float
    d: int
    w0: np.ndarray
    schedule_kind: str
    stage_tasks: np.ndarray
    task_loss_end: np.ndarray            # (T, M): L_m(w_K^(t)) for every stage t
    snap_stages: np.ndarray              # stages whose end weight is kept
    snap_weights: np.ndarray             # (len(snap_stages), d)
    sq_step_sum: np.ndarray              # cumulative sum of ||w_{k+1} - w_k||^2 by stage
    step_loss: np.ndarray | None = None  # (T, K+1) joint loss inside each stage
    final_w: np.ndarray = None
    run_id: str = "run"
    records: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.stage_tasks)

    @property
    def cyclic(self) -> bool:
        return self.schedule_kind == "cyclic"

    @property
    def n_cycles(self) -> int:
        return self.T // self.M

    @property
    def joint_loss_end(self) -> np.ndarray:
        return self.task_loss_end.sum(axis=1)

    def end_weight(self, t: int) -> np.ndarray:
        """w_K^(t); for t = -1 the initial weight."""
        if t == -1:
            return self.w0
        pos = np.searchsorted(self.snap_stages, t)
        if pos >= len(self.snap_stages) or self.snap_stages[pos] != t:
            raise KeyError(f"no snapshot for stage {t}")
        return self.snap_weights[pos]

    def start_weight(self, t: int) -> np.ndarray:
        """w_0^(t) = w_K^(t-1)."""
        return self.end_weight(t - 1)

    def cycle_start_weight(self, j: int) -> np.ndarray:
        """w_0^(jM)."""
        return self.start_weight(j * self.M)

    def cycle_start_losses(self) -> np.ndarray:
        """Joint loss at w_0^(jM) for j = 0..n_cycles (index 0 is the initial loss)."""
        ends = self.joint_loss_end[self.M - 1::self.M]
        return np.concatenate([[self.initial_loss], ends])

    initial_loss: float = float("nan")


def _snapshot_stages(T: int, M: int, limit: int) -> np.ndarray:
    if T <= limit:
        return np.arange(T)
    geo = np.unique(np.round(np.geomspace(1, T, limit // 2)).astype(int) - 1)
    cyc = np.arange(M - 1, T, M)
    return np.union1d(np.union1d(geo, cyc), [T - 1])


def run_sequential_gd(data, cfg: TrainConfig, schedule: OrderingSchedule,
                      spec: LossSpec = LOGISTIC, eta: float | None = None,
                      run_id: str = "run", **guard_kw) -> TrainRun:
    """K gradient steps on the current task's loss per stage, carried across stages."""
    online = isinstance(data, ResampledTasks)
    if online:
        M, d = data.M, data.d
        if eta is None and parse_eta(cfg.eta)[0] == "auto":
            raise GuardError("automatic step size needs a fixed dataset")
    else:
        M, d = data.M, data.d
    if schedule.M != M:
        raise ValueError(f"schedule has M={schedule.M}, data has M={M}")
    if eta is None:
        eta = resolve_eta(cfg, data, schedule, spec, **guard_kw)
    T = cfg.n_stages(M)
    K = cfg.K
    w = np.zeros(d) if cfg.w0 is None else np.array(cfg.w0, dtype=float)
    w0 = w.copy()
    snaps = _snapshot_stages(T, M, cfg.max_snapshots)
    snap_w = np.empty((len(snaps), d))
    snap_pos = 0
    tasks = schedule.tasks(T)
    losses = np.empty((T, M))
    sq = np.empty(T)
    step_loss = np.empty((T, K + 1)) if cfg.record_steps else None
    acc = 0.0
    ds = data.dataset_for_stage(0) if online else data
    initial = rows_loss(spec, ds.X, w)
    for t in range(T):
        if online:
            ds = data.dataset_for_stage(t)
        Xt = ds.task_X(int(tasks[t]))
        if step_loss is not None:
            step_loss[t, 0] = rows_loss(spec, ds.X, w)
        for k in range(K):
            step = eta * rows_gradient(spec, Xt, w)
            w = w - step
            acc += float(step @ step)
            if step_loss is not None:
                step_loss[t, k + 1] = rows_loss(spec, ds.X, w)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > ABORT_NORM:
            raise DivergenceError(f"iterate diverged at stage {t}",
                                  run=_partial(locals(), t))
        losses[t] = task_losses(spec, ds, w)
        sq[t] = acc
        if snap_pos < len(snaps) and snaps[snap_pos] == t:
            snap_w[snap_pos] = w
            snap_pos += 1
    return TrainRun("seqgd", K, M, eta, d, w0, schedule.kind, tasks, losses, snaps, snap_w, sq,
                    step_loss, final_w=w, run_id=run_id, initial_loss=initial)


def _partial(env, t):
    return TrainRun("seqgd", env["K"], env["M"], env["eta"], env["d"], env["w0"],
                    env["schedule"].kind, env["tasks"][:t], env["losses"][:t],
                    env["snaps"][:env["snap_pos"]], env["snap_w"][:env["snap_pos"]], env["sq"][:t],
                    final_w=env["w"], run_id=env["run_id"], initial_loss=env["initial"])


def run_joint_gd(ds: JointDataset, cfg: TrainConfig, spec: LossSpec = LOGISTIC,
                 eta: float | None = None, run_id: str = "run", **guard_kw) -> TrainRun:
    """Full-batch GD; a "stage" is K steps so traces line up with sequential runs."""
    one = JointDataset(ds.X, ds.y, _single_partition(ds.N), absorbed=ds.absorbed)
    sched = OrderingSchedule("cyclic", 1)
    if eta is None:
        eta = resolve_eta(cfg, ds, OrderingSchedule("cyclic", ds.M), spec, **guard_kw)
    jcfg = TrainConfig("seqgd", cfg.K, eta, stages=cfg.n_stages(ds.M), w0=cfg.w0,
                       record_steps=cfg.record_steps, max_snapshots=cfg.max_snapshots)
    run = run_sequential_gd(one, jcfg, sched, spec, eta=eta, run_id=run_id)
    run.algorithm = "jointgd"
    return run


def _single_partition(N):
    from .datamodel import TaskPartition
    return TaskPartition((np.arange(N),))


def run_smm(ds: JointDataset, cycles: int | None = None, schedule: OrderingSchedule | None = None,
            w0=None, stages: int | None = None, spec: LossSpec = LOGISTIC,
            run_id: str = "run") -> TrainRun:
    """Sequential projection onto each task's margin polyhedron."""
    schedule = schedule or OrderingSchedule("cyclic", ds.M)
    T = stages if stages is not None else cycles * ds.M
    w = np.zeros(ds.d) if w0 is None else np.array(w0, dtype=float)
    start = w.copy()
    polys = [Polyhedron(ds.task_X(m)) for m in range(ds.M)]
    tasks = schedule.tasks(T)
    snap_w = np.empty((T, ds.d))
    losses = np.empty((T, ds.M))
    sq = np.empty(T)
    acc = 0.0
    initial = rows_loss(spec, ds.X, w)
    for t in range(T):
        new = project_onto_polyhedron(polys[tasks[t]], w).w
        acc += float(np.sum((new - w) ** 2))
        w = new
        snap_w[t] = w
        losses[t] = task_losses(spec, ds, w)
        sq[t] = acc
    return TrainRun("smm", 1, ds.M, 0.0, ds.d, start, schedule.kind, tasks, losses, np.arange(T),
                    snap_w, sq, final_w=w, run_id=run_id, initial_loss=initial)
