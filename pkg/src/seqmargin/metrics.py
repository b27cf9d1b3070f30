"""Observables of a training run and the closed-form bound evaluators."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .datamodel import JointDataset
from .geometry import MarginCertificate, NonSepCertificate
from .losses import LOGISTIC, LossSpec, joint_gradient, joint_loss, loss_value
from .trainer import GuardError, TrainConfig, TrainRun, guard_eta

METRICS = ("loss_joint", "loss_task_m", "angle_sine", "norm_w", "rho_norm", "forget_cycle",
           "bound_t33", "bound_t34_lo", "bound_t34_hi", "dist_wstar_sq", "bound_t52")
_TASK_METRIC = re.compile(r"loss_task_(\d+)$")
DEFAULT_T52_CONSTANT = 16.0


def check_metric_name(name: str) -> str:
    if name in METRICS or _TASK_METRIC.match(name):
        return name
    raise ValueError(f"unknown metric {name!r}")


class TraceRecord(NamedTuple):
    run_id: str
    algorithm: str
    stage: int
    cycle: int          # -1 for non-cyclic runs
    step: int
    metric: str
    value: float


@dataclass
class BoundReport:
    name: str
    J: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    constants: dict = field(default_factory=dict)
    lower: np.ndarray | None = None     # two-sided reports only

    @property
    def slack(self) -> np.ndarray:
        s = self.bound - self.measured
        if self.lower is not None:
            s = np.minimum(s, self.measured - self.lower)
        return s

    @property
    def violations(self) -> int:
        return int(np.sum(self.slack < 0))

    def as_dict(self) -> dict:
        out = {"name": self.name, "violations": self.violations,
               "max_slack": float(self.slack.max()) if len(self.J) else None,
               "min_slack": float(self.slack.min()) if len(self.J) else None,
               "n_checked": int(len(self.J)), "constants": _jsonable(self.constants)}
        return out


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


# -- forgetting ------------------------------------------------------------------------

def forgetting(run: TrainRun, s: int, t: int) -> float:
    """Loss change of the stage-``s`` task between the ends of stages s and t."""
    if not 0 <= s <= t:
        raise ValueError(f"need 0 <= s <= t, got s={s}, t={t}")
    if t >= run.T:
        raise KeyError(f"run has {run.T} stages, no stage {t}")
    m = int(run.stage_tasks[s])
    return float(run.task_loss_end[t, m] - run.task_loss_end[s, m])


def cycle_averaged_forgetting(run: TrainRun, j: int) -> float:
    if not run.cyclic:
        raise ValueError("cycle-averaged forgetting needs a cyclic run")
    if not 0 <= j < run.n_cycles:
        raise KeyError(f"cycle {j} is not complete (run has {run.n_cycles})")
    M = run.M
    end = run.task_loss_end[M * j + M - 1]
    own = np.array([run.task_loss_end[M * j + m, m] for m in range(M)])
    return float(np.mean(end - own))


def alignment_sums(ds: JointDataset):
    """``(A_plus, A_minus, total_plus, total_minus)``; totals run over ordered pairs p != q."""
    M = ds.M
    Ap = np.zeros((M, M))
    Am = np.zeros((M, M))
    for p in range(M):
        for q in range(M):
            if p == q:
                continue
            G = ds.task_X(p) @ ds.task_X(q).T
            Ap[p, q] = G[G > 0].sum()
            Am[p, q] = -G[G < 0].sum()
    return Ap, Am, float(Ap.sum()), float(Am.sum())


def direction_angle(w, target) -> float:
    """Sine of the angle between two nonzero vectors."""
    w = np.asarray(w, dtype=float)
    target = np.asarray(target, dtype=float)
    nw, nt = np.linalg.norm(w), np.linalg.norm(target)
    if nw == 0 or nt == 0:
        raise ValueError("angle undefined for a zero vector")
    c = min(1.0, max(-1.0, float(w @ target) / (nw * nt)))
    return math.sqrt(max(0.0, 1.0 - c * c))


def _weight_at(run: TrainRun, t: int, k: int) -> np.ndarray:
    if k == 0:
        return run.start_weight(t)
    if k == run.K:
        return run.end_weight(t)
    raise KeyError(f"only step 0 and step K={run.K} weights are stored")


def residual_rho(run: TrainRun, cert: MarginCertificate, t: int, k: int):
    """``(rho, ||rho||)`` with rho = w_k^(t) - ln(t) w_hat."""
    if t < 1:
        raise ValueError("residual is defined for t >= 1")
    rho = _weight_at(run, t, k) - math.log(t) * cert.w_hat
    return rho, float(np.linalg.norm(rho))


def rho_plateau_ratio(run: TrainRun, cert: MarginCertificate) -> float:
    """max ||rho|| over the last half of stored stages / max over the middle quarter."""
    ts = [int(t) for t in run.snap_stages if t >= 1]
    T = run.T
    late = [residual_rho(run, cert, t, run.K)[1] for t in ts if t >= T // 2]
    mid = [residual_rho(run, cert, t, run.K)[1] for t in ts if T // 4 <= t < T // 2]
    if not late or not mid:
        raise ValueError("run too short for a plateau test")
    return max(late) / max(mid)


# -- separable cyclic bounds ----------------------------------------------------------

def _eta_of(cfg: TrainConfig, eta, ds, cert, spec, rule):
    if eta is not None:
        return float(eta)
    if isinstance(cfg.eta, str):
        from .trainer import parse_eta
        mode, val = parse_eta(cfg.eta)
        if mode == "auto":
            return val * guard_eta(rule, ds, spec, cfg.K, cert=cert)
        return val
    return float(cfg.eta)


def _w0(cfg: TrainConfig, d: int) -> np.ndarray:
    return np.zeros(d) if cfg.w0 is None else np.asarray(cfg.w0, dtype=float)


def t33_constants(ds: JointDataset, cert: MarginCertificate, eta: float, K: int, w0,
                  spec: LossSpec = LOGISTIC) -> dict:
    """D0 and D1 of the cyclic loss bound."""
    M, sig, phi, beta = ds.M, cert.sigma_max, cert.phi, spec.beta
    den = 1 - eta * M * K * sig ** 2 * beta
    if den <= 0:
        raise GuardError("step size too large: 1 - eta M K sigma^2 beta <= 0")
    D0 = (1 + eta * K * sig ** 3 * beta / (phi * den)) * eta * K * sig / (phi * den)
    g = joint_gradient(spec, ds, w0)
    D1 = (4 * sig ** 2 / phi ** 2) * (joint_loss(spec, ds, w0) + D0 * float(g @ g))
    return {"D0": D0, "D1": D1}


def _check_guard(ds, cert, spec, K, eta, rule="T3.3"):
    g = guard_eta(rule, ds, spec, K, cert=cert)
    if not eta < g:
        raise GuardError(f"eta={eta:.6g} is not below the {rule} threshold {g:.6g}")


def bound_T33(ds: JointDataset, cert: MarginCertificate, cfg: TrainConfig, J: int, m: int = 0,
              k: int = 0, eta: float | None = None, spec: LossSpec = LOGISTIC,
              constants: dict | None = None) -> float:
    """Upper bound on the joint loss at w_k^(MJ+m)."""
    if J < 1:
        raise ValueError("J must be at least 1")
    K, M = cfg.K, ds.M
    if not (0 <= m < M and 0 <= k < K):
        raise ValueError("need 0 <= m < M and 0 <= k < K")
    eta = _eta_of(cfg, eta, ds, cert, spec, "T3.3")
    _check_guard(ds, cert, spec, K, eta)
    w0 = _w0(cfg, ds.d)
    c = constants or t33_constants(ds, cert, eta, K, w0, spec)
    S = [len(s) for s in cert.task_support]
    I = [len(idx) for idx in ds.partition.index_sets]
    nS, nI = sum(S), ds.N
    lnMJ = math.log(M * J)
    lead = (nS + (sum(S[:m]) + k / K * S[m]) / J) * float(loss_value(spec, lnMJ))
    dist = float(np.sum((w0 - cert.w_hat * lnMJ) ** 2)) / (2 * eta * K * J)
    total = lead + dist + c["D1"] / J
    if cert.theta is not None:
        rest = nI - nS + (sum(i - s for i, s in zip(I[:m], S[:m])) + k / K * (I[m] - S[m])) / J
        total += rest * float(loss_value(spec, cert.theta * lnMJ))
    return total


def loss_envelope_L(ds: JointDataset, cert: MarginCertificate, eta: float, K: int, J: int, w0,
                    D1: float) -> float:
    M = ds.M
    nS, nI = len(cert.support), ds.N
    MJ = M * J
    tail = 0.0 if cert.theta is None else (nI - nS) / MJ ** (cert.theta - 1)
    dist = float(np.sum((w0 - cert.w_hat * math.log(MJ)) ** 2)) / (2 * eta * K)
    return ((nS + tail) * (1 + 1 / MJ) + dist + D1) / J


def forgetting_bounds_T34(ds: JointDataset, cert: MarginCertificate, cfg: TrainConfig, J: int,
                          eta: float | None = None, spec: LossSpec = LOGISTIC,
                          constants: dict | None = None) -> tuple[float, float]:
    """``(lower, upper)`` on the cycle-averaged forgetting at cycle J."""
    if spec.kind != "logistic":
        raise ValueError("forgetting bounds are stated for the logistic loss")
    if J < 1:
        raise ValueError("J must be at least 1")
    K = cfg.K
    eta = _eta_of(cfg, eta, ds, cert, spec, "T3.4")
    _check_guard(ds, cert, spec, K, eta, "T3.4")
    w0 = _w0(cfg, ds.d)
    c = constants or t33_constants(ds, cert, eta, K, w0, spec)
    L = loss_envelope_L(ds, cert, eta, K, J, w0, c["D1"])
    _, _, tp, tm = alignment_sums(ds)
    scale = eta * K * L * L / ds.M
    return -scale * tp, scale * tm


def bound_T52(ncert: NonSepCertificate | None, cfg: TrainConfig, J: int,
              C: float = DEFAULT_T52_CONSTANT) -> float:
    if ncert is None:
        raise ValueError("bound needs a non-separable certificate")
    if J < 1:
        raise ValueError("J must be at least 1")
    w0 = _w0(cfg, len(ncert.w_star))
    d0 = float(np.sum((w0 - ncert.w_star) ** 2))
    mu, B, V = ncert.mu, ncert.B, ncert.V_star
    first = math.exp(-mu * J / ((1 + 2 * math.sqrt(2)) * B)) * d0
    second = B ** 2 * V * math.log(J) ** 2 / (mu ** 3 * J ** 2)
    return C * (first + second)


# -- reports over a whole run ------------------------------------------------------------

def report_T33(run: TrainRun, ds: JointDataset, cert: MarginCertificate, cfg: TrainConfig,
               spec: LossSpec = LOGISTIC) -> BoundReport:
    """Joint loss at w_0^(MJ) against the bound at (J, 0, 0) for J = 1..n_cycles."""
    w0 = _w0(cfg, ds.d)
    c = t33_constants(ds, cert, run.eta, run.K, w0, spec)
    Js = np.arange(1, run.n_cycles + 1)
    measured = run.cycle_start_losses()[Js]
    bound = np.array([bound_T33(ds, cert, cfg, int(J), 0, 0, eta=run.eta, spec=spec, constants=c)
                      for J in Js])
    return BoundReport("T3.3", Js, measured, bound, dict(c, eta=run.eta, K=run.K))


def report_T34(run: TrainRun, ds: JointDataset, cert: MarginCertificate, cfg: TrainConfig,
               spec: LossSpec = LOGISTIC, j_min: int = 1) -> BoundReport:
    w0 = _w0(cfg, ds.d)
    c = t33_constants(ds, cert, run.eta, run.K, w0, spec)
    Js = np.arange(j_min, run.n_cycles)
    measured = np.array([cycle_averaged_forgetting(run, int(J)) for J in Js])
    pairs = [forgetting_bounds_T34(ds, cert, cfg, int(J), eta=run.eta, spec=spec, constants=c)
             for J in Js]
    lo = np.array([p[0] for p in pairs])
    hi = np.array([p[1] for p in pairs])
    Ap, Am, tp, tm = alignment_sums(ds)
    Ls = [loss_envelope_L(ds, cert, run.eta, run.K, int(J), w0, c["D1"]) for J in Js]
    consts = dict(c, A_plus=Ap, A_minus=Am, sum_A_plus=tp, sum_A_minus=tm,
                  L_first=Ls[0] if Ls else None, L_last=Ls[-1] if Ls else None)
    return BoundReport("T3.4", Js, measured, hi, consts, lower=lo)


def report_T52(run: TrainRun, ncert: NonSepCertificate, cfg: TrainConfig,
               C: float = DEFAULT_T52_CONSTANT) -> BoundReport:
    Js = np.arange(2, run.n_cycles + 1)
    measured = np.array([float(np.sum((run.cycle_start_weight(int(J)) - ncert.w_star) ** 2))
                         for J in Js])
    bound = np.array([bound_T52(ncert, cfg, int(J), C) for J in Js])
    unit = bound / C
    with np.errstate(divide="ignore", invalid="ignore"):
        need = float(np.max(measured / unit)) if len(Js) else 0.0
    consts = {"C": C, "minimal_constant": need, "B": ncert.B, "V_star": ncert.V_star,
              "mu": ncert.mu, "eta": run.eta, "K": run.K}
    return BoundReport("T5.2", Js, measured, bound, consts)


def loglog_slope(x, y, tail: float = 0.5) -> float | None:
    """Least-squares slope of log|y| against log x over the last ``tail`` fraction."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    n = len(x)
    keep = np.arange(n) >= int(n * (1 - tail))
    keep &= (x > 0) & (y > 0)
    if keep.sum() < 3:
        return None
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


# -- trace records ------------------------------------------------------------------------

def trace_records(run: TrainRun, metrics, ds: JointDataset | None = None,
                  cert: MarginCertificate | None = None, ncert: NonSepCertificate | None = None,
                  cfg: TrainConfig | None = None, spec: LossSpec = LOGISTIC,
                  C: float = DEFAULT_T52_CONSTANT) -> list[TraceRecord]:
    """One record per (stage, metric); weight-based metrics only at stored stages."""
    metrics = [check_metric_name(m) for m in metrics]
    want = set(metrics)
    recs: list[TraceRecord] = []
    M, K = run.M, run.K
    cyc = run.cyclic
    stored = set(int(t) for t in run.snap_stages)
    t33c = None
    if want & {"bound_t33", "bound_t34_lo", "bound_t34_hi"}:
        if ds is None or cert is None or cfg is None:
            raise ValueError("bound metrics need the dataset, certificate and config")
        t33c = t33_constants(ds, cert, run.eta, K, _w0(cfg, ds.d), spec)

    def add(t, name, value, step=K):
        recs.append(TraceRecord(run.run_id, run.algorithm, t, t // M if cyc else -1, step,
                                name, float(value)))

    for t in range(run.T):
        cycle_end = cyc and (t + 1) % M == 0
        J = (t + 1) // M
        for name in metrics:
            tm = _TASK_METRIC.match(name)
            if name == "loss_joint":
                if run.step_loss is not None:
                    for k in range(K + 1):
                        add(t, name, run.step_loss[t, k], step=k)
                else:
                    add(t, name, run.joint_loss_end[t])
            elif tm:
                m = int(tm.group(1))
                if m < M:
                    add(t, name, run.task_loss_end[t, m])
            elif name == "loss_task_m":
                for m in range(M):
                    add(t, f"loss_task_{m}", run.task_loss_end[t, m])
            elif t in stored and name == "norm_w":
                add(t, name, np.linalg.norm(run.end_weight(t)))
            elif t in stored and name == "angle_sine" and cert is not None:
                w = run.end_weight(t)
                if np.linalg.norm(w) > 0:
                    add(t, name, direction_angle(w, cert.w_hat))
            elif t in stored and name == "rho_norm" and cert is not None and t >= 1:
                add(t, name, residual_rho(run, cert, t, K)[1])
            elif t in stored and name == "dist_wstar_sq" and ncert is not None:
                add(t, name, np.sum((run.end_weight(t) - ncert.w_star) ** 2))
            elif cycle_end and name == "forget_cycle":
                add(t, name, cycle_averaged_forgetting(run, J - 1))
            elif cycle_end and name == "bound_t33":
                add(t, name, bound_T33(ds, cert, cfg, J, eta=run.eta, spec=spec, constants=t33c))
            elif cycle_end and name in ("bound_t34_lo", "bound_t34_hi") and J >= 2:
                lo, hi = forgetting_bounds_T34(ds, cert, cfg, J - 1, eta=run.eta, spec=spec,
                                               constants=t33c)
                add(t, name, lo if name.endswith("lo") else hi)
            elif cycle_end and name == "bound_t52" and ncert is not None and J >= 2:
                add(t, name, bound_T52(ncert, cfg, J, C))
    recs.sort(key=lambda r: (r.stage, r.step, r.metric))
    return recs
