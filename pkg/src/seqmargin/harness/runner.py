"""Run one experiment config end to end."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datamodel import JointDataset
from ..geometry import (MarginCertificate, NonSepCertificate, NotSeparableError,
                        max_margin_certificate, nonsep_certificate)
from ..metrics import (BoundReport, loglog_slope, report_T33, report_T34, report_T52,
                       trace_records)
from ..trainer import (GuardError, TrainRun, guard_eta, parse_eta, run_joint_gd, run_sequential_gd,
                       run_smm)
from .config import ExperimentConfig, resolve_dataset
from .io import write_summary, write_trace


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    run: TrainRun
    dataset: object
    cert: MarginCertificate | None = None
    ncert: NonSepCertificate | None = None
    reports: list[BoundReport] = field(default_factory=list)
    records: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(r.violations for r in self.reports if r.name != "T5.2") or any(
            r.constants["minimal_constant"] > r.constants["C"]
            for r in self.reports if r.name == "T5.2")


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("SEQMARGIN_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        limit = max(1, int(cap))
    return max(1, min(n_jobs, limit))


def _select_eta(cfg: ExperimentConfig, ds, cert, ncert, M) -> tuple[float, NonSepCertificate | None]:
    tc = cfg.train
    mode, val = parse_eta(tc.eta)
    nonsep_mode = "T5.2" in cfg.checks or tc.guard == "T5.2"
    if nonsep_mode:
        J = tc.cycles if tc.cycles is not None else max(2, tc.stages // M)
        choice = guard_eta("T5.2", ds, K=tc.K, J=J, nonsep=ncert, w0=tc.w0)
        eta = val * choice if mode == "auto" else val
        if "T5.2" in cfg.checks and eta > choice * (1 + 1e-12):
            raise GuardError(f"eta={eta:.6g} exceeds the T5.2 step-size choice {choice:.6g}")
        return eta, nonsep_certificate(ds, K=tc.K, eta=eta, b=ncert.b)
    rule = tc.guard or ("T3.3" if set(cfg.checks) & {"T3.3", "T3.4"} else
                           "T4.1" if cfg.schedule.get("kind") == "random" else "T3.1")
    if mode == "auto":
        if cert is None:
            raise GuardError("automatic step size needs a separable fixed dataset")
        eta = val * guard_eta(rule, ds, K=tc.K, M=M, cert=cert)
    else:
        eta = val
    if set(cfg.checks) & {"T3.3", "T3.4"}:
        g = guard_eta("T3.3", ds, K=tc.K, M=M, cert=cert)
        if not eta < g:
            raise GuardError(f"eta={eta:.6g} is not below the T3.3/T3.4 threshold {g:.6g}")
    return eta, ncert


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None,
                   run_id: str | None = None) -> ExperimentResult:
    data = resolve_dataset(cfg.dataset)
    fixed = isinstance(data, JointDataset)
    M = data.M
    schedule = cfg.make_schedule(M)
    tc = cfg.train
    cert = ncert = None
    if fixed:
        try:
            cert = max_margin_certificate(data)
        except NotSeparableError:
            ncert = nonsep_certificate(data, K=tc.K)
    if (set(cfg.checks) & {"T3.3", "T3.4"}) and cert is None:
        raise GuardError("separable bound checks need a separable fixed dataset")
    if "T5.2" in cfg.checks and ncert is None:
        raise GuardError("the T5.2 check needs a strictly non-separable dataset")
    if set(cfg.checks) and schedule.kind != "cyclic":
        raise GuardError("bound checks are stated for cyclic ordering")
    run_id = run_id or cfg.name
    if tc.algorithm == "smm":
        if not fixed:
            raise GuardError("SMM needs a fixed dataset")
        run = run_smm(data, stages=tc.n_stages(M), schedule=schedule, w0=tc.w0, run_id=run_id)
    else:
        eta = parse_eta(tc.eta)[1] if not fixed else None
        if fixed:
            eta, ncert = _select_eta(cfg, data, cert, ncert, M)
        if tc.algorithm == "jointgd":
            run = run_joint_gd(data, tc, eta=eta, run_id=run_id)
        else:
            run = run_sequential_gd(data, tc, schedule, eta=eta, run_id=run_id)
    reports = []
    if "T3.3" in cfg.checks:
        reports.append(report_T33(run, data, cert, tc))
    if "T3.4" in cfg.checks:
        reports.append(report_T34(run, data, cert, tc))
    if "T5.2" in cfg.checks:
        reports.append(report_T52(run, ncert, tc, cfg.bound_constant))
    ds_for_metrics = data if fixed else None
    records = trace_records(run, cfg.metrics, ds=ds_for_metrics, cert=cert, ncert=ncert, cfg=tc,
                            C=cfg.bound_constant)
    slopes = {}
    for r in reports:
        if r.name == "T3.4":
            slopes["forget_cycle"] = loglog_slope(r.J, r.measured)
        else:
            slopes[r.name] = loglog_slope(r.J, r.measured)
    if run.T >= 4 and run.algorithm != "smm":
        slopes["loss_joint"] = loglog_slope(np.arange(1, run.T + 1), run.joint_loss_end)
    res = ExperimentResult(cfg, run, data, cert, ncert, reports, records, slopes)
    out = out if out is not None else cfg.out
    if out is not None:
        save_result(res, out)
    return res


def save_result(res: ExperimentResult, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(res.records, out / "trace.csv")
    certs = {}
    if res.cert is not None:
        certs["margin_certificate"] = res.cert
    if res.ncert is not None:
        certs["nonsep_certificate"] = res.ncert
    write_summary(res.run, certs, res.reports, out / "summary.json", config=res.config.to_dict(),
                  extra={"loglog_slopes": res.slopes})
