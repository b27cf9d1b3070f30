"""Trace CSV and JSON summary writers."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..metrics import TraceRecord

TRACE_HEADER = ("run_id", "algorithm", "stage", "cycle", "step", "metric", "value")


def fmt17(v: float) -> str:
    return format(float(v), ".17g")


def write_trace(records, path) -> Path:
    """Long-format CSV, rows sorted by (stage, step, metric)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(records, key=lambda r: (r.stage, r.step, r.metric))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            if not math.isfinite(r.value):
                raise ValueError(f"non-finite value for {r.metric} at stage {r.stage}")
            w.writerow([r.run_id, r.algorithm, r.stage, r.cycle, r.step, r.metric, fmt17(r.value)])
    return path


def read_trace(path) -> list[TraceRecord]:
    with Path(path).open() as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header {header}")
        return [TraceRecord(r[0], r[1], int(r[2]), int(r[3]), int(r[4]), r[5], float(r[6]))
                for r in rd]


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def summary_dict(run=None, certs: dict | None = None, checks=(), config: dict | None = None,
                 extra: dict | None = None) -> dict:
    out: dict = {}
    if run is not None:
        out["run_id"] = run.run_id
        out["algorithm"] = run.algorithm
        out["eta"] = run.eta
        out["stages"] = run.T
        out["final_w"] = run.final_w
        out["final_joint_loss"] = float(run.joint_loss_end[-1]) if run.T else run.initial_loss
    for name, cert in (certs or {}).items():
        out[name] = cert.as_dict() if hasattr(cert, "as_dict") else cert
    out["checks"] = {r.name: r.as_dict() for r in checks}
    if config is not None:
        out["config"] = config
    if extra:
        out.update(extra)
    return _clean(out)


def write_summary(run, certs, checks, path, config: dict | None = None,
                  extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(summary_dict(run, certs, checks, config, extra), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    return path
