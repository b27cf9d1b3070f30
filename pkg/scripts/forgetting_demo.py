"""Cycle-averaged forgetting on the two six-point splits, next to its two-sided envelope."""
import argparse

from seqmargin.datamodel import make_fig3_dataset
from seqmargin.geometry import max_margin_certificate
from seqmargin.metrics import cycle_averaged_forgetting, forgetting_bounds_T34
from seqmargin.trainer import OrderingSchedule, TrainConfig, run_sequential_gd

p = argparse.ArgumentParser()
p.add_argument("--cycles", type=int, default=50)
p.add_argument("--k", type=int, default=10)
args = p.parse_args()

for split in ("contradicting", "aligned"):
    ds = make_fig3_dataset(split)
    cert = max_margin_certificate(ds)
    cfg = TrainConfig(K=args.k, cycles=args.cycles + 1, eta="auto:0.9", guard="T3.3")
    run = run_sequential_gd(ds, cfg, OrderingSchedule("cyclic", ds.M))
    print(f"{split}: eta={run.eta:.4g}")
    print(f"{'J':>5} {'lower':>12} {'F_J':>12} {'upper':>12}")
    for j in sorted({1, 2, 5, 10, 20, args.cycles} & set(range(1, args.cycles + 1))):
        lo, hi = forgetting_bounds_T34(ds, cert, cfg, j, eta=run.eta)
        print(f"{j:5d} {lo + 0.0:12.4e} {cycle_averaged_forgetting(run, j):12.4e} {hi:12.4e}")
