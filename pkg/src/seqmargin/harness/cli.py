"""Command-line entry point: ``seqmargin <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from ..convex import InfeasibleError
from ..datamodel import DatasetError, JointDataset, save_dataset
from ..geometry import CertificateError, NotSeparableError, max_margin_certificate, nonsep_certificate
from ..trainer import DivergenceError, GuardError, TrainConfig
from .config import ConfigError, dataset_from_arg, load_config, parse_generator_spec, resolve_dataset
from .io import summary_dict
from .runner import run_experiment

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _common(p):
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override dataset generator and ordering seed")
    p.add_argument("--eta", help="step size: a float or auto:<fraction>")
    p.add_argument("--cycles", type=int)
    p.add_argument("--stages", type=int)
    p.add_argument("--k", type=int, dest="K")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="seqmargin", description="Sequential GD margin experiments.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    m = sub.add_parser("margin", help="print the max-margin certificate of a dataset")
    m.add_argument("dataset")
    m.add_argument("--quiet", action="store_true")
    for name in ("train", "smm"):
        s = sub.add_parser(name, help=f"run a {name} experiment from a JSON config")
        s.add_argument("config_path", nargs="?")
        s.add_argument("--config", dest="config_flag")
        _common(s)
    n = sub.add_parser("nonsep-cert", help="print the non-separable certificate of a dataset")
    n.add_argument("dataset")
    n.add_argument("--k", type=int, dest="K", default=1)
    n.add_argument("--eta", type=float)
    n.add_argument("--quiet", action="store_true")
    v = sub.add_parser("verify", help="run acceptance experiments")
    v.add_argument("suite", nargs="?", default="all")
    v.add_argument("--quiet", action="store_true")
    g = sub.add_parser("gen-data", help="write a generated dataset file")
    g.add_argument("spec", help="builtin name or e.g. nonseparable:overlap=0.5,seed=1")
    g.add_argument("out")
    g.add_argument("--seed", type=int)
    return p


def _apply_overrides(cfg, args, algorithm=None):
    tc = cfg.train
    upd = {}
    if args.eta is not None:
        try:
            upd["eta"] = float(args.eta)
        except ValueError:
            upd["eta"] = args.eta
    if args.cycles is not None:
        upd.update(cycles=args.cycles, stages=None)
    if args.stages is not None:
        upd.update(stages=args.stages, cycles=None)
    if args.K is not None:
        upd["K"] = args.K
    if algorithm is not None:
        upd["algorithm"] = algorithm
    if upd:
        fields = {k: getattr(tc, k) for k in tc.__dataclass_fields__}
        fields.update(upd)
        try:
            tc = TrainConfig(**fields)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    ds = cfg.dataset
    sched = dict(cfg.schedule)
    if args.seed is not None:
        if "generator" in ds:
            ds = {"generator": dict(ds["generator"], seed=args.seed)}
        if sched.get("kind") == "random":
            sched["seed"] = args.seed
    return replace(cfg, train=tc, dataset=ds, schedule=sched,
                   out=args.out if args.out is not None else cfg.out)


def _print(obj, quiet):
    if not quiet:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_run(args, algorithm):
    path = args.config_flag or args.config_path
    if not path:
        raise ConfigError("a config file is required (--config PATH)")
    cfg = load_config(path)
    cfg = _apply_overrides(cfg, args, algorithm)
    res = run_experiment(cfg)
    if not args.quiet:
        s = summary_dict(res.run, {}, res.reports, extra={"loglog_slopes": res.slopes})
        print(json.dumps(s, indent=2, sort_keys=True))
        if cfg.out:
            print(f"wrote {cfg.out}/trace.csv and {cfg.out}/summary.json")
    return EXIT_CHECK if res.failed else EXIT_OK


def _cmd_margin(args):
    ds = dataset_from_arg(args.dataset)
    try:
        cert = max_margin_certificate(ds)
    except NotSeparableError:
        print("dataset is not linearly separable", file=sys.stderr)
        return EXIT_CHECK
    _print(summary_dict(certs={"margin_certificate": cert}), args.quiet)
    return EXIT_OK


def _cmd_nonsep(args):
    ds = dataset_from_arg(args.dataset)
    try:
        nc = nonsep_certificate(ds, K=args.K, eta=args.eta)
    except CertificateError as exc:
        print(f"no certificate: {exc}", file=sys.stderr)
        return EXIT_CHECK
    _print(summary_dict(certs={"nonsep_certificate": nc}), args.quiet)
    return EXIT_OK


def _cmd_verify(args):
    from .experiments import run_suite
    try:
        results = run_suite(args.suite)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    for r in results:
        if not args.quiet:
            print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def _cmd_gen(args):
    entry = parse_generator_spec(args.spec)
    data = resolve_dataset(entry, seed=args.seed) if "generator" in entry else resolve_dataset(entry)
    if not isinstance(data, JointDataset):
        raise ConfigError("online (resample) generators cannot be written to a file")
    save_dataset(data, args.out)
    return EXIT_OK


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.cmd == "margin":
            return _cmd_margin(args)
        if args.cmd in ("train", "smm"):
            return _cmd_run(args, "smm" if args.cmd == "smm" else None)
        if args.cmd == "nonsep-cert":
            return _cmd_nonsep(args)
        if args.cmd == "verify":
            return _cmd_verify(args)
        return _cmd_gen(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GuardError as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DatasetError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, InfeasibleError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
