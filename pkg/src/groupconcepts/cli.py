"""Command-line entry point: ``groupconcepts <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .groups import GroupSpec, build_group
from .runner.config import JOBS_ENV, OUTPUT_ENV, ConfigError, dump_config, load_config
from .runner.report import ReportError, locate, report
from .runner.sweep import parse_axis, sweep
from .runner.train import load_run, run_experiment, run_probes


def _root(args) -> Path:
    return Path(args.output or os.environ.get(OUTPUT_ENV, "runs"))


def cmd_build_group(args) -> int:
    spec = GroupSpec(args.family, args.n)
    g = build_group(spec)
    if args.dump:
        payload = json.dumps(g.to_json())
        if args.dump == "-":
            print(payload)
        else:
            Path(args.dump).write_text(payload)
            print(f"wrote {args.dump}")
    else:
        print(f"{g.name}: order {g.order}, identity {g.labels[g.identity]}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.epochs is not None:
        ckpts = cfg.checkpoint_epochs
        if ckpts:
            # keep explicit checkpoints that still fit, and always the new final epoch
            ckpts = tuple(sorted({e for e in ckpts if e <= args.epochs} | {args.epochs}))
        cfg = cfg.replace(epochs=args.epochs, checkpoint_epochs=ckpts)
    print(dump_config(cfg), end="")
    record = run_experiment(cfg, _root(args) if args.output else None)
    print(json.dumps({"run_id": record.run_id, "status": record.status, "epochs_run": record.epochs_run,
                      "wall_clock": record.wall_clock, "run_dir": record.run_dir}, indent=1))
    for key in sorted(record.final_metrics):
        print(f"  {key} = {record.final_metrics[key]:.6g}")
    return 0 if record.status == "completed" else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    axes = dict(parse_axis(a) for a in args.axis or [])
    sid, results = sweep(cfg, axes, args.seeds, jobs=args.jobs, output_root=_root(args) if args.output else None)
    failed = [r for r in results if r["status"] != "completed"]
    print(f"{sid}: {len(results)} runs, {len(failed)} failed")
    return 0


def cmd_probe(args) -> int:
    run_dir, _ = locate(args.run, _root(args))
    cfg, _ = load_run(run_dir)
    reports = run_probes(run_dir, cfg, subgroup=args.subgroup, calibrations=args.calibrations)
    for r in reports:
        tag = "random" if r.calibration else "subgroup"
        print(f"epoch {r.epoch:>5} {r.layer:<8} {tag:<8} {r.target:<12} acc {r.accuracy:.3f}")
    return 0


def cmd_report(args) -> int:
    for path in report(args.run, args.kind, _root(args)):
        print(path)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(verbose=True) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="groupconcepts", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--output", help=f"output root (default ${OUTPUT_ENV} or ./runs)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-group", help="build a group and optionally dump it as JSON")
    s.add_argument("--family", required=True, choices=["cyclic", "symmetric", "dihedral", "C", "S", "D"])
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--dump", nargs="?", const="-", help="write JSON to a file (or stdout)")
    s.set_defaults(func=cmd_build_group)

    s = sub.add_parser("train", help="train one model from a TOML config or preset name")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run a grid of configs over several seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", action="append", help="key=v1,v2 (repeatable)")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--jobs", type=int, default=int(os.environ.get(JOBS_ENV, "1")))
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("probe", help="linear-probe every checkpoint of a run")
    s.add_argument("--run", required=True)
    s.add_argument("--subgroup", required=True)
    s.add_argument("--calibrations", type=int, default=3)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("report", help="write tidy CSV and SVG figures for a run or sweep")
    s.add_argument("--run", required=True)
    s.add_argument("--kind", required=True, choices=["curves", "similarity", "probes"])
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("selftest", help="axiom, gradient and metric-oracle checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ReportError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
