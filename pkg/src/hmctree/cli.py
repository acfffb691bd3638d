"""Command line: ``hmctree run | synth | gradcheck``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PROFILES, RunConfig, load_config
from .nuts import ConfigurationError

log = logging.getLogger("hmctree")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hmctree", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run restarts of the sampler and write traces and a report")
    run.add_argument("--config", help="JSON run configuration (flags override its values)")
    run.add_argument("--profile", choices=sorted(PROFILES), help="hyperparameter profile")
    run.add_argument("--method", choices=["hmc-df", "hmc-dfi"])
    run.add_argument("--iters", type=int, help="total iterations per chain")
    run.add_argument("--burnin", type=int, help="burn-in iterations")
    run.add_argument("--restarts", type=int)
    run.add_argument("--seed", type=int, help="base seed; restart r uses seed + r")
    run.add_argument("--out", help="output directory")
    run.add_argument("--jobs", type=int, help="chains run concurrently")
    run.add_argument("--k", type=int, help="NUTS steps per block")
    run.add_argument("--train-csv", help="training CSV (switches the data source to csv)")
    run.add_argument("--test-csv", help="test CSV (default: split the training file)")
    run.add_argument("--output-col", help="output column name (default: last column)")
    run.add_argument("--task", choices=["regression", "classification"])

    synth = sub.add_parser("synth", help="write synthetic CGM train/test CSVs")
    synth.add_argument("--n-train", type=int, default=800)
    synth.add_argument("--n-test", type=int, default=800)
    synth.add_argument("--sigma", type=float, default=0.2)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--input-law", choices=["grid", "uniform"], default="grid")
    synth.add_argument("--out", default="synth-cgm")

    grad = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    grad.add_argument("--trials", type=int, default=50)
    grad.add_argument("--seed", type=int, default=0)
    return p


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {
        "profile": args.profile,
        "method": args.method,
        "iterations": args.iters,
        "burnin": args.burnin,
        "restarts": args.restarts,
        "seed": args.seed,
        "out": args.out,
        "jobs": args.jobs,
        "k": args.k,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.burnin is None and cfg.burnin > cfg.iterations:
        log.warning("burn-in %d exceeds %d iterations; clamping burn-in", cfg.burnin, cfg.iterations)
        cfg = replace(cfg, burnin=cfg.iterations)
    data = cfg.data
    if args.train_csv:
        data = replace(data, kind="csv", train=args.train_csv, test=args.test_csv)
    if args.output_col:
        data = replace(data, output=args.output_col)
    if args.task:
        data = replace(data, task=args.task)
    return replace(cfg, data=data)


def cmd_run(args) -> int:
    from .experiment import run_experiment

    try:
        cfg = _run_config(args).resolved()
    except (ConfigurationError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = run_experiment(cfg)
    summary = report.get("summary")
    for chain in report["chains"]:
        status = chain["status"]
        if status == "ok":
            print(f"restart {chain['restart']:2d}: test {chain['metric']} {chain['test_metric']:.4f}  "
                  f"acceptance {chain['acceptance_rate']:.1f}%  leaves {chain['ave_leaves']:.2f}")
        else:
            print(f"restart {chain['restart']:2d}: {status} {chain.get('error', chain.get('detail', ''))}")
    if summary:
        tm = summary["test_metric"]
        print(f"{cfg.method} {cfg.profile}: test {summary['metric']} {tm['mean']:.4f} (sd {tm['sd']:.2g}) "
              f"over {summary['n_chains']} chains; report in {Path(cfg.out) / 'report.json'}")
    return 0 if report["status"] != "failed" else 1


def cmd_synth(args) -> int:
    from .data import save_manifest, synth_cgm, write_csv

    try:
        train, test = synth_cgm(args.n_train, args.n_test, args.sigma, np.random.default_rng(args.seed),
                                args.input_law)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")
    save_manifest(out / "manifest.json", generator="synth-cgm", seed=args.seed, n_train=args.n_train,
                  n_test=args.n_test, sigma=args.sigma, input_law=args.input_law,
                  train=train.manifest(), test=test.manifest())
    print(f"wrote {train.n} training and {test.n} test rows to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import REL_TOL, run_gradcheck

    rows = run_gradcheck(args.trials, args.seed)
    print(f"{'variant':8s}{'task':16s}{'family':8s}{'coords':>8s}{'max rel err':>14s}  result")
    for r in rows:
        print(f"{r.variant:8s}{r.task:16s}{r.family:8s}{r.n_coords:8d}{r.max_rel_error:14.3e}  "
              f"{'PASS' if r.passed else 'FAIL'}")
    ok = all(r.passed for r in rows)
    print(f"{'all families within' if ok else 'FAILED: tolerance'} {REL_TOL:g}")
    return 0 if ok else 1


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = _build_parser().parse_args(argv)
    return {"run": cmd_run, "synth": cmd_synth, "gradcheck": cmd_gradcheck}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
