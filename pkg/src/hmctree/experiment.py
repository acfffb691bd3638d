"""Multi-restart experiment runner used by the command line."""

from __future__ import annotations

import json
import logging
import platform
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import RunConfig
from .data import Dataset, load_csv, save_manifest, split, synth_cgm
from .metrics import InsufficientSamplesError, combine_reports, compute_report, write_metric_trace
from .rjsampler import NutsEngine, initial_state, run_chain
from .trace import TraceWriter

__all__ = ["prepare_data", "run_single_chain", "run_experiment"]

log = logging.getLogger(__name__)


def prepare_data(cfg: RunConfig) -> tuple[Dataset, Dataset | None]:
    src = cfg.data
    if src.kind == "synth-cgm":
        seed = cfg.seed if src.data_seed is None else src.data_seed
        return synth_cgm(src.n_train, src.n_test, src.sigma, np.random.default_rng(seed), src.input_law)
    train = load_csv(src.train, output=src.output, task=src.task)
    if src.test:
        test = load_csv(src.test, output=src.output, task=src.task, inputs=train.feature_names,
                        normalization=train.normalization, class_labels=train.class_labels or None)
        return train, test
    return split(train, src.split_fraction, np.random.default_rng(src.split_seed))


def run_single_chain(cfg: RunConfig, restart: int, train: Dataset, test: Dataset | None, out_dir: str) -> dict:
    """Run restart ``restart`` and write its trace and metric files; returns its report entry."""
    seed = cfg.seed + restart
    rng = np.random.default_rng(seed)
    prior = cfg.prior(train.n_features, train.n_classes)
    engine = NutsEngine(
        cfg.burnin, cfg.h_init, cfg.h_final, cfg.nuts.step_size, cfg.nuts.target_accept,
        cfg.nuts.max_depth, cfg.nuts.max_delta_h,
    )
    init = initial_state(train, cfg.variant, prior, engine.h_at(0), rng)
    out = Path(out_dir)
    trace_path = out / f"chain_{restart:02d}.jsonl"
    with TraceWriter(trace_path) as writer:
        samples = run_chain(train, init, cfg.move_config(), prior, engine, cfg.iterations, rng, callback=writer)
    entry: dict = {"restart": restart, "seed": seed, "trace": trace_path.name}
    if test is not None:
        write_metric_trace(out / f"metrics_{restart:02d}.csv", samples, test, cfg.h_final, train, prior)
        entry["metric_trace"] = f"metrics_{restart:02d}.csv"
    try:
        report = compute_report(samples, train, test, cfg.h_final, prior)
        entry.update(status="ok", **report.to_dict())
    except InsufficientSamplesError as exc:
        entry.update(
            status="insufficient-post-burnin-samples",
            detail=str(exc),
            n_iterations=len(samples),
            acceptance_rate=100.0 * float(np.mean([s.accepted for s in samples])),
        )
    return entry


def _guarded(args) -> dict:
    cfg, restart, train, test, out_dir = args
    try:
        return run_single_chain(cfg, restart, train, test, out_dir)
    except Exception as exc:  # one failing restart must not take the others down
        return {"restart": restart, "seed": cfg.seed + restart, "status": "failed",
                "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}


def run_experiment(cfg: RunConfig) -> dict:
    """Run every restart and write the report and manifest; returns the report."""
    cfg = cfg.resolved()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = prepare_data(cfg)
    save_manifest(
        out / "manifest.json",
        config=cfg.to_dict(),
        version=__version__,
        kernel_backend=kernels.BACKEND,
        python=platform.python_version(),
        numpy=np.__version__,
        train=train.manifest(),
        test=test.manifest() if test is not None else None,
        restart_seeds=[cfg.seed + r for r in range(cfg.restarts)],
    )
    jobs = [(cfg, r, train, test, str(out)) for r in range(cfg.restarts)]
    if cfg.jobs > 1 and cfg.restarts > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, cfg.restarts)) as pool:
            chains = list(pool.map(_guarded, jobs))
    else:
        chains = [_guarded(j) for j in jobs]
    from .metrics import MetricsReport

    ok = [c for c in chains if c.get("status") == "ok"]
    report: dict = {"method": cfg.method, "profile": cfg.profile, "chains": chains}
    if ok:
        fields = set(MetricsReport.__dataclass_fields__)
        report["summary"] = combine_reports([MetricsReport(**{k: c[k] for k in fields}) for c in ok])
    else:
        report["summary"] = None
    report["status"] = (
        "ok" if len(ok) == len(chains)
        else "failed" if any(c.get("status") == "failed" for c in chains)
        else "insufficient-post-burnin-samples"
    )
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report
