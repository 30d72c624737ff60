"""Seeded runs, sweeps and algorithm comparisons that write CSV traces and summaries."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from kgtmm.algorithm import RunResult, run, run_centralized_gda_baseline, run_local_sgda_baseline
from kgtmm.diagnostics import CSV_FIELDS, DiagnosticsRecord
from kgtmm.errors import ConfigError, KGTMMError
from kgtmm.harness.config import ExperimentConfig, serialize_config

log = logging.getLogger(__name__)

RUNNERS = {
    "kgt_minimax": lambda problem, W, cfg, sink: run(problem, W, cfg, on_record=sink),
    "local_sgda": lambda problem, W, cfg, sink: run_local_sgda_baseline(problem, W, cfg, on_record=sink),
    "centralized_gda": lambda problem, W, cfg, sink: run_centralized_gda_baseline(problem, cfg, on_record=sink),
}


def fmt(v) -> str:
    """Shortest round-trip decimal; empty string for missing values."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


class TraceWriter:
    """Writes one complete CSV line per diagnostic round and flushes it immediately."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._fh.write(",".join(CSV_FIELDS) + "\n")
        self._fh.flush()

    def __call__(self, rec: DiagnosticsRecord) -> None:
        row = rec.as_row()
        self._fh.write(",".join(fmt(row[k]) for k in CSV_FIELDS) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


@dataclass
class ExperimentOutcome:
    label: str
    trace_path: Path
    summary_path: Path | None
    result: RunResult | None
    error: str | None = None


def _out_dir(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.io.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _summary_text(cfg: ExperimentConfig, problem, W, run_cfg, result: RunResult, wall: float, algorithm: str) -> str:
    s = run_cfg.steps
    final = result.trajectory[-1] if result.trajectory else None
    lines = [
        f"algorithm = {algorithm}",
        f"tau = {result.tau}",
        "x_out = [" + ", ".join(fmt(v) for v in result.x_out) + "]",
        f"problem.L = {fmt(problem.smoothness.L)}",
        f"problem.mu = {fmt(problem.smoothness.mu)}",
        f"problem.kappa = {fmt(problem.smoothness.kappa)}",
        f"topology.p = {fmt(W.p)}",
        f"steps.eta_c_x = {fmt(s.eta_c_x)}",
        f"steps.eta_c_y = {fmt(s.eta_c_y)}",
        f"steps.eta_s_x = {fmt(s.eta_s_x)}",
        f"steps.eta_s_y = {fmt(s.eta_s_y)}",
        f"steps.eta_x = {fmt(s.eta_x)}",
        f"steps.eta_y = {fmt(s.eta_y)}",
    ]
    if final is not None:
        lines += [f"final.{k} = {fmt(v)}" for k, v in final.as_row().items()]
    if final is not None and final.lyapunov is None:
        lines.append("notice = primal optimum unknown for this problem family; lyapunov and phi_gap skipped")
    lines.append(f"wall_time_s = {wall:.3f}")
    lines.append("")
    lines.append("# config")
    lines.append(serialize_config(cfg).rstrip("\n"))
    return "\n".join(lines) + "\n"


def _execute(cfg: ExperimentConfig, algorithm: str, label: str) -> ExperimentOutcome:
    problem = cfg.build_problem()
    W = cfg.build_mixing()
    run_cfg = cfg.build_run_config(problem, W)
    out = _out_dir(cfg)
    trace_path = out / f"{label}_trace.csv"
    writer = TraceWriter(trace_path)
    t0 = time.perf_counter()
    try:
        result = RUNNERS[algorithm](problem, W, run_cfg, writer)
    finally:
        writer.close()
    wall = time.perf_counter() - t0
    summary_path = out / f"{label}_summary.txt"
    summary_path.write_text(_summary_text(cfg, problem, W, run_cfg, result, wall, algorithm), encoding="utf-8")
    log.info("wrote %s and %s", trace_path, summary_path)
    return ExperimentOutcome(label, trace_path, summary_path, result)


def run_experiment(cfg: ExperimentConfig, algorithm: str = "kgt_minimax") -> ExperimentOutcome:
    """Run one configuration and write ``<label>_trace.csv`` and ``<label>_summary.txt``."""
    cfg.validate()
    return _execute(cfg, algorithm, cfg.io.label)


# -- sweeps -------------------------------------------------------------------


def sweep_points(cfg: ExperimentConfig) -> list[tuple[object, int, ExperimentConfig]]:
    """Expand a sweep into ``(value, repeat, config)`` triples in a fixed order."""
    s = cfg.sweep
    if s.axis is None:
        raise ConfigError("no sweep axis configured", "sweep.axis")
    points = []
    for value in s.values:
        for r in range(s.repeats):
            c = cfg
            if s.axis == "n":
                c = replace(c, problem=replace(c.problem, n=int(value)), topology=replace(c.topology, n=None))
            elif s.axis == "K":
                c = replace(c, run=replace(c.run, K=int(value)))
            elif s.axis == "sigma":
                c = replace(c, problem=replace(c.problem, sigma=float(value)))
            elif s.axis == "p-topology":
                c = replace(c, topology=replace(c.topology, kind=str(value)))
            elif s.axis == "seed":
                c = replace(c, run=replace(c.run, seed=int(value)))
            if s.axis != "seed" or s.repeats > 1:
                c = replace(c, run=replace(c.run, seed=c.run.seed + r))
            label = f"{cfg.io.label}_{s.axis}={value}_r{r}"
            c = replace(c, io=replace(c.io, label=label), sweep=replace(c.sweep, axis=None, values=(), repeats=1))
            c.validate()
            points.append((value, r, c))
    return points


def _sweep_worker(args) -> tuple[object, int, float | None, str | None]:
    value, r, c = args
    try:
        outcome = _execute(c, "kgt_minimax", c.io.label)
        return value, r, outcome.result.trajectory[-1].grad_phi_sq, None
    except KGTMMError as exc:
        return value, r, None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Run every sweep point (in parallel up to ``jobs``) and write ``sweep_summary.csv``.

    Failed points are recorded in the summary; the sweep continues.
    """
    cfg.validate()
    points = sweep_points(cfg)
    out = _out_dir(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, points))
    else:
        results = [_sweep_worker(p) for p in points]
    rows = []
    for value in cfg.sweep.values:
        vals = [g for v, _, g, err in results if v == value and err is None]
        errs = [err for v, _, _, err in results if v == value and err is not None]
        arr = np.array(vals, dtype=float)
        mean = float(arr.mean()) if len(arr) else None
        se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else (0.0 if len(arr) else None)
        rows.append((value, len(vals), len(errs), mean, se, " | ".join(errs)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([cfg.sweep.axis, "completed", "failed", "mean_final_grad_phi_sq", "stderr_final_grad_phi_sq", "errors"])
    for value, ok, bad, mean, se, errs in rows:
        w.writerow([value, ok, bad, fmt(mean), fmt(se), errs])
    path = out / "sweep_summary.csv"
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


# -- comparisons ----------------------------------------------------------------


def compare_algorithms(cfg: ExperimentConfig, algorithms) -> Path:
    """Run several algorithms on the identical problem, topology and seeds.

    Writes one trace per algorithm plus ``<label>_compare.csv`` with the
    per-round ``grad_phi_sq`` of each algorithm side by side.
    """
    algorithms = tuple(algorithms)
    if len(algorithms) < 2:
        raise ConfigError("compare needs at least two algorithms", "compare.algorithms")
    cfg = replace(cfg, algorithms=algorithms)
    cfg.validate()
    outcomes = {a: _execute(cfg, a, f"{cfg.io.label}_{a}") for a in algorithms}
    rounds = [r.t for r in outcomes[algorithms[0]].result.trajectory]
    by_alg = {a: {r.t: r.grad_phi_sq for r in o.result.trajectory} for a, o in outcomes.items()}
    lines = [",".join(["round", *(f"grad_phi_sq_{a}" for a in algorithms)])]
    for t in rounds:
        lines.append(",".join([str(t), *(fmt(by_alg[a].get(t)) for a in algorithms)]))
    path = _out_dir(cfg) / f"{cfg.io.label}_compare.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def default_out_dir() -> str | None:
    return os.environ.get("KGTMM_OUT")


__all__ = [
    "run_experiment",
    "run_sweep",
    "compare_algorithms",
    "sweep_points",
    "ExperimentOutcome",
]
