"""Plain-text experiment configs.

One ``key = value`` per line, keys carry a dotted section prefix
(``run.T = 200``), ``#`` starts a comment. Values are JSON scalars or arrays
(``[[0.5, 0.5], [0.5, 0.5]]`` for an explicit mixing matrix, row-major) or a
bare word for strings. Floats are written in shortest round-trip form.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from kgtmm.algorithm import OUTPUT_SELECTIONS, RunConfig, StepSizes, theorem_stepsizes
from kgtmm.diagnostics import LYAPUNOV_VARIANTS
from kgtmm.errors import ConfigError, ContractViolation, KGTMMError
from kgtmm.problems import (
    MinimaxProblem,
    ProblemDims,
    QuadraticProblem,
    make_quadratic_suite,
    make_robust_regression_suite,
)
from kgtmm.topology import GRAPH_KINDS, MixingMatrix, build_graph, metropolis_weights

PROBLEM_FAMILIES = ("quadratic", "robust_regression", "file")
STEP_MODES = ("theorem", "manual")
SWEEP_AXES = ("n", "K", "sigma", "p-topology", "seed")
ALGORITHMS = ("kgt_minimax", "local_sgda", "centralized_gda")


@dataclass(frozen=True)
class ProblemSpec:
    family: str = "quadratic"
    n: int = 8
    d_x: int = 5
    d_y: int = 4
    heterogeneity: float = 1.0
    target_kappa: float = 5.0
    mu: float = 1.0
    sigma: float = 0.0
    seed: int = 0
    path: str = ""


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "ring"
    n: int | None = None
    seed: int = 0
    prob: float = 0.3
    W: tuple[tuple[float, ...], ...] | None = None


@dataclass(frozen=True)
class RunSpec:
    T: int = 200
    K: int = 4
    step_mode: str = "theorem"
    v: float = 1.0
    eta_c_x: float | None = None
    eta_c_y: float | None = None
    eta_s_x: float | None = None
    eta_s_y: float | None = None
    seed: int = 0
    diag_every: int = 1
    output_selection: str = "randomized_tau"
    lyapunov_variant: str = "statement"


@dataclass(frozen=True)
class IOSpec:
    out_dir: str = "."
    label: str = "run"


@dataclass(frozen=True)
class SweepPart:
    axis: str | None = None
    values: tuple[Any, ...] = ()
    repeats: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    topology: TopologySpec = field(default_factory=TopologySpec)
    run: RunSpec = field(default_factory=RunSpec)
    io: IOSpec = field(default_factory=IOSpec)
    sweep: SweepPart = field(default_factory=SweepPart)
    algorithms: tuple[str, ...] = ()

    # -- validation -------------------------------------------------------
    def validate(self) -> None:
        p, t, r = self.problem, self.topology, self.run
        if p.family not in PROBLEM_FAMILIES:
            raise ConfigError(f"must be one of {PROBLEM_FAMILIES}", "problem.family")
        for name in ("n", "d_x", "d_y"):
            if int(getattr(p, name)) < 1:
                raise ConfigError("must be >= 1", f"problem.{name}")
        if p.heterogeneity < 0:
            raise ConfigError("must be >= 0", "problem.heterogeneity")
        if p.target_kappa < 1:
            raise ConfigError("must be >= 1", "problem.target_kappa")
        if p.sigma < 0:
            raise ConfigError("must be >= 0", "problem.sigma")
        if p.mu <= 0:
            raise ConfigError("must be > 0", "problem.mu")
        if p.family == "file" and not p.path:
            raise ConfigError("required when problem.family = file", "problem.path")
        if t.W is None:
            if t.kind not in GRAPH_KINDS:
                raise ConfigError(f"must be one of {GRAPH_KINDS}", "topology.kind")
            if t.n is not None and t.n != p.n:
                raise ConfigError(f"topology n={t.n} differs from problem n={p.n}", "topology.n")
        elif len(t.W) != p.n:
            raise ConfigError(f"explicit W has {len(t.W)} rows, problem n={p.n}", "topology.W")
        if r.step_mode not in STEP_MODES:
            raise ConfigError(f"must be one of {STEP_MODES}", "run.step_mode")
        if r.step_mode == "manual":
            for name in ("eta_c_x", "eta_c_y", "eta_s_x", "eta_s_y"):
                v = getattr(r, name)
                if v is None or not v > 0:
                    raise ConfigError("manual step sizes must all be given and > 0", f"run.{name}")
        elif r.v < 1:
            raise ConfigError("must be >= 1", "run.v")
        for name in ("T", "K", "diag_every"):
            if int(getattr(r, name)) < 1:
                raise ConfigError("must be >= 1", f"run.{name}")
        if r.output_selection not in OUTPUT_SELECTIONS:
            raise ConfigError(f"must be one of {OUTPUT_SELECTIONS}", "run.output_selection")
        if r.lyapunov_variant not in LYAPUNOV_VARIANTS:
            raise ConfigError(f"must be one of {LYAPUNOV_VARIANTS}", "run.lyapunov_variant")
        if not self.io.label or any(c in self.io.label for c in "/\\"):
            raise ConfigError("must be a nonempty file-name fragment", "io.label")
        s = self.sweep
        if s.axis is not None:
            if s.axis not in SWEEP_AXES:
                raise ConfigError(f"must be one of {SWEEP_AXES}", "sweep.axis")
            if not s.values:
                raise ConfigError("must be nonempty", "sweep.values")
            if s.repeats < 1:
                raise ConfigError("must be >= 1", "sweep.repeats")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; expected {ALGORITHMS}", "compare.algorithms")

    # -- materialization --------------------------------------------------
    def build_problem(self) -> MinimaxProblem:
        p = self.problem
        try:
            if p.family == "quadratic":
                return make_quadratic_suite(ProblemDims(p.n, p.d_x, p.d_y), p.heterogeneity, p.target_kappa, p.seed, p.sigma)
            if p.family == "robust_regression":
                return make_robust_regression_suite(ProblemDims(p.n, p.d_x, p.d_y), p.heterogeneity, p.mu, p.seed, p.sigma)
            data = json.loads(Path(p.path).read_text(encoding="utf-8"))
            problem = QuadraticProblem.from_dict(data).with_noise(p.sigma)
        except (ContractViolation, KGTMMError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), "problem") from exc
        if problem.n != p.n or problem.dims.d_x != p.d_x or problem.dims.d_y != p.d_y:
            raise ConfigError("problem file dimensions differ from problem.n/d_x/d_y", "problem.path")
        return problem

    def build_mixing(self) -> MixingMatrix:
        t = self.topology
        try:
            if t.W is not None:
                return MixingMatrix.from_matrix(np.array(t.W, dtype=float))
            return metropolis_weights(build_graph(t.kind, self.problem.n, t.seed, t.prob))
        except (ContractViolation, KGTMMError) as exc:
            raise ConfigError(str(exc), "topology") from exc

    def build_run_config(self, problem: MinimaxProblem, W: MixingMatrix) -> RunConfig:
        r = self.run
        if r.step_mode == "theorem":
            steps = theorem_stepsizes(problem, W.p, r.K, r.v)
        else:
            steps = StepSizes(r.eta_c_x, r.eta_c_y, r.eta_s_x, r.eta_s_y)
        return RunConfig(
            T=r.T,
            K=r.K,
            steps=steps,
            seed=r.seed,
            diag_every=r.diag_every,
            output_selection=r.output_selection,
            lyapunov_v=r.v,
            lyapunov_variant=r.lyapunov_variant,
        )

    def with_overrides(self, out_dir: str | None = None, seed: int | None = None) -> ExperimentConfig:
        cfg = self
        if out_dir is not None:
            cfg = replace(cfg, io=replace(cfg.io, out_dir=out_dir))
        if seed is not None:
            cfg = replace(cfg, run=replace(cfg.run, seed=int(seed)))
        return cfg


SECTIONS = {"problem": ProblemSpec, "topology": TopologySpec, "run": RunSpec, "io": IOSpec, "sweep": SweepPart}


def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (int, str)):
        return str(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) if not isinstance(x, str) else json.dumps(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _coerce(section: str, name: str, raw: Any, default: Any) -> Any:
    key = f"{section}.{name}"
    if raw is None:
        return None
    if name in ("W", "values"):
        if not isinstance(raw, list):
            raise ConfigError("must be an array", key)
        return _tuplify(raw)
    want = type(default) if default is not None else None
    if name in ("n",) and section == "topology":
        want = int
    if name.startswith("eta_"):
        want = float
    try:
        if want is int:
            if isinstance(raw, float) and raw.is_integer():
                raw = int(raw)
            if not isinstance(raw, int) or isinstance(raw, bool):
                raise ValueError
            return raw
        if want is float:
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ValueError
            return float(raw)
        if want is str:
            return str(raw)
    except ValueError:
        raise ConfigError(f"expected {want.__name__}, got {raw!r}", key) from None
    return raw


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text into a validated :class:`ExperimentConfig`."""
    values: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    algorithms: tuple[str, ...] = ()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "compare.algorithms":
            algorithms = tuple(a.strip() for a in raw.strip("[]").replace('"', "").split(",") if a.strip())
            continue
        if "." not in key:
            raise ConfigError(f"line {lineno}: key needs a section prefix", key)
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}", key)
        defaults = {f.name: f for f in fields(SECTIONS[section])}
        if name not in defaults:
            raise ConfigError("unknown key", key)
        default = SECTIONS[section]().__getattribute__(name)
        values[section][name] = _coerce(section, name, _parse_value(raw), default)
    cfg = ExperimentConfig(
        **{s: SECTIONS[s](**values[s]) for s in SECTIONS},
        algorithms=algorithms,
    )
    cfg.validate()
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        spec = getattr(cfg, section)
        for f in fields(spec):
            v = getattr(spec, f.name)
            if v is None or (section == "sweep" and spec.axis is None):
                continue
            lines.append(f"{section}.{f.name} = {_format_value(v)}")
    if cfg.algorithms:
        lines.append("compare.algorithms = " + ", ".join(cfg.algorithms))
    return "\n".join(lines) + "\n"


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
