import csv
import json
from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgtmm.diagnostics import CSV_FIELDS
from kgtmm.errors import ConfigError
from kgtmm.harness import compare_algorithms, parse_config, run_experiment, run_sweep, serialize_config
from kgtmm.harness.cli import main
from kgtmm.harness.config import SECTIONS, ExperimentConfig, IOSpec, ProblemSpec, RunSpec, TopologySpec
from kgtmm.harness.experiment import fmt, sweep_points
from kgtmm.problems import ProblemDims, make_quadratic_suite

BASE = """
problem.n = 4
problem.d_x = 3
problem.d_y = 2
problem.heterogeneity = 1.0
problem.target_kappa = 4.0
topology.kind = ring
run.T = 10
run.K = 2
run.step_mode = manual
run.eta_c_x = 0.004
run.eta_c_y = 0.02
run.eta_s_x = 1.0
run.eta_s_y = 1.0
run.output_selection = final
io.label = t
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# -- config format -------------------------------------------------------------------


def test_parse_sections_and_types():
    cfg = parse_config(BASE + "topology.W = [[0.5, 0.5, 0, 0], [0.5, 0, 0.5, 0], [0, 0.5, 0, 0.5], [0, 0, 0.5, 0.5]]\n")
    assert cfg.problem.n == 4 and isinstance(cfg.run.eta_c_x, float)
    assert cfg.topology.W[1] == (0.5, 0.0, 0.5, 0.0)
    assert cfg.build_mixing().n == 4


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nrun.T = 7  # trailing\n")
    assert cfg.run.T == 7


@pytest.mark.parametrize(
    "line,field",
    [
        ("run.T = 0", "run.T"),
        ("run.T = many", "run.T"),
        ("problem.family = cubic", "problem.family"),
        ("bogus.x = 1", "bogus.x"),
        ("run.colour = red", "run.colour"),
        ("topology.n = 5", "topology.n"),
        ("run.step_mode = manual", "run.eta_c_x"),
        ("sweep.axis = colour", "sweep.axis"),
        ("run.v = 0.5", "run.v"),
    ],
)
def test_invalid_configs_name_the_field(line, field):
    with pytest.raises(ConfigError) as info:
        parse_config(line + "\n")
    assert info.value.field == field


def test_missing_equals_sign():
    with pytest.raises(ConfigError):
        parse_config("run.T 5\n")


def test_round_trip_of_sample():
    cfg = parse_config(BASE + "sweep.axis = n\nsweep.values = [2, 4]\nsweep.repeats = 2\ncompare.algorithms = kgt_minimax, local_sgda\n")
    assert parse_config(serialize_config(cfg)) == cfg


@settings(max_examples=100, deadline=None)
@given(
    n=st.integers(1, 30),
    T=st.integers(1, 10**6),
    kappa=st.floats(1.0, 1e3, allow_nan=False),
    sigma=st.floats(0.0, 10.0, allow_nan=False),
    eta=st.floats(1e-9, 1.0, allow_nan=False),
    kind=st.sampled_from(["ring", "star", "path", "complete", "erdos_renyi"]),
    label=st.from_regex(r"[A-Za-z0-9_\-]{1,12}", fullmatch=True),
)
def test_round_trip_property(n, T, kappa, sigma, eta, kind, label):
    cfg = ExperimentConfig(
        problem=ProblemSpec(n=n, target_kappa=kappa, sigma=sigma),
        topology=TopologySpec(kind=kind),
        run=RunSpec(T=T, step_mode="manual", eta_c_x=eta, eta_c_y=eta, eta_s_x=1.0, eta_s_y=eta),
        io=IOSpec(label=label),
    )
    cfg.validate()
    back = parse_config(serialize_config(cfg))
    for section in SECTIONS:
        for f in fields(SECTIONS[section]):
            assert getattr(getattr(back, section), f.name) == getattr(getattr(cfg, section), f.name)


def test_fmt_is_round_trip():
    for v in (0.1, 1 / 3, 1e-300, 12345.678):
        assert float(fmt(v)) == v
    assert fmt(None) == "" and fmt(float("nan")) == "" and fmt(7) == "7"


# -- run_experiment ------------------------------------------------------------------------


def test_trace_has_one_row_per_boundary(tmp_path):
    out = run_experiment(parse_config(BASE).with_overrides(out_dir=str(tmp_path)))
    lines = out.trace_path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 12
    rows = read_rows(out.trace_path)
    assert [int(r["round"]) for r in rows] == list(range(11))
    assert all(r["lyapunov"] != "" and float(r["phi_gap"]) >= 0 for r in rows)


def test_rerun_is_byte_identical(tmp_path):
    cfg = parse_config(BASE + "problem.sigma = 0.5\nrun.output_selection = randomized_tau\n")
    a = run_experiment(cfg.with_overrides(out_dir=str(tmp_path / "a")))
    b = run_experiment(cfg.with_overrides(out_dir=str(tmp_path / "b")))
    assert a.trace_path.read_bytes() == b.trace_path.read_bytes()


def test_summary_echoes_theorem_steps(tmp_path):
    # one client with L = mu = 1, so kappa = 1 and p = 1
    text = """
problem.n = 1
problem.d_x = 2
problem.d_y = 2
problem.heterogeneity = 0.0
problem.target_kappa = 1.0
run.T = 3
run.K = 1
run.step_mode = theorem
run.v = 1.0
io.label = unit
"""
    out = run_experiment(parse_config(text).with_overrides(out_dir=str(tmp_path)))
    head = out.summary_path.read_text().split("# config")[0]
    summary = dict(line.split(" = ", 1) for line in head.splitlines() if " = " in line)
    assert float(summary["steps.eta_c_y"]) == pytest.approx(1 / 300, rel=1e-15)
    assert float(summary["topology.p"]) == 1.0
    assert "wall_time_s" in summary and "# config" in out.summary_path.read_text()


def test_problem_from_file(tmp_path):
    p = make_quadratic_suite(ProblemDims(3, 2, 2), 0.5, 3.0, seed=4)
    path = tmp_path / "prob.json"
    path.write_text(json.dumps(p.to_dict()))
    text = f"problem.family = file\nproblem.path = {path}\nproblem.n = 3\nproblem.d_x = 2\nproblem.d_y = 2\nrun.T = 2\nio.label = f\n"
    out = run_experiment(parse_config(text).with_overrides(out_dir=str(tmp_path)))
    assert len(read_rows(out.trace_path)) == 3


def test_robust_regression_family_skips_lyapunov(tmp_path):
    text = "problem.family = robust_regression\nproblem.n = 3\nproblem.mu = 0.5\nrun.T = 2\nio.label = rr\n"
    out = run_experiment(parse_config(text).with_overrides(out_dir=str(tmp_path)))
    rows = read_rows(out.trace_path)
    assert all(r["lyapunov"] == "" and r["phi_gap"] == "" for r in rows)
    assert "notice" in out.summary_path.read_text()


# -- CLI -----------------------------------------------------------------------------------------


def test_cli_run(tmp_path, capsys):
    path = write_cfg(tmp_path, BASE)
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "t_trace.csv").exists()


def test_cli_seed_override(tmp_path):
    path = write_cfg(tmp_path, BASE + "problem.sigma = 1.0\n")
    main(["run", str(path), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["run", str(path), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "t_trace.csv").read_bytes() != (tmp_path / "b" / "t_trace.csv").read_bytes()


def test_cli_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("KGTMM_OUT", str(tmp_path / "env"))
    assert main(["run", str(write_cfg(tmp_path, BASE))]) == 0
    assert (tmp_path / "env" / "t_trace.csv").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["run", str(write_cfg(tmp_path, "run.K = -1\n"))]) == 2
    assert "run.K" in capsys.readouterr().err


def test_cli_infeasible_problem_is_a_config_error(tmp_path):
    assert main(["run", str(write_cfg(tmp_path, "problem.heterogeneity = 5.0\nproblem.target_kappa = 1.0\n")), "--out", str(tmp_path)]) == 2


def test_cli_divergence_exit_code(tmp_path, capsys):
    text = BASE.replace("run.eta_c_x = 0.004", "run.eta_c_x = 5.0").replace("run.eta_c_y = 0.02", "run.eta_c_y = 5.0").replace("run.T = 10", "run.T = 500")
    assert main(["run", str(write_cfg(tmp_path, text)), "--out", str(tmp_path)]) == 3
    assert "round" in capsys.readouterr().err
    # rows written before the abort are complete lines
    lines = (tmp_path / "t_trace.csv").read_text().split("\n")
    assert lines[-1] == "" and all(len(l.split(",")) == len(CSV_FIELDS) for l in lines[:-1])


def test_cli_io_error_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "missing.cfg")]) == 4
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", str(write_cfg(tmp_path, BASE)), "--out", str(blocker / "sub")]) == 4


# -- sweeps ----------------------------------------------------------------------------------------


def test_seed_sweep_bookkeeping(tmp_path):
    cfg = parse_config(BASE + "problem.sigma = 0.5\nsweep.axis = seed\nsweep.values = [1, 2, 3]\n").with_overrides(out_dir=str(tmp_path))
    summary = run_sweep(cfg)
    assert len(list(tmp_path.glob("*_trace.csv"))) == 3
    rows = read_rows(summary)
    assert [r["seed"] for r in rows] == ["1", "2", "3"]
    assert all(r["completed"] == "1" and r["failed"] == "0" for r in rows)


def test_sweep_points_offset_seeds():
    cfg = parse_config(BASE + "run.seed = 10\nsweep.axis = K\nsweep.values = [1, 2]\nsweep.repeats = 2\n")
    pts = sweep_points(cfg)
    assert [(v, r, c.run.K, c.run.seed) for v, r, c in pts] == [(1, 0, 1, 10), (1, 1, 1, 11), (2, 0, 2, 10), (2, 1, 2, 11)]
    assert len({c.io.label for _, _, c in pts}) == 4


def test_sweep_records_failures_and_continues(tmp_path):
    text = BASE.replace("run.T = 10", "run.T = 300") + "sweep.axis = K\nsweep.values = [1, 400]\n"
    text = text.replace("run.eta_c_x = 0.004", "run.eta_c_x = 0.05").replace("run.eta_c_y = 0.02", "run.eta_c_y = 0.5")
    rows = read_rows(run_sweep(parse_config(text).with_overrides(out_dir=str(tmp_path))))
    assert rows[0]["failed"] == "0" or rows[1]["failed"] == "1"
    assert any("DivergenceError" in r["errors"] for r in rows)


def test_sigma_sweep_orders_noise_floors(tmp_path):
    text = BASE.replace("run.T = 10", "run.T = 300") + "run.diag_every = 300\nsweep.axis = sigma\nsweep.values = [0, 0.5, 1.0]\nsweep.repeats = 3\n"
    rows = read_rows(run_sweep(parse_config(text).with_overrides(out_dir=str(tmp_path))))
    means = [float(r["mean_final_grad_phi_sq"]) for r in rows]
    assert means[0] <= means[1] <= means[2]


def test_sweep_parallel_matches_serial(tmp_path):
    text = BASE + "problem.sigma = 0.5\nsweep.axis = n\nsweep.values = [2, 3, 4, 5]\n"
    cfg = parse_config(text)
    a = run_sweep(cfg.with_overrides(out_dir=str(tmp_path / "a")), jobs=1)
    b = run_sweep(cfg.with_overrides(out_dir=str(tmp_path / "b")), jobs=4)
    assert a.read_bytes() == b.read_bytes()
    for f in (tmp_path / "a").glob("*_trace.csv"):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


# -- comparisons ----------------------------------------------------------------------------------------


def test_compare_needs_two_algorithms(tmp_path):
    with pytest.raises(ConfigError):
        compare_algorithms(parse_config(BASE).with_overrides(out_dir=str(tmp_path)), ["kgt_minimax"])


def test_compare_homogeneous_problem(tmp_path):
    cfg = parse_config(BASE.replace("problem.heterogeneity = 1.0", "problem.heterogeneity = 0.0")).with_overrides(out_dir=str(tmp_path))
    rows = read_rows(compare_algorithms(cfg, ["kgt_minimax", "local_sgda"]))
    assert len(rows) == 11
    for r in rows:
        assert float(r["grad_phi_sq_kgt_minimax"]) == pytest.approx(float(r["grad_phi_sq_local_sgda"]), rel=1e-10, abs=1e-20)


def test_compare_single_client_reductions(tmp_path):
    text = BASE.replace("problem.n = 4", "problem.n = 1").replace("run.K = 2", "run.K = 1") + "run.T = 40\n"
    from kgtmm.harness.experiment import _execute

    cfg = parse_config(text).with_overrides(out_dir=str(tmp_path))
    xs = {a: _execute(cfg, a, a).result.x_bar for a in ("kgt_minimax", "local_sgda", "centralized_gda")}
    assert np.abs(xs["kgt_minimax"] - xs["local_sgda"]).max() <= 1e-10
    assert np.abs(xs["kgt_minimax"] - xs["centralized_gda"]).max() <= 1e-10


def test_cli_compare(tmp_path):
    path = write_cfg(tmp_path, BASE)
    assert main(["compare", str(path), "--out", str(tmp_path), "--algos", "kgt_minimax", "local_sgda", "centralized_gda"]) == 0
    header = (tmp_path / "t_compare.csv").read_text().splitlines()[0]
    assert header == "round,grad_phi_sq_kgt_minimax,grad_phi_sq_local_sgda,grad_phi_sq_centralized_gda"
    for a in ("kgt_minimax", "local_sgda", "centralized_gda"):
        assert (tmp_path / f"t_{a}_trace.csv").exists()


@pytest.mark.slow
def test_compare_heterogeneous_problem(tmp_path):
    text = BASE.replace("run.T = 10", "run.T = 3000").replace("problem.n = 4", "problem.n = 8") + "problem.d_x = 5\nproblem.d_y = 4\nrun.K = 4\nrun.diag_every = 1000\n"
    cfg = parse_config(text).with_overrides(out_dir=str(tmp_path))
    rows = read_rows(compare_algorithms(cfg, ["kgt_minimax", "local_sgda"]))
    assert float(rows[-1]["grad_phi_sq_kgt_minimax"]) <= 1e-8
    assert float(rows[-1]["grad_phi_sq_local_sgda"]) >= 1e-4


def test_sample_configs_parse():
    from pathlib import Path

    for path in sorted(Path(__file__).parent.parent.joinpath("configs").glob("*.cfg")):
        parse_config(path.read_text())
