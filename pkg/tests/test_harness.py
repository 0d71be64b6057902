"""Config parsing, experiment dispatch, artifact determinism, and the
acceptance runner's failure modes."""

import hashlib
import json
import textwrap

import pytest

from killedmv.acceptance import acceptance_suite, criterion_ids
from killedmv.cli import main
from killedmv.config import load_config
from killedmv.errors import ConfigError
from killedmv.harness import run_experiment

from oracles import lp_transport_cost

SIM_TOML = """
[experiment]
kind = "simulate"
seed = 42

[domain]
kind = "interval"
a = 0.0
b = 1.0

[coefficients]
name = "linear"
beta = 0.0
sigma = 1.0

[initial]
sampler = "uniform"
lo = 0.2
hi = 0.8
n = 500

[grid]
t_final = 0.02
n_nodes = 4
dt = 1e-3
"""


def write(tmp_path, body, name="exp.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return path


def test_simulate_writes_artifacts_and_manifest(tmp_path):
    cfg = write(tmp_path, SIM_TOML)
    code, outdir = run_experiment(cfg, out=tmp_path / "out")
    assert code == 0
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"flow.csv", "summary.json"}
    for name, digest in manifest["outputs"].items():
        data = (outdir / name).read_bytes()
        assert hashlib.sha256(data).hexdigest() == digest
    assert manifest["seed"] == 42
    header = (outdir / "flow.csv").read_text().splitlines()[0]
    assert header == "t,mass,mean_0,second_moment_0"


def test_replay_is_byte_identical(tmp_path):
    cfg = write(tmp_path, SIM_TOML)
    _, out1 = run_experiment(cfg, out=tmp_path / "a")
    _, out2 = run_experiment(cfg, out=tmp_path / "b")
    for name in ("flow.csv", "summary.json", "manifest.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_seed_override_changes_outputs(tmp_path):
    cfg = write(tmp_path, SIM_TOML)
    _, out1 = run_experiment(cfg, out=tmp_path / "a")
    _, out2 = run_experiment(cfg, seed=43, out=tmp_path / "b")
    assert (out1 / "flow.csv").read_bytes() != (out2 / "flow.csv").read_bytes()
    assert json.loads((out2 / "manifest.json").read_text())["seed"] == 43


def test_threads_recorded_but_never_affect_results(tmp_path):
    cfg = write(tmp_path, SIM_TOML)
    _, out1 = run_experiment(cfg, threads=1, out=tmp_path / "a")
    _, out2 = run_experiment(cfg, threads=8, out=tmp_path / "b")
    assert (out1 / "flow.csv").read_bytes() == (out2 / "flow.csv").read_bytes()
    assert json.loads((out2 / "manifest.json").read_text())["threads"] == 8


def test_floats_carry_17_significant_digits(tmp_path):
    cfg = write(tmp_path, SIM_TOML)
    _, outdir = run_experiment(cfg, out=tmp_path / "out")
    row = (outdir / "flow.csv").read_text().splitlines()[2].split(",")
    # every emitted number must round-trip through its text form
    for cell in row:
        assert float(cell) == float("%.17g" % float(cell))


def test_parse_error_reports_line_and_column(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[experiment\nkind = 'simulate'\n")
    with pytest.raises(ConfigError, match=r"line 1"):
        load_config(path)


def test_unknown_coefficient_name_is_diagnosed(tmp_path):
    cfg = write(tmp_path, SIM_TOML.replace('name = "linear"',
                                           'name = "warp_drive"'))
    with pytest.raises(ConfigError, match="warp_drive"):
        load_config(cfg)
    assert main(["simulate", "--config", str(cfg)]) == 2


def test_unknown_experiment_kind_rejected(tmp_path):
    cfg = write(tmp_path, SIM_TOML.replace('kind = "simulate"',
                                           'kind = "teleport"', 1))
    with pytest.raises(ConfigError, match="teleport"):
        load_config(cfg)


def test_dt_must_divide_node_spacing(tmp_path):
    cfg = write(tmp_path, SIM_TOML.replace("dt = 1e-3", "dt = 3e-3"))
    with pytest.raises(ConfigError, match="divide"):
        load_config(cfg)


def test_subcommand_and_config_kind_must_agree(tmp_path):
    cfg = write(tmp_path, SIM_TOML)
    assert main(["picard", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 2


def test_picard_op_emits_trace_and_verdict(tmp_path):
    cfg = write(tmp_path, """
    [experiment]
    kind = "picard"
    seed = 7

    [domain]
    kind = "interval"
    a = -1.0
    b = 1.0

    [coefficients]
    name = "mean_field_attraction"
    beta = 1.0
    lam = 0.25
    sigma = 1.0

    [initial]
    sampler = "uniform"
    lo = -0.5
    hi = 0.5
    n = 800

    [grid]
    t_final = 0.1
    n_nodes = 10
    dt = 1e-3

    [picard]
    theta = 20.0
    tol = 1e-2
    """)
    code, outdir = run_experiment(cfg, out=tmp_path / "out")
    assert code == 0
    verdict = json.loads((outdir / "verdict.json").read_text())
    assert verdict["converged"] and verdict["iterations"] <= 8
    trace = (outdir / "trace.csv").read_text().splitlines()
    assert trace[0] == "iteration,distance"
    assert len(trace) == verdict["iterations"] + 1
    timed = (outdir / "trace_timed.csv").read_text().splitlines()
    assert timed[0] == "iteration,distance,wall_time"
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert set(manifest["outputs"]) >= {"trace.csv", "trace_timed.csv",
                                        "flow.csv", "verdict.json"}


def test_picard_trace_replay_identical_without_wall_time(tmp_path):
    body = SIM_TOML.replace('kind = "simulate"', 'kind = "picard"', 1)
    cfg = write(tmp_path, body)
    _, out1 = run_experiment(cfg, out=tmp_path / "a")
    _, out2 = run_experiment(cfg, out=tmp_path / "b")
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    assert (out1 / "flow.csv").read_bytes() == (out2 / "flow.csv").read_bytes()


def test_dist_op_matches_reference_lp(tmp_path):
    cfg = write(tmp_path, """
    [experiment]
    kind = "dist"

    [domain]
    kind = "interval"
    a = 0.0
    b = 1.0

    [initial]
    locations = [0.2, 0.4]
    weights = [0.3, 0.4]

    [initial2]
    locations = [0.5]
    weights = [0.6]
    """)
    code, outdir = run_experiment(cfg, out=tmp_path / "out")
    assert code == 0
    metric, value = (outdir / "dist.csv").read_text().splitlines()[1].split(",")
    assert metric == "w1_hat"
    expected = lp_transport_cost(
        load_config(cfg).domain, [(0.2, 0.3), (0.4, 0.4)], [(0.5, 0.6)])
    assert abs(float(value) - expected) < 1e-9


def test_couple_op_emits_node_rows_with_pass_flags(tmp_path):
    cfg = write(tmp_path, """
    [experiment]
    kind = "couple"
    seed = 3

    [domain]
    kind = "interval"
    a = 0.0
    b = 1.0

    [coefficients]
    name = "mass_coupling"
    beta = 1.0
    lam = 0.5
    sigma = 0.7

    [initial]
    sampler = "uniform"
    lo = 0.2
    hi = 0.8
    n = 600

    [initial2]
    sampler = "uniform"
    lo = 0.2
    hi = 0.8
    n = 600
    mass = 0.7

    [grid]
    t_final = 0.05
    n_nodes = 5
    dt = 1e-3
    """)
    code, outdir = run_experiment(cfg, out=tmp_path / "out")
    assert code == 0
    lines = (outdir / "couple.csv").read_text().splitlines()
    assert lines[0] == "t,w1hat_lhs,direct,killed1,killed2,pass_flag"
    assert len(lines) == 7
    assert all(line.rsplit(",", 1)[1] == "1" for line in lines[1:])


def test_girsanov_op_reports_unit_mean_weights(tmp_path):
    cfg = write(tmp_path, """
    [experiment]
    kind = "girsanov-check"
    seed = 5

    [domain]
    kind = "interval"
    a = 0.0
    b = 1.0

    [coefficients]
    name = "mass_coupling"
    beta = 1.0
    lam = 0.5
    sigma = 1.0

    [initial]
    sampler = "uniform"
    lo = 0.2
    hi = 0.8
    n = 800

    [initial2]
    sampler = "uniform"
    lo = 0.2
    hi = 0.8
    n = 800
    mass = 0.8

    [grid]
    t_final = 0.05
    n_nodes = 5
    dt = 1e-3
    """)
    code, outdir = run_experiment(cfg, out=tmp_path / "out")
    assert code == 0
    lines = (outdir / "girsanov.csv").read_text().splitlines()
    assert lines[0] == "t,mean_R,ess,v_dist,pass"
    assert all(line.rsplit(",", 1)[1] == "1" for line in lines[1:])


def test_validate_op_passes_for_builtin_field(tmp_path):
    cfg = write(tmp_path, """
    [experiment]
    kind = "validate"

    [domain]
    kind = "interval"
    a = 0.0
    b = 1.0

    [coefficients]
    name = "mass_coupling"
    beta = 1.0
    lam = 0.5
    sigma = 1.0

    [validate]
    samples = 50
    """)
    code, outdir = run_experiment(cfg, out=tmp_path / "out")
    assert code == 0
    report = json.loads((outdir / "validate.json").read_text())
    assert report["pass"] is True


def test_fp_residual_zero_tolerance_fails(tmp_path):
    body = SIM_TOML.replace('kind = "simulate"', 'kind = "fp-residual"', 1)
    body += "\n[fp_residual]\ntol = 0.0\n"
    cfg = write(tmp_path, body)
    code, outdir = run_experiment(cfg, out=tmp_path / "out")
    assert code == 3
    payload = json.loads((outdir / "fp.json").read_text())
    assert payload["passed"] is False and payload["residual"] > 0.0


def test_acceptance_registry_has_all_criteria():
    ids = criterion_ids()
    assert len(ids) >= 8
    assert ids == ["A%d" % k for k in range(1, 12)]


def test_acceptance_subset_runs_and_passes():
    results, ok = acceptance_suite("fast", only=["A2", "A10"])
    assert ok and [r.cid for r in results] == ["A2", "A10"]
    assert all(r.passed for r in results)


def test_forced_failure_tolerance_zero(tmp_path):
    results, ok = acceptance_suite("fast", tolerance_scale=0.0, only=["A2"])
    assert not ok and results[0].passed is False
    cfg = tmp_path / "force.toml"
    cfg.write_text('[accept]\ncriteria = ["A2"]\ntolerance_scale = 0.0\n')
    assert main(["accept", "--tier", "fast", "--config", str(cfg)]) == 3


def test_accept_cli_writes_report(tmp_path, capsys):
    cfg = tmp_path / "sub.toml"
    cfg.write_text('[accept]\ncriteria = ["A3"]\n')
    code = main(["accept", "--tier", "fast", "--config", str(cfg),
                 "--out", str(tmp_path / "rep")])
    assert code == 0
    assert "A3   PASS" in capsys.readouterr().out
    payload = json.loads((tmp_path / "rep" / "results.json").read_text())
    assert payload[0]["id"] == "A3" and payload[0]["passed"] is True


def test_point_sampler_and_subprobability_mass(tmp_path):
    cfg = write(tmp_path, SIM_TOML.replace(
        'sampler = "uniform"\nlo = 0.2\nhi = 0.8\nn = 500',
        'sampler = "point"\nat = 0.5\nn = 200\nmass = 0.5'))
    conf = load_config(cfg)
    assert conf.initial.mass() == pytest.approx(0.5)
    locs, _ = conf.initial.interior()
    assert (locs == 0.5).all()
