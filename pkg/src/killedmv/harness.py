"""Experiment runner: dispatch, deterministic artifacts, manifest."""

import hashlib
import json
import platform
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import load_config
from .coefficients import validate_hypotheses
from .coupling import build_projection_coupling, pw_bound_terms
from .errors import ConfigError, KmvError, NonConvergenceError
from .girsanov import reweight_flow
from .measures import MeasureFlow, quadratic_lyapunov
from .picard import DirichletTestFunction, PicardConfig, \
    fokker_planck_residual, picard_solve
from .sde import ensemble_from_measure, simulate_flow
from .transport import w1, w1_hat, weighted_variation

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_CHECK_FAILED = 3


def _fmt(value):
    return "%.17g" % float(value)


def _write_csv(path, header, rows):
    """Rows of floats (formatted to 17 significant digits) or strings."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            cell if isinstance(cell, str) else _fmt(cell) for cell in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _measure_stats(measure):
    locs, w = measure.interior()
    mass = float(w.sum())
    if mass <= 0.0:
        zeros = np.zeros(measure.domain.dim)
        return 0.0, zeros, zeros
    mean = (w[:, None] * locs).sum(axis=0) / mass
    m2 = (w[:, None] * locs ** 2).sum(axis=0) / mass
    return mass, mean, m2


def _flow_rows(flow):
    dim = flow.snapshots[0].domain.dim
    header = ["t", "mass"]
    header += ["mean_%d" % i for i in range(dim)]
    header += ["second_moment_%d" % i for i in range(dim)]
    rows = []
    for t, snap in zip(flow.times, flow.snapshots):
        mass, mean, m2 = _measure_stats(snap)
        rows.append([t, mass, *mean, *m2])
    return header, rows


def _constant_flow(cfg, measure):
    return MeasureFlow.constant(measure, cfg.grid.times())


def _ensemble(cfg, seed=None):
    n = len(cfg.initial.weights)
    return ensemble_from_measure(cfg.domain, cfg.initial, n,
                                 cfg.seed if seed is None else seed)


def _op_simulate(cfg, outdir):
    flow_in = _constant_flow(cfg, cfg.initial)
    run, out = simulate_flow(cfg.coeffs, flow_in, _ensemble(cfg), cfg.grid.dt,
                             semantics=cfg.semantics,
                             bridge_correction=cfg.bridge_correction,
                             record_nodes=False)
    header, rows = _flow_rows(out)
    _write_csv(outdir / "flow.csv", header, rows)
    stats = run.exit_stats()
    summary = {
        "final_mass": float(out.snapshots[-1].mass()),
        "exited_fraction": stats["exited_fraction"],
        "mean_exit_time": (None if not np.isfinite(stats["mean_exit_time"])
                           else stats["mean_exit_time"]),
    }
    _write_json(outdir / "summary.json", summary)
    return ["flow.csv", "summary.json"], EXIT_OK


def _picard_config(cfg):
    opts = cfg.options.get("picard", {})
    return PicardConfig(
        t_final=cfg.grid.t_final, n_nodes=cfg.grid.n_nodes,
        particles_n=len(cfg.initial.weights), dt=cfg.grid.dt,
        theta=float(opts.get("theta", 20.0)),
        tol=float(opts.get("tol", 1e-3)),
        max_iter=int(opts.get("max_iter", 8)),
        metric_kind=opts.get("metric", "w1_hat"),
        bridge_correction=cfg.bridge_correction,
        ess_floor=float(opts.get("ess_floor", 0.2)),
        bins=opts.get("bins"))


def _op_picard(cfg, outdir):
    pconf = _picard_config(cfg)
    t0 = time.perf_counter()
    try:
        flow, trace = picard_solve(cfg.coeffs, cfg.initial, pconf,
                                   seed=cfg.seed)
        converged = True
    except NonConvergenceError as exc:
        flow, trace, converged = None, exc.trace, False
    elapsed = time.perf_counter() - t0
    _write_csv(outdir / "trace.csv", ["iteration", "distance"],
               [[str(int(it)), _fmt(d)] for it, d in trace])
    # wall-clock column lives in its own file so trace.csv stays replayable
    _write_csv(outdir / "trace_timed.csv",
               ["iteration", "distance", "wall_time"],
               [[str(int(it)), _fmt(d), _fmt(elapsed / max(len(trace), 1))]
                for it, d in trace])
    files = ["trace.csv", "trace_timed.csv", "verdict.json"]
    if flow is not None:
        header, rows = _flow_rows(flow)
        _write_csv(outdir / "flow.csv", header, rows)
        files.append("flow.csv")
    _write_json(outdir / "verdict.json", {
        "converged": converged,
        "iterations": len(trace),
        "final_distance": float(trace[-1][1]) if trace else None,
    })
    return files, EXIT_OK if converged else EXIT_CHECK_FAILED


def _op_couple(cfg, outdir):
    opts = cfg.options.get("couple", {})
    r0 = float(opts.get("r0", 1.0))
    flow1 = _constant_flow(cfg, cfg.initial)
    flow2 = _constant_flow(cfg, cfg.initial2)
    initials = (_ensemble(cfg), _ensemble(cfg))
    coupling = build_projection_coupling(cfg.coeffs, flow1, flow2, cfg.seed,
                                         initials, cfg.grid.dt,
                                         bridge_correction=cfg.bridge_correction)
    rows = []
    all_pass = True
    for k, t in enumerate(coupling.times):
        terms = pw_bound_terms(coupling, k, r0=r0)
        slack = 3.0 * np.sqrt(terms["se_direct"] ** 2
                              + terms["se_killed1"] ** 2
                              + terms["se_killed2"] ** 2)
        ok = terms["lhs"] <= (terms["direct"] + terms["killed1"]
                              + terms["killed2"] + slack)
        all_pass &= ok
        rows.append([t, terms["lhs"], terms["direct"], terms["killed1"],
                     terms["killed2"], str(int(ok))])
    _write_csv(outdir / "couple.csv",
               ["t", "w1hat_lhs", "direct", "killed1", "killed2", "pass_flag"],
               rows)
    return ["couple.csv"], EXIT_OK if all_pass else EXIT_CHECK_FAILED


def _op_dist(cfg, outdir):
    opts = cfg.options.get("dist", {})
    metric = opts.get("metric", "w1_hat")
    if metric == "w1_hat":
        value = w1_hat(cfg.initial, cfg.initial2)
    elif metric == "w1":
        value = w1(cfg.initial, cfg.initial2)
    else:
        v = quadratic_lyapunov(cap=opts.get("cap"))
        bins = None
        if cfg.domain.dim == 1:
            pts = np.concatenate([cfg.initial.interior()[0],
                                  cfg.initial2.interior()[0]])
            if len(pts):
                lo, hi = float(pts.min()), float(pts.max())
                pad = 1e-9 * max(1.0, abs(lo), abs(hi))
                bins = np.linspace(lo - pad, hi + pad,
                                   int(opts.get("bins", 128)) + 1)
        value = weighted_variation(cfg.initial, cfg.initial2, v, bins=bins)
    _write_csv(outdir / "dist.csv", ["metric", "value"],
               [[metric, value]])
    return ["dist.csv"], EXIT_OK


def _op_girsanov(cfg, outdir):
    flow1 = _constant_flow(cfg, cfg.initial)
    flow2 = _constant_flow(cfg, cfg.initial2)
    base_run, out1 = simulate_flow(cfg.coeffs, flow1, _ensemble(cfg),
                                   cfg.grid.dt,
                                   bridge_correction=cfg.bridge_correction,
                                   record_nodes=True)
    rw = reweight_flow(cfg.coeffs, flow1, flow2, base_run)
    v = quadratic_lyapunov(cap=cfg.options.get("girsanov", {}).get("cap"))
    n = base_run.node_positions[0].shape[0]
    rows = []
    all_pass = True
    for k, t in enumerate(rw.flow.times):
        lw = rw.log_weights[k]
        r = np.exp(lw)
        se = float(r.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        ok = abs(rw.mean_r[k] - 1.0) <= 3.0 * se + 1e-12
        all_pass &= ok
        v_dist = weighted_variation(out1.snapshots[k], rw.flow.snapshots[k], v)
        rows.append([t, rw.mean_r[k], rw.ess[k], v_dist, str(int(ok))])
    _write_csv(outdir / "girsanov.csv",
               ["t", "mean_R", "ess", "v_dist", "pass"], rows)
    return ["girsanov.csv"], EXIT_OK if all_pass else EXIT_CHECK_FAILED


def _op_validate(cfg, outdir):
    opts = cfg.options.get("validate", {})
    samples = int(opts.get("samples", 200))
    report = validate_hypotheses(cfg.coeffs, samples, seed=cfg.seed)
    ok = bool(report["pass"])
    _write_json(outdir / "validate.json", json.loads(
        json.dumps(report, default=_json_safe)))
    return ["validate.json"], EXIT_OK if ok else EXIT_CHECK_FAILED


def _json_safe(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return str(value)


def _op_fp_residual(cfg, outdir):
    opts = cfg.options.get("fp_residual", {})
    fname = opts.get("f", "interval_sine")
    if fname != "interval_sine":
        raise KmvError("unknown test function %r for fp-residual" % (fname,))
    f = DirichletTestFunction.interval_sine(cfg.domain)
    flow_in = _constant_flow(cfg, cfg.initial)
    _, out = simulate_flow(cfg.coeffs, flow_in, _ensemble(cfg), cfg.grid.dt,
                           semantics=cfg.semantics,
                           bridge_correction=cfg.bridge_correction,
                           record_nodes=False)
    residual = fokker_planck_residual(out, cfg.coeffs, f)
    tol = opts.get("tol")
    ok = True if tol is None else residual <= float(tol)
    _write_json(outdir / "fp.json", {
        "residual": residual,
        "tol": None if tol is None else float(tol),
        "passed": ok,
    })
    return ["fp.json"], EXIT_OK if ok else EXIT_CHECK_FAILED


_OPS = {
    "simulate": _op_simulate,
    "picard": _op_picard,
    "couple": _op_couple,
    "dist": _op_dist,
    "girsanov-check": _op_girsanov,
    "validate": _op_validate,
    "fp-residual": _op_fp_residual,
}


def run_experiment(config_path, seed=None, out=None, threads=None,
                   expect_kind=None):
    """Run the experiment described by a config file.

    Returns (exit_code, output_dir). Artifacts land in the output directory
    together with manifest.json listing a content hash for every file.
    """
    cfg = load_config(config_path, seed_override=seed)
    if expect_kind is not None and cfg.kind != expect_kind:
        raise ConfigError("config declares kind %r but the %r command was "
                          "invoked" % (cfg.kind, expect_kind))
    if threads is not None:
        cfg.threads = int(threads)
    outdir = Path(out if out is not None else (cfg.out or "results"))
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        files, code = _OPS[cfg.kind](cfg, outdir)
    except KmvError as exc:
        exc.args = ("experiment %r (%s): %s"
                    % (cfg.kind, config_path, exc),) + exc.args[1:]
        raise
    manifest = {
        "kind": cfg.kind,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config_sha256": _sha256(config_path),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "killedmv": __version__,
        },
        "outputs": {name: _sha256(outdir / name) for name in sorted(files)},
    }
    _write_json(outdir / "manifest.json", manifest)
    return code, outdir
