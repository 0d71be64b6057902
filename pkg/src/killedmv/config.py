"""Experiment configuration: TOML files to validated run descriptions."""

from dataclasses import dataclass, field

import numpy as np
import tomli

from .coefficients import expression_field, field_names, make_field
from .errors import ConfigError
from .geometry import Domain
from .measures import SubProbMeasure

EXPERIMENT_KINDS = (
    "simulate", "picard", "couple", "dist", "girsanov-check",
    "validate", "fp-residual",
)
_METRIC_NAMES = ("w1_hat", "w1", "weighted_variation")
_GRIDLESS = ("dist", "validate")


@dataclass
class GridSpec:
    t_final: float
    n_nodes: int
    dt: float

    def times(self):
        return np.linspace(0.0, self.t_final, self.n_nodes + 1)


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    threads: int
    out: str | None
    domain: Domain | None
    coeffs: object | None
    initial: SubProbMeasure | None
    initial2: SubProbMeasure | None
    grid: GridSpec | None
    semantics: str
    bridge_correction: bool
    options: dict = field(default_factory=dict)


def _require(table, key, where):
    if key not in table:
        raise ConfigError("[%s] is missing required key %r" % (where, key))
    return table[key]


def _scalar(table, key, where, cast, default=None):
    if key not in table:
        if default is None:
            raise ConfigError("[%s] is missing required key %r" % (where, key))
        return default
    try:
        return cast(table[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(
            "[%s] key %r has an unusable value: %s" % (where, key, exc))


def _build_domain(table):
    kind = _require(table, "kind", "domain")
    extra = {}
    if "r0" in table:
        extra["r0"] = float(table["r0"])
    if kind == "interval":
        return Domain.interval(
            _scalar(table, "a", "domain", float),
            _scalar(table, "b", "domain", float), **extra)
    if kind == "ball":
        center = np.asarray(_require(table, "center", "domain"), dtype=float)
        return Domain.ball(center, _scalar(table, "radius", "domain", float),
                           **extra)
    if kind == "half_space":
        normal = np.asarray(_require(table, "normal", "domain"), dtype=float)
        return Domain.half_space(
            normal, _scalar(table, "offset", "domain", float), **extra)
    raise ConfigError("[domain] kind %r is not one of interval, ball, "
                      "half_space" % (kind,))


def _build_coeffs(table, domain):
    if "name" in table:
        name = table["name"]
        if name not in field_names():
            raise ConfigError(
                "[coefficients] name %r is not a registered field; known: %s"
                % (name, ", ".join(field_names())))
        params = {k: v for k, v in table.items() if k != "name"}
        try:
            return make_field(name, domain=domain, **params)
        except TypeError as exc:
            raise ConfigError("[coefficients] %r rejected its parameters: %s"
                              % (name, exc))
    if "drift" in table and "diffusion" in table:
        declared = {k: v for k, v in table.items()
                    if k not in ("drift", "diffusion")}
        return expression_field(table["drift"], table["diffusion"],
                                domain=domain, **declared)
    raise ConfigError("[coefficients] needs either a registered 'name' or "
                      "'drift' and 'diffusion' expressions")


def _build_initial(table, domain, seed, where):
    if "locations" in table:
        locs = np.asarray(table["locations"], dtype=float)
        if locs.ndim == 1:
            locs = locs[:, None]
        weights = table.get("weights")
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
        return SubProbMeasure.from_points(domain, locs, weights)
    sampler = _require(table, "sampler", where)
    n = _scalar(table, "n", where, int)
    if n <= 0:
        raise ConfigError("[%s] n must be positive" % (where,))
    mass = _scalar(table, "mass", where, float, default=1.0)
    gen = np.random.default_rng(seed)
    if sampler == "uniform":
        lo = np.atleast_1d(np.asarray(_require(table, "lo", where), float))
        hi = np.atleast_1d(np.asarray(_require(table, "hi", where), float))
        pts = lo + (hi - lo) * gen.random((n, domain.dim))
    elif sampler == "point":
        at = np.atleast_1d(np.asarray(_require(table, "at", where), float))
        pts = np.repeat(at[None, :], n, axis=0)
    elif sampler == "gaussian":
        mean = np.atleast_1d(np.asarray(_require(table, "mean", where), float))
        sd = _scalar(table, "std", where, float)
        pts = mean + sd * gen.standard_normal((n, domain.dim))
        inside = domain.signed_distance(pts) > 0
        pts = pts[inside]
        if len(pts) == 0:
            raise ConfigError("[%s] gaussian sampler produced no interior "
                              "atoms" % (where,))
    else:
        raise ConfigError("[%s] sampler %r is not one of uniform, point, "
                          "gaussian" % (where, sampler))
    w = np.full(len(pts), mass / n)
    return SubProbMeasure.from_points(domain, pts, w)


def _build_grid(table):
    t_final = _scalar(table, "t_final", "grid", float)
    n_nodes = _scalar(table, "n_nodes", "grid", int)
    dt = _scalar(table, "dt", "grid", float)
    if t_final <= 0 or n_nodes < 1 or dt <= 0:
        raise ConfigError("[grid] needs t_final > 0, n_nodes >= 1, dt > 0")
    step = t_final / n_nodes
    n_sub = round(step / dt)
    if n_sub < 1 or abs(n_sub * dt - step) > 1e-9 * max(step, 1.0):
        raise ConfigError(
            "[grid] dt=%g does not divide the node spacing %g" % (dt, step))
    return GridSpec(t_final, n_nodes, dt)


def load_config(path, seed_override=None):
    """Parse and validate a TOML experiment file into an ExperimentConfig.

    Every structural problem is reported as ConfigError; syntax errors keep
    the parser's line and column in the message. A seed override replaces
    the configured seed before any sampling happens.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("config parse error in %s: %s" % (path, exc))
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))
    return config_from_dict(raw, seed_override=seed_override)


def config_from_dict(raw, seed_override=None):
    exp = raw.get("experiment", {})
    kind = _require(exp, "kind", "experiment")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError("[experiment] kind %r is not one of %s"
                          % (kind, ", ".join(EXPERIMENT_KINDS)))
    seed = _scalar(exp, "seed", "experiment", int, default=0)
    if seed_override is not None:
        seed = int(seed_override)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("[experiment] seed must fit in 64 bits")
    threads = _scalar(exp, "threads", "experiment", int, default=1)
    if threads < 1:
        raise ConfigError("[experiment] threads must be >= 1")
    out = exp.get("out")

    semantics = exp.get("semantics", "freeze_at_exit")
    if semantics not in ("freeze_at_exit", "indicator_gated"):
        raise ConfigError("[experiment] semantics %r is not freeze_at_exit "
                          "or indicator_gated" % (semantics,))
    bridge = bool(exp.get("bridge_correction", True))

    domain = coeffs = None
    if "domain" in raw:
        domain = _build_domain(raw["domain"])
    if "coefficients" in raw:
        if domain is None:
            raise ConfigError("[coefficients] requires a [domain] table")
        coeffs = _build_coeffs(raw["coefficients"], domain)

    needs_model = kind not in ("dist",)
    if needs_model and coeffs is None:
        raise ConfigError("experiment kind %r requires [domain] and "
                          "[coefficients]" % (kind,))
    if kind == "dist" and domain is None:
        raise ConfigError("experiment kind 'dist' requires a [domain] table")

    initial = initial2 = None
    if "initial" in raw:
        initial = _build_initial(raw["initial"], domain, seed, "initial")
    if "initial2" in raw:
        initial2 = _build_initial(raw["initial2"], domain, seed + 1,
                                  "initial2")
    if kind != "validate" and initial is None:
        raise ConfigError("experiment kind %r requires an [initial] table"
                          % (kind,))
    if kind in ("couple", "dist", "girsanov-check") and initial2 is None:
        raise ConfigError("experiment kind %r requires an [initial2] table"
                          % (kind,))

    grid = None
    if kind not in _GRIDLESS:
        if "grid" not in raw:
            raise ConfigError("experiment kind %r requires a [grid] table"
                              % (kind,))
        grid = _build_grid(raw["grid"])

    options = {}
    for name in ("picard", "couple", "girsanov", "dist", "fp_residual",
                 "validate", "accept"):
        if name in raw:
            options[name] = dict(raw[name])
    metric = options.get("dist", {}).get("metric", "w1_hat")
    if metric not in _METRIC_NAMES:
        raise ConfigError("[dist] metric %r is not one of %s"
                          % (metric, ", ".join(_METRIC_NAMES)))
    pic_metric = options.get("picard", {}).get("metric", "w1_hat")
    if pic_metric not in _METRIC_NAMES:
        raise ConfigError("[picard] metric %r is not one of %s"
                          % (pic_metric, ", ".join(_METRIC_NAMES)))

    return ExperimentConfig(
        kind=kind, seed=seed, threads=threads, out=out, domain=domain,
        coeffs=coeffs, initial=initial, initial2=initial2, grid=grid,
        semantics=semantics, bridge_correction=bridge, options=options)
