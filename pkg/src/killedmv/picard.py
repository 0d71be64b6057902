"""Fixed-point iteration on measure flows.

The solution map takes a frozen flow, integrates the particle system
against it, and returns the flow of interior distributions.  Iterating the
map under common random numbers turns it into a deterministic map on flows,
so the successive-iterate distances in the theta-weighted metric are a
meaningful contraction trace at finite particle count.
"""

import numpy as np

from .errors import (IndeterminateRatioError, InvalidArgumentError,
                     NonConvergenceError)
from .measures import MeasureFlow, quadratic_lyapunov
from .sde import ensemble_from_measure, simulate_flow
from .transport import (flow_histogram_edges, flow_metric, w1, w1_hat,
                        weighted_variation)

_METRICS = ("w1_hat", "w1", "weighted_variation")
_TAG_METRIC = {"A": "w1_hat", "B": "w1", "E": "weighted_variation"}


class PicardConfig:
    """Solver parameters: grid, particle count, stopping rule, metric."""

    def __init__(self, t_final=0.25, n_nodes=25, particles_n=10000, dt=1e-3,
                 theta=20.0, tol=1e-3, max_iter=8, metric_kind="w1_hat",
                 bridge_correction=True, v=None, v_cap=None, bins=None,
                 ess_floor=0.2):
        if tol <= 0.0:
            raise InvalidArgumentError("tol must be positive")
        if max_iter < 1:
            raise InvalidArgumentError("max_iter must be at least 1")
        if theta < 0.0:
            raise InvalidArgumentError("theta must be nonnegative")
        if metric_kind not in _METRICS:
            raise InvalidArgumentError("unknown metric %r" % (metric_kind,))
        if dt <= 0.0 or t_final <= 0.0 or n_nodes < 1 or particles_n < 1:
            raise InvalidArgumentError("grid and particle counts must be positive")
        self.t_final = float(t_final)
        self.n_nodes = int(n_nodes)
        self.particles_n = int(particles_n)
        self.dt = float(dt)
        self.theta = float(theta)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.metric_kind = metric_kind
        self.bridge_correction = bool(bridge_correction)
        self.v = v if v is not None else quadratic_lyapunov(cap=v_cap)
        self.v_cap = v_cap
        self.bins = bins
        self.ess_floor = float(ess_floor)

    def times(self):
        return np.linspace(0.0, self.t_final, self.n_nodes + 1)


class DirichletTestFunction:
    """C^2 test function vanishing on the boundary, with explicit
    derivatives: value (N,) , gradient (N, d), hessian (N, d, d)."""

    def __init__(self, value, gradient, hessian):
        self.value = value
        self.gradient = gradient
        self.hessian = hessian

    @classmethod
    def interval_sine(cls, domain):
        """sin(pi (x - a) / (b - a)) on a finite interval."""
        if domain.kind != "interval":
            raise InvalidArgumentError("interval_sine needs an interval domain")
        a, b = domain.params["a"], domain.params["b"]
        if not (np.isfinite(a) and np.isfinite(b)):
            raise InvalidArgumentError("interval_sine needs finite endpoints")
        w = np.pi / (b - a)

        def value(x):
            return np.sin(w * (x[:, 0] - a))

        def gradient(x):
            return w * np.cos(w * (x[:, 0] - a))[:, None]

        def hessian(x):
            return (-w * w * np.sin(w * (x[:, 0] - a)))[:, None, None]

        return cls(value, gradient, hessian)

    def check_boundary(self, domain, samples=200, tol=1e-9):
        pts = domain.boundary_samples(samples)
        vals = np.asarray(self.value(pts), dtype=float)
        if np.any(np.abs(vals) > tol):
            raise InvalidArgumentError(
                "test function does not vanish on the boundary "
                "(max |f| = %.3g)" % float(np.max(np.abs(vals))))


def _check_metric_tag(coeffs, metric_kind):
    tag = coeffs.hypothesis_tag
    if tag is not None and _TAG_METRIC[tag] != metric_kind:
        raise InvalidArgumentError(
            "metric %r is inconsistent with the declared hypothesis tag %r"
            % (metric_kind, tag))


def _node_metric(config):
    kind = config.metric_kind

    def dist(mu, nu, bins=None):
        if kind == "w1_hat":
            return w1_hat(mu, nu)
        if kind == "w1":
            return w1(mu, nu)
        return weighted_variation(mu, nu, config.v, bins=bins,
                                  cap=config.v_cap)
    return dist


def _flow_distance(f1, f2, config, bins=None):
    if config.metric_kind != "weighted_variation":
        return flow_metric(f1, f2, config.metric_kind, theta=config.theta)
    if bins is None:
        bins = config.bins
    try:
        return flow_metric(f1, f2, "weighted_variation", theta=config.theta,
                           V=config.v, bins=None, cap=config.v_cap)
    except InvalidArgumentError:
        if bins is None:
            bins = flow_histogram_edges(f1, f2,
                                    max(64, int(np.sqrt(config.particles_n))))
        return flow_metric(f1, f2, "weighted_variation", theta=config.theta,
                           V=config.v, bins=bins, cap=config.v_cap)


def picard_solve(coeffs, gamma, config, seed=0):
    """Iterate the solution map from the constant-gamma flow until the
    theta-weighted distance between successive iterates drops below tol.

    Returns (converged flow, trace) where trace lists (iteration, distance);
    iteration 1 produces the first iterate from the frozen-at-gamma flow.
    Raises NonConvergenceError carrying the trace when max_iter is exhausted.
    """
    if coeffs.domain is None:
        raise InvalidArgumentError("coefficients must carry a domain")
    _check_metric_tag(coeffs, config.metric_kind)
    if config.metric_kind == "weighted_variation":
        return _picard_reweighted(coeffs, gamma, config, seed)
    times = config.times()
    initial = ensemble_from_measure(coeffs.domain, gamma,
                                    config.particles_n, seed)

    def solve(flow):
        _, out = simulate_flow(coeffs, flow, initial, config.dt,
                               bridge_correction=config.bridge_correction,
                               record_nodes=False)
        return out

    prev = MeasureFlow.constant(gamma, times)
    trace = []
    cur = solve(prev)
    d = _flow_distance(cur, prev, config)
    trace.append((1, float(d)))
    if d < config.tol:
        return cur, trace
    for it in range(2, config.max_iter + 1):
        new = solve(cur)
        d = _flow_distance(new, cur, config)
        trace.append((it, float(d)))
        prev, cur = cur, new
        if d < config.tol:
            return cur, trace
    raise NonConvergenceError(
        "no convergence below tol=%g within %d iterations"
        % (config.tol, config.max_iter), trace)


def _picard_reweighted(coeffs, gamma, config, seed):
    """Weighted-variation mode: one base trajectory set realizes every
    iterate by exponential reweighting, so successive iterates share atoms
    and the distance is exact.  The base is refreshed at the current flow
    when the effective sample size decays below ess_floor * N."""
    from .girsanov import reweight_flow

    times = config.times()
    initial = ensemble_from_measure(coeffs.domain, gamma,
                                    config.particles_n, seed)
    base_flow = MeasureFlow.constant(gamma, times)
    base_run, base_out = simulate_flow(
        coeffs, base_flow, initial, config.dt,
        bridge_correction=config.bridge_correction, record_nodes=True)
    cur = base_out
    trace = []
    d = _flow_distance(cur, base_flow, config)
    trace.append((1, float(d)))
    if d < config.tol:
        return cur, trace
    floor = config.ess_floor * config.particles_n
    for it in range(2, config.max_iter + 1):
        rw = reweight_flow(coeffs, base_flow, cur, base_run)
        if float(np.min(rw.ess)) < floor:
            base_flow = cur
            base_run, base_out = simulate_flow(
                coeffs, base_flow, initial, config.dt,
                bridge_correction=config.bridge_correction, record_nodes=True)
            new = base_out
        else:
            new = rw.flow
        d = _flow_distance(new, cur, config)
        trace.append((it, float(d)))
        cur = new
        if d < config.tol:
            return cur, trace
    raise NonConvergenceError(
        "no convergence below tol=%g within %d iterations"
        % (config.tol, config.max_iter), trace)


def contraction_profile(coeffs, gamma1, gamma2, config, seed=0):
    """Node-wise distances before and after one application of the solution
    map: returns (times, mapped_dists, input_dists).

    The input flows are first iterates from gamma1 and gamma2; the mapped
    flows both start from the gamma1 ensemble so only the frozen flow
    differs, all under common random numbers.
    """
    if coeffs.domain is None:
        raise InvalidArgumentError("coefficients must carry a domain")
    times = config.times()
    dist = _node_metric(config)
    ens1 = ensemble_from_measure(coeffs.domain, gamma1,
                                 config.particles_n, seed)
    ens2 = ensemble_from_measure(coeffs.domain, gamma2,
                                 config.particles_n, seed)
    _, mu1 = simulate_flow(coeffs, MeasureFlow.constant(gamma1, times), ens1,
                           config.dt,
                           bridge_correction=config.bridge_correction,
                           record_nodes=False)
    _, mu2 = simulate_flow(coeffs, MeasureFlow.constant(gamma2, times), ens2,
                           config.dt,
                           bridge_correction=config.bridge_correction,
                           record_nodes=False)
    _, out1 = simulate_flow(coeffs, mu1, ens1, config.dt,
                            bridge_correction=config.bridge_correction,
                            record_nodes=False)
    _, out2 = simulate_flow(coeffs, mu2, ens1, config.dt,
                            bridge_correction=config.bridge_correction,
                            record_nodes=False)
    bins = None
    if config.metric_kind == "weighted_variation" and config.bins is None:
        bins = flow_histogram_edges(mu1, mu2,
                                max(64, int(np.sqrt(config.particles_n))))
    den = np.array([dist(mu1.snapshots[k], mu2.snapshots[k], bins)
                    for k in range(len(times))])
    num = np.array([dist(out1.snapshots[k], out2.snapshots[k], bins)
                    for k in range(len(times))])
    return times, num, den


def _weighted_sup(times, dists, theta):
    return float(np.max(np.exp(-theta * times) * dists))


def estimate_contraction(coeffs, gamma1, gamma2, config, seed=0,
                         profile=None):
    """Empirical Lipschitz ratio of the solution map at config.theta.

    Ratio below one certifies contraction in the weighted flow metric at
    this theta and particle count.  A denominator smaller than 10 * tol is
    refused as indeterminate.
    """
    if profile is None:
        profile = contraction_profile(coeffs, gamma1, gamma2, config, seed)
    times, num, den = profile
    den_sup = _weighted_sup(times, den, config.theta)
    if den_sup < 10.0 * config.tol:
        raise IndeterminateRatioError(
            "input flows are too close to measure a ratio (%.3g)" % den_sup)
    return _weighted_sup(times, num, config.theta) / den_sup


def select_theta(coeffs, gamma1, gamma2, config, seed=0,
                 thetas=(0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0), target=0.8,
                 profile=None):
    """Smallest theta in the grid whose estimated ratio falls below target.

    Returns (theta, {theta: ratio}); the node distances are computed once
    and reweighted per theta.
    """
    if profile is None:
        profile = contraction_profile(coeffs, gamma1, gamma2, config, seed)
    times, num, den = profile
    ratios = {}
    chosen = None
    for theta in thetas:
        den_sup = _weighted_sup(times, den, theta)
        if den_sup < 10.0 * config.tol:
            continue
        ratios[theta] = _weighted_sup(times, num, theta) / den_sup
        if chosen is None and ratios[theta] < target:
            chosen = theta
    if not ratios:
        raise IndeterminateRatioError(
            "input measures are too close at every theta in the grid")
    if chosen is None:
        raise NonConvergenceError(
            "no theta in the grid certifies a ratio below %g" % target,
            sorted(ratios.items()))
    return chosen, ratios


def _generator_apply(coeffs, t, locs, mu, f):
    """(1/2) tr(sigma sigma^T Hess f) + b . grad f per atom."""
    b = coeffs.drift_eval(t, locs, mu)
    grad = np.asarray(f.gradient(locs), dtype=float)
    if grad.ndim == 1:
        grad = grad[:, None]
    hess = np.asarray(f.hessian(locs), dtype=float)
    if hess.ndim == 1:
        hess = hess[:, None, None]
    first = np.einsum("nd,nd->n", b, grad)
    sig = coeffs.sigma_eval(t, locs, mu)
    n, d = locs.shape
    if np.isscalar(sig) or np.ndim(sig) == 0:
        trace = float(sig) ** 2 * np.einsum("ndd->n", hess)
    elif np.ndim(sig) == 1:
        trace = np.asarray(sig) ** 2 * np.einsum("ndd->n", hess)
    elif np.ndim(sig) == 2:
        a = np.asarray(sig) @ np.asarray(sig).T
        trace = np.einsum("de,nde->n", a, hess)
    else:
        sig = np.asarray(sig)
        a = np.einsum("ndm,nem->nde", sig, sig)
        trace = np.einsum("nde,nde->n", a, hess)
    return first + 0.5 * trace


def fokker_planck_residual(flow, coeffs, f):
    """Worst defect over grid nodes of the integrated evolution identity:
    max_k | mu_{t_k}(f) - mu_0(f) - integral_0^{t_k} mu_s(Lf) ds | with
    trapezoidal quadrature on the flow's grid."""
    domain = flow.snapshots[0].domain
    f.check_boundary(domain)
    times = flow.times
    n = len(times)
    mu_f = np.empty(n)
    mu_lf = np.empty(n)
    for k in range(n):
        snap = flow.snapshots[k]
        locs, w = snap.interior()
        if len(w) == 0:
            mu_f[k] = 0.0
            mu_lf[k] = 0.0
            continue
        mu_f[k] = float(np.dot(w, np.asarray(f.value(locs), dtype=float)))
        mu_lf[k] = float(np.dot(w, _generator_apply(coeffs, times[k], locs,
                                                    snap, f)))
    if n == 1:
        return 0.0
    dt_nodes = np.diff(times)
    increments = 0.5 * dt_nodes * (mu_lf[:-1] + mu_lf[1:])
    integral = np.concatenate([[0.0], np.cumsum(increments)])
    return float(np.max(np.abs(mu_f - mu_f[0] - integral)))
