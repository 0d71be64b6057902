"""Killed Euler-Maruyama integration against a frozen measure flow.

Particles advance by Euler steps whose drift sees a fixed snapshot of the
measure argument (piecewise constant between grid nodes).  Two absorption
semantics are supported: freeze_at_exit clamps a particle to the boundary
crossing point of its step chord the first time it leaves the domain, and
indicator_gated multiplies the whole increment by the indicator of the
current position being interior, never clamping.
"""

import numpy as np

from . import _rng
from .errors import EvaluationError, InvalidArgumentError
from .geometry import project_to_boundary
from .measures import MeasureFlow, restrict_to_O

FREEZE = "freeze_at_exit"
GATED = "indicator_gated"


class ParticleEnsemble:
    """Mutable particle state: positions on the closed domain, alive flags,
    first-exit times, and the counter-RNG cursor (seed, step_index).

    Row i of every per-step noise draw belongs to particle i for the whole
    run, so the alive set never shifts another particle's stream.
    """

    def __init__(self, domain, positions, seed, t=0.0, alive=None,
                 exit_times=None, step_index=0):
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        domain._check_in_closure(positions)
        self.domain = domain
        self.positions = positions.copy()
        self.seed = int(seed)
        self.t = float(t)
        self.step_index = int(step_index)
        sd = domain.signed_distance(self.positions)
        if alive is None:
            alive = sd > domain.boundary_tol
        self.alive = np.asarray(alive, dtype=bool).copy()
        if exit_times is None:
            exit_times = np.where(self.alive, np.inf, self.t)
        self.exit_times = np.asarray(exit_times, dtype=float).copy()

    @classmethod
    def from_points(cls, domain, points, seed, t=0.0):
        return cls(domain, points, seed, t=t)

    @property
    def size(self):
        return self.positions.shape[0]

    def snapshot(self):
        """Current interior distribution with uniform weights 1/N."""
        return restrict_to_O(self.domain, self.positions)

    def copy(self):
        # bypass closure validation: gated dynamics may hold overshot points
        dup = object.__new__(ParticleEnsemble)
        dup.domain = self.domain
        dup.positions = self.positions.copy()
        dup.seed = self.seed
        dup.t = self.t
        dup.step_index = self.step_index
        dup.alive = self.alive.copy()
        dup.exit_times = self.exit_times.copy()
        return dup


def ensemble_from_measure(domain, gamma, n, seed):
    """Particle cloud distributed per the sub-probability gamma.

    When gamma is already an n-atom uniform-weight probability cloud its
    atoms are used directly; otherwise atoms are drawn by inverse CDF and
    the mass deficit becomes particles started (dead) on the boundary.
    """
    locs, w = gamma.interior()
    mass = float(w.sum())
    if len(w) == n and mass > 1.0 - 1e-9 and \
            (len(w) == 0 or w.max() - w.min() < 1e-15):
        positions = locs.copy()
    else:
        u = _rng.uniforms(seed, _rng.INIT, 1, n)
        positions = np.empty((n, domain.dim))
        if len(w):
            cdf = np.cumsum(w)
            inside = u < mass
            j = np.searchsorted(cdf, u[inside], side="right")
            positions[inside] = locs[np.minimum(j, len(w) - 1)]
        else:
            inside = np.zeros(n, dtype=bool)
        boundary_pt = domain.boundary_samples(1)[0]
        positions[~inside] = boundary_pt
    return ParticleEnsemble(domain, positions, seed)


def _check_finite(values, idx, t, what):
    flat = np.asarray(values, dtype=float)
    if flat.ndim == 1:
        bad = ~np.isfinite(flat)
    else:
        bad = ~np.isfinite(flat).all(axis=tuple(range(1, flat.ndim)))
    if bad.any():
        particle = int(idx[int(np.argmax(bad))])
        raise EvaluationError(
            "non-finite %s for particle %d at t=%.12g" % (what, particle, t))


def _substep_freeze(domain, coeffs, mu, positions, alive, exit_times,
                    t, dt, xi, bridge_u):
    idx = np.flatnonzero(alive)
    if idx.size == 0:
        return
    X = positions[idx]
    b = coeffs.drift_eval(t, X, mu)
    _check_finite(b, idx, t, "drift")
    sig = coeffs.sigma_eval(t, X, mu)
    if not np.isscalar(sig):
        _check_finite(np.asarray(sig, dtype=float).reshape(len(idx), -1)
                      if np.ndim(sig) != 2 else np.asarray(sig),
                      idx, t, "diffusion")
    Xn = X + b * dt + coeffs.apply_sigma(sig, xi[idx]) * np.sqrt(dt)
    exited, theta, point = domain.chord_exit(X, Xn)
    hit = np.flatnonzero(exited)
    positions[idx[hit]] = point[hit]
    exit_times[idx[hit]] = t + theta[hit] * dt
    alive[idx[hit]] = False
    stay = np.flatnonzero(~exited)
    if stay.size == 0:
        return
    if bridge_u is not None:
        x0 = X[stay]
        x1 = Xn[stay]
        rho0 = domain.signed_distance(x0)
        rho1 = domain.signed_distance(x1)
        a_norm = coeffs.sigma_sq_norm(t, X, mu)[stay]
        with np.errstate(divide="ignore", over="ignore"):
            p = np.where(a_norm > 0.0,
                         np.exp(-2.0 * rho0 * rho1 /
                                np.maximum(a_norm * dt, 1e-300)),
                         0.0)
        kill = bridge_u[idx[stay]] < p
        if kill.any():
            krows = stay[kill]
            frac = rho0[kill] / np.maximum(rho0[kill] + rho1[kill], 1e-300)
            cross = X[krows] + frac[:, None] * (Xn[krows] - X[krows])
            positions[idx[krows]] = project_to_boundary(domain, cross)
            exit_times[idx[krows]] = t + frac * dt
            alive[idx[krows]] = False
            stay = stay[~kill]
    positions[idx[stay]] = Xn[stay]


def _substep_gated(domain, coeffs, mu, positions, alive, exit_times, t, dt, xi):
    sd = domain.signed_distance(positions)
    rows = np.flatnonzero(sd > domain.boundary_tol)
    if rows.size:
        X = positions[rows]
        b = coeffs.drift_eval(t, X, mu)
        _check_finite(b, rows, t, "drift")
        sig = coeffs.sigma_eval(t, X, mu)
        positions[rows] = X + b * dt + \
            coeffs.apply_sigma(sig, xi[rows]) * np.sqrt(dt)
    inside = domain.signed_distance(positions) > domain.boundary_tol
    left = ~inside & np.isinf(exit_times)
    exit_times[left] = t + dt
    alive[:] = inside


def step_noise(ensemble, coeffs, bridge_correction=False):
    """The (Gaussian increments, bridge uniforms) a step from the current
    cursor will consume; drawing them here and passing them to step_killed
    changes nothing, which is what noise-exact replay relies on."""
    n = ensemble.size
    xi = _rng.normals(ensemble.seed, _rng.STEP, ensemble.step_index,
                      (n, coeffs.noise_dim))
    bridge_u = None
    if bridge_correction:
        bridge_u = _rng.uniforms(ensemble.seed, _rng.BRIDGE,
                                 ensemble.step_index, n)
    return xi, bridge_u


def step_killed(ensemble, coeffs, mu_t, dt, semantics=FREEZE,
                bridge_correction=False, noise=None):
    """Advance every particle by one Euler step of size dt and return the
    (mutated) ensemble."""
    if dt <= 0.0:
        raise InvalidArgumentError("dt must be positive")
    if not mu_t.domain.same_as(ensemble.domain):
        raise InvalidArgumentError("measure lives on a different domain")
    if semantics not in (FREEZE, GATED):
        raise InvalidArgumentError("unknown semantics %r" % (semantics,))
    if noise is None:
        noise = step_noise(ensemble, coeffs, bridge_correction)
    xi, bridge_u = noise
    if semantics == FREEZE:
        if not bridge_correction:
            bridge_u = None
        _substep_freeze(ensemble.domain, coeffs, mu_t, ensemble.positions,
                        ensemble.alive, ensemble.exit_times, ensemble.t, dt,
                        xi, bridge_u)
    else:
        _substep_gated(ensemble.domain, coeffs, mu_t, ensemble.positions,
                       ensemble.alive, ensemble.exit_times, ensemble.t, dt, xi)
    ensemble.t += dt
    ensemble.step_index += 1
    return ensemble


class RunResult:
    """Trajectory summary of one integration: node-level stopped positions
    and alive masks, final exit times, and everything needed to replay the
    run noise-exactly (seed, dt, semantics, bridge flag, initial state)."""

    def __init__(self, times, node_positions, node_alive, ensemble, coeffs,
                 flow_input, dt, semantics, bridge_correction, n_sub,
                 initial=None):
        self.times = times
        self.node_positions = node_positions
        self.node_alive = node_alive
        self.ensemble = ensemble
        self.initial = initial
        self.coeffs = coeffs
        self.flow_input = flow_input
        self.dt = float(dt)
        self.semantics = semantics
        self.bridge_correction = bool(bridge_correction)
        self.n_sub = int(n_sub)
        self.seed = ensemble.seed
        self.exit_times = ensemble.exit_times.copy()

    def exit_stats(self):
        exited = np.isfinite(self.exit_times)
        frac = float(exited.mean()) if self.exit_times.size else 0.0
        mean_t = float(self.exit_times[exited].mean()) if exited.any() else np.inf
        return {"exited_fraction": frac, "mean_exit_time": mean_t}


def _substeps_per_interval(grid_step, dt):
    n_sub = int(round(grid_step / dt))
    if n_sub < 1 or abs(n_sub * dt - grid_step) > 1e-9 * max(grid_step, 1.0):
        raise InvalidArgumentError(
            "dt=%g does not divide the grid step %g" % (dt, grid_step))
    return n_sub


def simulate_flow(coeffs, mu_flow, initial, dt, semantics=FREEZE,
                  bridge_correction=True, record_nodes=True):
    """Integrate all particles over the flow's grid, freezing the measure
    argument at the left node of each interval; returns (RunResult, flow of
    interior distributions at the grid nodes)."""
    times = mu_flow.times
    n_nodes = len(times)
    start = initial.copy()
    ensemble = initial.copy()
    n = ensemble.size
    if n_nodes > 1:
        n_sub = _substeps_per_interval(mu_flow.grid_step, dt)
    else:
        n_sub = 1
    if semantics == GATED and coeffs.companion is not None:
        return _simulate_companion(coeffs, mu_flow, ensemble, dt, n_sub,
                                   record_nodes, start)
    node_positions = np.empty((n_nodes, n, ensemble.domain.dim)) \
        if record_nodes else None
    node_alive = np.empty((n_nodes, n), dtype=bool) if record_nodes else None
    snapshots = [ensemble.snapshot()]
    if record_nodes:
        node_positions[0] = ensemble.positions
        node_alive[0] = ensemble.alive
    for k in range(n_nodes - 1):
        mu_k = mu_flow.snapshots[k]
        for _ in range(n_sub):
            step_killed(ensemble, coeffs, mu_k, dt, semantics,
                        bridge_correction)
        ensemble.t = times[k + 1]
        snapshots.append(ensemble.snapshot())
        if record_nodes:
            node_positions[k + 1] = ensemble.positions
            node_alive[k + 1] = ensemble.alive
    flow_out = MeasureFlow(times, snapshots)
    result = RunResult(times, node_positions, node_alive, ensemble, coeffs,
                       mu_flow, dt, semantics, bridge_correction, n_sub,
                       initial=start)
    return result, flow_out


def _simulate_companion(coeffs, mu_flow, ensemble, dt, n_sub, record_nodes,
                        start=None):
    """Gated integration through the auxiliary process: plain unkilled Euler
    on the companion, mapped back to the state at every node."""
    comp = coeffs.companion
    times = mu_flow.times
    n_nodes = len(times)
    n = ensemble.size
    z = comp.from_state(ensemble.positions[:, 0]).astype(float)
    node_positions = np.empty((n_nodes, n, 1)) if record_nodes else None
    node_alive = np.empty((n_nodes, n), dtype=bool) if record_nodes else None
    snapshots = [ensemble.snapshot()]
    if record_nodes:
        node_positions[0] = ensemble.positions
        node_alive[0] = ensemble.alive
    sqdt = np.sqrt(dt)
    for k in range(n_nodes - 1):
        for _ in range(n_sub):
            xi = _rng.normals(ensemble.seed, _rng.STEP, ensemble.step_index,
                              (n, 1))[:, 0]
            z = z + comp.drift(z) * dt + comp.diffusion(z) * sqdt * xi
            ensemble.step_index += 1
        ensemble.t = times[k + 1]
        ensemble.positions[:, 0] = comp.to_state(z)
        inside = ensemble.domain.signed_distance(ensemble.positions) > \
            ensemble.domain.boundary_tol
        left = ~inside & np.isinf(ensemble.exit_times)
        ensemble.exit_times[left] = times[k + 1]
        ensemble.alive[:] = inside
        snapshots.append(ensemble.snapshot())
        if record_nodes:
            node_positions[k + 1] = ensemble.positions
            node_alive[k + 1] = ensemble.alive
    flow_out = MeasureFlow(times, snapshots)
    result = RunResult(times, node_positions, node_alive, ensemble, coeffs,
                       mu_flow, dt, GATED, False, n_sub, initial=start)
    return result, flow_out


def constant_flow(measure, t_final, n_intervals):
    """Flow holding one snapshot at every node of a uniform grid."""
    times = np.linspace(0.0, float(t_final), int(n_intervals) + 1)
    return MeasureFlow.constant(measure, times)
