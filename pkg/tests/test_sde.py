import numpy as np
import pytest
from scipy.stats import norm

from killedmv.coefficients import CoefficientField, make_field
from killedmv.errors import EvaluationError, InvalidArgumentError
from killedmv.geometry import Domain
from killedmv.measures import SubProbMeasure
from killedmv.sde import (
    FREEZE,
    GATED,
    ParticleEnsemble,
    constant_flow,
    ensemble_from_measure,
    simulate_flow,
    step_killed,
)
from killedmv.transport import w1_hat
from oracles import oracle_cloud, survival_mass

UNIT = Domain.interval(0.0, 1.0)
SYM = Domain.interval(-1.0, 1.0)
HALF = Domain.interval(0.0, np.inf)

ZERO_FIELD = CoefficientField(lambda t, X, mu: np.zeros_like(X),
                              lambda t, X, mu: 0.0, dim=1,
                              mu_in_drift=False)
BM = CoefficientField(lambda t, X, mu: np.zeros_like(X),
                      lambda t, X, mu: 1.0, dim=1, mu_in_drift=False)


def zero_flow(domain, t_final, nodes):
    return constant_flow(SubProbMeasure.zero(domain), t_final, nodes)


# ---- single-step semantics -------------------------------------------------


def test_no_motion_without_coefficients():
    ens = ParticleEnsemble.from_points(UNIT, [[0.3], [0.6]], seed=1)
    mu = SubProbMeasure.zero(UNIT)
    for _ in range(5):
        step_killed(ens, ZERO_FIELD, mu, 0.01)
    assert ens.positions == pytest.approx(np.array([[0.3], [0.6]]))
    assert ens.alive.all()
    assert np.isinf(ens.exit_times).all()


def test_boundary_start_is_dead_immediately():
    ens = ParticleEnsemble.from_points(UNIT, [[0.0], [0.5]], seed=1)
    assert not ens.alive[0] and ens.alive[1]
    assert ens.exit_times[0] == 0.0
    mu = SubProbMeasure.zero(UNIT)
    step_killed(ens, BM, mu, 0.01)
    assert ens.positions[0, 0] == 0.0


def test_step_argument_errors():
    ens = ParticleEnsemble.from_points(UNIT, [[0.5]], seed=1)
    mu = SubProbMeasure.zero(UNIT)
    with pytest.raises(InvalidArgumentError):
        step_killed(ens, BM, mu, 0.0)
    with pytest.raises(InvalidArgumentError):
        step_killed(ens, BM, SubProbMeasure.zero(SYM), 0.01)
    with pytest.raises(InvalidArgumentError):
        step_killed(ens, BM, mu, 0.01, semantics="other")


def test_nonfinite_drift_names_particle_and_time():
    bad = CoefficientField(
        lambda t, X, mu: np.where(X > 0.8, np.nan, 0.0),
        lambda t, X, mu: 0.0, dim=1, mu_in_drift=False)
    ens = ParticleEnsemble.from_points(UNIT, [[0.5], [0.9]], seed=1, t=0.25)
    with pytest.raises(EvaluationError, match=r"drift for particle 1 at t=0.25"):
        step_killed(ens, bad, SubProbMeasure.zero(UNIT), 0.01)


def test_single_step_exit_probability_matches_first_passage_law():
    # one Euler step of driftless unit-noise motion from x0: the chance of
    # dying within the step (chord crossing plus bridge correction) must
    # reproduce the reflection identity 2*Phi(-x0/sqrt(dt))
    x0, dt, n = 0.05, 0.01, 40000
    ens = ParticleEnsemble.from_points(HALF, np.full((n, 1), x0), seed=7)
    step_killed(ens, BM, SubProbMeasure.zero(HALF), dt, bridge_correction=True)
    died = 1.0 - ens.alive.mean()
    exact = 2.0 * norm.cdf(-x0 / np.sqrt(dt))
    se = np.sqrt(exact * (1.0 - exact) / n)
    assert abs(died - exact) <= 4.0 * se
    # killed particles are placed on the boundary with in-step exit times
    assert ens.positions[~ens.alive, 0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(ens.exit_times[~ens.alive] <= dt + 1e-15)
    assert np.all(ens.exit_times[~ens.alive] >= 0.0)


def test_bridge_correction_only_adds_kills():
    x0, dt, n = 0.1, 0.01, 5000
    survivors = []
    for bridge in (False, True):
        ens = ParticleEnsemble.from_points(HALF, np.full((n, 1), x0), seed=3)
        step_killed(ens, BM, SubProbMeasure.zero(HALF), dt,
                    bridge_correction=bridge)
        survivors.append(ens.alive.copy())
    plain, bridged = survivors
    assert np.all(bridged <= plain)
    assert bridged.sum() < plain.sum()


# ---- flow integration ------------------------------------------------------


def test_absorbed_motion_survival_and_distance():
    n = 20000
    gamma = SubProbMeasure.from_points(UNIT, np.full((n, 1), 0.5))
    ens = ensemble_from_measure(UNIT, gamma, n, seed=11)
    flow_in = zero_flow(UNIT, 0.1, 4)
    _, flow = simulate_flow(BM, flow_in, ens, dt=2e-4)
    t_nodes = [0.025, 0.05, 0.075, 0.1]
    for k, t in enumerate(t_nodes, start=1):
        want = survival_mass(t, 0.5)
        got = flow.snapshots[k].mass()
        assert abs(got - want) <= 0.015, (t, got, want)
    cloud = oracle_cloud(0.1, 0.5)
    oracle = SubProbMeasure(UNIT, cloud[0], cloud[1])
    assert w1_hat(flow.snapshots[4], oracle) <= 0.02


def test_interaction_free_output_ignores_input_flow():
    gamma = SubProbMeasure.from_points(UNIT, [[0.4], [0.6]])
    ens = ensemble_from_measure(UNIT, gamma, 500, seed=5)
    flow_a = zero_flow(UNIT, 0.05, 5)
    flow_b = constant_flow(gamma, 0.05, 5)
    res_a, out_a = simulate_flow(BM, flow_a, ens, dt=1e-3)
    res_b, out_b = simulate_flow(BM, flow_b, ens, dt=1e-3)
    assert np.array_equal(res_a.node_positions, res_b.node_positions)
    assert np.array_equal(res_a.exit_times, res_b.exit_times)


def test_inward_drift_no_diffusion_keeps_full_mass():
    field = CoefficientField(lambda t, X, mu: -(X - 0.5),
                             lambda t, X, mu: 0.0, dim=1, mu_in_drift=False)
    gamma = SubProbMeasure.from_points(
        UNIT, np.linspace(0.05, 0.95, 200)[:, None])
    ens = ensemble_from_measure(UNIT, gamma, 200, seed=2)
    res, flow = simulate_flow(field, zero_flow(UNIT, 1.0, 10), ens, dt=0.01)
    assert flow.masses() == pytest.approx(np.ones(11))
    assert np.isinf(res.exit_times).all()


def test_grid_divisibility_enforced():
    gamma = SubProbMeasure.from_points(UNIT, [[0.5]])
    ens = ensemble_from_measure(UNIT, gamma, 10, seed=1)
    with pytest.raises(InvalidArgumentError):
        simulate_flow(BM, zero_flow(UNIT, 0.1, 4), ens, dt=0.004)


def test_pathwise_causality_under_flow_prefix_change():
    coeffs = make_field("mass_coupling", beta=1.0, lam=0.5, sigma=1.0,
                        domain=UNIT)
    n = 400
    gamma = SubProbMeasure.from_points(UNIT, np.full((n, 1), 0.5))
    ens = ensemble_from_measure(UNIT, gamma, n, seed=9)
    full = SubProbMeasure.from_points(UNIT, [[0.5]], [1.0])
    half = SubProbMeasure.from_points(UNIT, [[0.5]], [0.5])
    times = np.linspace(0.0, 0.04, 5)
    from killedmv.measures import MeasureFlow
    flow_a = MeasureFlow(times, [full, full, full, full, full])
    flow_b = MeasureFlow(times, [full, full, half, half, half])
    res_a, _ = simulate_flow(coeffs, flow_a, ens, dt=1e-3)
    res_b, _ = simulate_flow(coeffs, flow_b, ens, dt=1e-3)
    for k in range(3):
        assert np.array_equal(res_a.node_positions[k], res_b.node_positions[k])
    assert not np.array_equal(res_a.node_positions[3], res_b.node_positions[3])


def test_frozen_after_exit_and_mass_monotone():
    n = 2000
    gamma = SubProbMeasure.from_points(UNIT, np.full((n, 1), 0.2))
    ens = ensemble_from_measure(UNIT, gamma, n, seed=13)
    res, flow = simulate_flow(BM, zero_flow(UNIT, 0.2, 8), ens, dt=1e-3)
    assert flow.check_mass_monotone(tol=0.0)
    dead_any = ~res.node_alive
    for k in range(1, len(res.times)):
        was_dead = dead_any[k - 1]
        assert np.array_equal(res.node_positions[k][was_dead],
                              res.node_positions[k - 1][was_dead])
        assert np.all(~res.node_alive[k][was_dead])
    stats = res.exit_stats()
    assert 0.0 < stats["exited_fraction"] < 1.0
    assert 0.0 < stats["mean_exit_time"] <= 0.2


def test_moment_stability_across_seeds():
    coeffs = make_field("linear", beta=1.0, sigma=0.5, domain=SYM)
    x0 = 0.3
    ratios = []
    for seed in (1, 2, 3):
        n = 4000
        gamma = SubProbMeasure.from_points(SYM, np.full((n, 1), x0))
        ens = ensemble_from_measure(SYM, gamma, n, seed=seed)
        res, _ = simulate_flow(coeffs, zero_flow(SYM, 0.5, 10), ens, dt=5e-3)
        sup_m2 = max(float(np.mean(res.node_positions[k][:, 0] ** 2))
                     for k in range(len(res.times)))
        ratios.append(sup_m2 / (1.0 + x0 ** 2))
    assert max(ratios) <= 1.0  # dissipative drift, killed mass only shrinks it
    assert max(ratios) - min(ratios) <= 0.05


# ---- indicator-gated semantics ----------------------------------------------


def test_gated_boundary_particle_never_moves():
    ens = ParticleEnsemble.from_points(UNIT, [[0.0]], seed=1)
    mu = SubProbMeasure.zero(UNIT)
    for _ in range(10):
        step_killed(ens, BM, mu, 0.01, semantics=GATED)
    assert ens.positions[0, 0] == 0.0


def test_gated_overshoot_freezes_outside():
    # strong outward drift pushes the particle past the boundary in one step;
    # gating then zeroes every later increment at the overshot point
    out = CoefficientField(lambda t, X, mu: np.full_like(X, -60.0),
                           lambda t, X, mu: 0.0, dim=1, mu_in_drift=False)
    ens = ParticleEnsemble.from_points(UNIT, [[0.3]], seed=1)
    mu = SubProbMeasure.zero(UNIT)
    step_killed(ens, out, mu, 0.01, semantics=GATED)
    assert ens.positions[0, 0] == pytest.approx(-0.3)
    assert not ens.alive[0]
    assert ens.exit_times[0] == pytest.approx(0.01)
    pos = ens.positions.copy()
    step_killed(ens, out, mu, 0.01, semantics=GATED)
    assert np.array_equal(ens.positions, pos)


def test_gated_squared_companion_escapes_zero_freeze_does_not():
    coeffs = make_field("cir_squared")
    dom = coeffs.domain
    n = 2000
    ens = ParticleEnsemble.from_points(dom, np.zeros((n, 1)), seed=21)
    flow_in = zero_flow(dom, 0.3, 6)
    _, gated = simulate_flow(coeffs, flow_in, ens.copy(), dt=1e-3,
                             semantics=GATED)
    assert gated.snapshots[-1].mass() >= 0.99
    res, frozen = simulate_flow(coeffs, flow_in, ens.copy(), dt=1e-3,
                                semantics=FREEZE)
    assert frozen.snapshots[-1].mass() == 0.0
    assert np.all(res.ensemble.positions == 0.0)
    assert np.all(res.exit_times == 0.0)


# ---- initial ensembles -------------------------------------------------------


def test_ensemble_from_measure_passthrough():
    pts = np.linspace(0.1, 0.9, 50)[:, None]
    gamma = SubProbMeasure.from_points(UNIT, pts)
    ens = ensemble_from_measure(UNIT, gamma, 50, seed=4)
    assert np.array_equal(ens.positions, pts)


def test_ensemble_from_measure_resamples_subprobability():
    gamma = SubProbMeasure.from_points(UNIT, [[0.3]], [0.6])
    n = 4000
    ens = ensemble_from_measure(UNIT, gamma, n, seed=4)
    frac = ens.alive.mean()
    assert abs(frac - 0.6) <= 3.0 * np.sqrt(0.6 * 0.4 / n)
    assert np.all(ens.positions[ens.alive, 0] == 0.3)
    assert np.all(ens.exit_times[~ens.alive] == 0.0)
    assert ens.snapshot().mass() == pytest.approx(frac)


def test_same_seed_same_trajectories():
    gamma = SubProbMeasure.from_points(UNIT, np.full((100, 1), 0.5))
    ens1 = ensemble_from_measure(UNIT, gamma, 100, seed=17)
    ens2 = ensemble_from_measure(UNIT, gamma, 100, seed=17)
    r1, _ = simulate_flow(BM, zero_flow(UNIT, 0.05, 5), ens1, dt=1e-3)
    r2, _ = simulate_flow(BM, zero_flow(UNIT, 0.05, 5), ens2, dt=1e-3)
    assert np.array_equal(r1.node_positions, r2.node_positions)
    r3, _ = simulate_flow(BM, zero_flow(UNIT, 0.05, 5),
                          ensemble_from_measure(UNIT, gamma, 100, seed=18),
                          dt=1e-3)
    assert not np.array_equal(r1.node_positions, r3.node_positions)
