"""Fixed-point iteration, contraction estimation, and the evolution-identity
residual."""

import numpy as np
import pytest

from killedmv.coefficients import make_field
from killedmv.errors import (IndeterminateRatioError, InvalidArgumentError,
                             NonConvergenceError)
from killedmv.geometry import Domain
from killedmv.measures import SubProbMeasure
from killedmv.picard import (DirichletTestFunction, PicardConfig,
                             contraction_profile, estimate_contraction,
                             fokker_planck_residual, picard_solve,
                             select_theta)

UNIT = Domain.interval(0.0, 1.0)
WIDE = Domain.interval(-1.0, 1.0)


def cloud(domain, lo, hi, n, seed):
    rng = np.random.default_rng(seed)
    return SubProbMeasure.from_points(domain, lo + (hi - lo) * rng.random(n))


# ---- configuration and test-function validation ------------------------


def test_config_rejects_bad_values():
    with pytest.raises(InvalidArgumentError):
        PicardConfig(tol=0.0)
    with pytest.raises(InvalidArgumentError):
        PicardConfig(max_iter=0)
    with pytest.raises(InvalidArgumentError):
        PicardConfig(metric_kind="tv")
    with pytest.raises(InvalidArgumentError):
        PicardConfig(theta=-1.0)
    with pytest.raises(InvalidArgumentError):
        PicardConfig(dt=0.0)


def test_interval_sine_vanishes_on_boundary():
    f = DirichletTestFunction.interval_sine(UNIT)
    f.check_boundary(UNIT)
    pts = np.array([[0.0], [1.0]])
    assert np.allclose(f.value(pts), 0.0, atol=1e-12)


def test_non_vanishing_test_function_rejected():
    f = DirichletTestFunction(lambda x: np.cos(np.pi * x[:, 0]),
                              lambda x: -np.pi * np.sin(np.pi * x[:, 0])[:, None],
                              lambda x: -np.pi ** 2 *
                              np.cos(np.pi * x[:, 0])[:, None, None])
    with pytest.raises(InvalidArgumentError):
        f.check_boundary(UNIT)


# ---- solve: trivial and structured cases --------------------------------


def test_interaction_free_converges_at_iteration_two_exactly():
    # the solution map ignores the flow, so under common random numbers the
    # second iterate reproduces the first bit-for-bit
    coeffs = make_field("linear", domain=UNIT, beta=1.0, sigma=0.7)
    gamma = cloud(UNIT, 0.2, 0.8, 400, seed=3)
    config = PicardConfig(t_final=0.1, n_nodes=4, particles_n=400, dt=0.005,
                          tol=1e-9, theta=5.0)
    flow, trace = picard_solve(coeffs, gamma, config, seed=11)
    assert len(trace) == 2
    assert trace[0][1] > 0.0
    assert trace[1][1] == 0.0
    assert len(flow.times) == 5


def test_zero_initial_measure_converges_at_iteration_one():
    coeffs = make_field("linear", domain=UNIT, beta=1.0, sigma=0.7)
    config = PicardConfig(t_final=0.1, n_nodes=4, particles_n=50, dt=0.005,
                          tol=1e-9)
    flow, trace = picard_solve(coeffs, SubProbMeasure.zero(UNIT), config,
                               seed=1)
    assert trace == [(1, 0.0)]
    assert np.all(flow.masses() == 0.0)


def test_mean_field_trace_decreases_geometrically():
    coeffs = make_field("mean_field_attraction", domain=UNIT, beta=1.0,
                        lam=0.8, sigma=0.5)
    gamma = cloud(UNIT, 0.2, 0.8, 800, seed=3)
    config = PicardConfig(t_final=0.2, n_nodes=8, particles_n=800, dt=0.005,
                          tol=1e-6, max_iter=10, theta=10.0)
    flow, trace = picard_solve(coeffs, gamma, config, seed=7)
    dists = [d for _, d in trace]
    assert len(dists) >= 3
    assert dists[1] < 0.5 * dists[0]
    assert dists[2] < 0.5 * dists[1]
    assert flow.check_mass_monotone(tol=1e-12)


def test_max_iter_exhaustion_carries_trace():
    coeffs = make_field("mean_field_attraction", domain=UNIT, beta=1.0,
                        lam=0.8, sigma=0.5)
    gamma = cloud(UNIT, 0.2, 0.8, 200, seed=3)
    config = PicardConfig(t_final=0.1, n_nodes=4, particles_n=200, dt=0.005,
                          tol=1e-15, max_iter=2)
    with pytest.raises(NonConvergenceError) as err:
        picard_solve(coeffs, gamma, config, seed=7)
    assert [k for k, _ in err.value.trace] == [1, 2]


def test_solve_is_seed_deterministic():
    coeffs = make_field("mean_field_attraction", domain=UNIT, beta=1.0,
                        lam=0.8, sigma=0.5)
    gamma = cloud(UNIT, 0.2, 0.8, 300, seed=3)
    config = PicardConfig(t_final=0.1, n_nodes=4, particles_n=300, dt=0.005,
                          tol=1e-6, max_iter=10)
    _, t1 = picard_solve(coeffs, gamma, config, seed=5)
    _, t2 = picard_solve(coeffs, gamma, config, seed=5)
    _, t3 = picard_solve(coeffs, gamma, config, seed=6)
    assert t1 == t2
    assert t1[0][1] != t3[0][1]


def test_metric_must_match_declared_hypothesis():
    gamma = cloud(UNIT, 0.2, 0.8, 100, seed=3)
    mass_model = make_field("mass_coupling", domain=UNIT, beta=1.0, lam=0.5,
                            sigma=0.6)
    with pytest.raises(InvalidArgumentError):
        picard_solve(mass_model, gamma,
                     PicardConfig(particles_n=100, metric_kind="w1_hat"),
                     seed=0)
    kernel_model = make_field("mean_field_attraction", domain=UNIT, beta=1.0,
                              lam=0.5, sigma=0.6)
    with pytest.raises(InvalidArgumentError):
        picard_solve(kernel_model, gamma,
                     PicardConfig(particles_n=100,
                                  metric_kind="weighted_variation"),
                     seed=0)


def test_reweighted_mode_converges():
    coeffs = make_field("mass_coupling", domain=UNIT, beta=1.0, lam=0.8,
                        sigma=0.6)
    gamma = cloud(UNIT, 0.2, 0.8, 600, seed=5)
    config = PicardConfig(t_final=0.2, n_nodes=8, particles_n=600, dt=0.005,
                          tol=1e-5, max_iter=10, theta=10.0,
                          metric_kind="weighted_variation")
    flow, trace = picard_solve(coeffs, gamma, config, seed=9)
    assert trace[-1][1] < 1e-5
    assert len(trace) <= 6


def test_reweighted_mode_with_forced_refresh_converges():
    # ess_floor above one forces a fresh base run every iteration, driving
    # the binned-distance path; the fixed point must agree with the
    # reweighted route within Monte Carlo resolution
    coeffs = make_field("mass_coupling", domain=UNIT, beta=1.0, lam=0.8,
                        sigma=0.6)
    gamma = cloud(UNIT, 0.2, 0.8, 600, seed=5)
    base = dict(t_final=0.2, n_nodes=8, particles_n=600, dt=0.005,
                tol=1e-3, max_iter=12, theta=10.0,
                metric_kind="weighted_variation")
    f1, _ = picard_solve(coeffs, gamma, PicardConfig(ess_floor=1.1, **base),
                         seed=9)
    f2, _ = picard_solve(coeffs, gamma, PicardConfig(ess_floor=0.0, **base),
                         seed=9)
    assert abs(f1.masses()[-1] - f2.masses()[-1]) < 0.05


# ---- contraction estimation ---------------------------------------------


@pytest.fixture(scope="module")
def expansive():
    # drift pushes outward, so the mapped-flow gap grows in time while the
    # input gap shrinks with the dying mass: theta discounting must help
    coeffs = make_field("mass_coupling", domain=WIDE, beta=-0.8, lam=2.0,
                        sigma=0.4)
    g1 = cloud(WIDE, -0.5, 0.3, 400, seed=12)
    g2 = cloud(WIDE, 0.1, 0.9, 400, seed=13)
    config = PicardConfig(t_final=0.5, n_nodes=10, particles_n=400,
                          dt=0.0125, tol=1e-6)
    profile = contraction_profile(coeffs, g1, g2, config, seed=3)
    return coeffs, g1, g2, config, profile


def test_profile_starts_at_zero_and_identical_inputs_are_indeterminate(expansive):
    coeffs, g1, g2, config, profile = expansive
    times, num, den = profile
    assert num[0] == 0.0
    assert den[0] > 0.1
    with pytest.raises(IndeterminateRatioError):
        estimate_contraction(coeffs, g1, g1, config, seed=3)


def test_interaction_free_ratio_is_zero():
    coeffs = make_field("linear", domain=UNIT, beta=1.0, sigma=0.7)
    g1 = cloud(UNIT, 0.2, 0.5, 300, seed=1)
    g2 = cloud(UNIT, 0.5, 0.8, 300, seed=2)
    config = PicardConfig(t_final=0.1, n_nodes=4, particles_n=300, dt=0.005,
                          tol=1e-6, theta=5.0)
    assert estimate_contraction(coeffs, g1, g2, config, seed=3) == 0.0


def test_dissipative_mean_field_contracts():
    coeffs = make_field("mean_field_attraction", domain=UNIT, beta=1.0,
                        lam=0.8, sigma=0.5)
    g1 = cloud(UNIT, 0.2, 0.8, 500, seed=1)
    g2 = cloud(UNIT, 0.3, 0.9, 500, seed=2)
    config = PicardConfig(t_final=0.2, n_nodes=8, particles_n=500, dt=0.005,
                          tol=1e-6, theta=10.0)
    ratio = estimate_contraction(coeffs, g1, g2, config, seed=5)
    assert 0.0 < ratio < 0.8


def test_ratio_decreases_with_theta_when_gap_grows_in_time(expansive):
    _, _, _, _, (times, num, den) = expansive
    ratios = []
    for theta in (0.0, 2.0, 10.0, 50.0):
        w = np.exp(-theta * times)
        ratios.append(np.max(w * num) / np.max(w * den))
    assert all(b <= a + 1e-12 for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < ratios[0]


def test_select_theta_returns_smallest_certifying_theta(expansive):
    coeffs, g1, g2, config, profile = expansive
    target = 0.05
    chosen, ratios = select_theta(coeffs, g1, g2, config, target=target,
                                  profile=profile)
    assert ratios[chosen] < target
    for theta in sorted(ratios):
        if theta < chosen:
            assert ratios[theta] >= target
    with pytest.raises(NonConvergenceError):
        select_theta(coeffs, g1, g2, config, target=-1.0, profile=profile)
    with pytest.raises(IndeterminateRatioError):
        select_theta(coeffs, g1, g1, config, seed=3)


def test_estimate_accepts_precomputed_profile(expansive):
    coeffs, g1, g2, config, profile = expansive
    direct = estimate_contraction(coeffs, g1, g2, config, seed=3)
    reused = estimate_contraction(coeffs, g1, g2, config, profile=profile)
    assert direct == reused


# ---- evolution-identity residual ----------------------------------------


def test_residual_small_for_eigenfunction_of_absorbed_motion():
    # f is an eigenfunction of the generator on the unit interval, so the
    # integrated identity holds up to discretization and sampling noise
    coeffs = make_field("linear", domain=UNIT, beta=0.0, sigma=1.0)
    gamma = cloud(UNIT, 0.0, 1.0, 8000, seed=4)
    config = PicardConfig(t_final=0.1, n_nodes=10, particles_n=8000, dt=1e-3,
                          tol=1e-3, theta=0.0)
    flow, _ = picard_solve(coeffs, gamma, config, seed=4)
    f = DirichletTestFunction.interval_sine(UNIT)
    assert fokker_planck_residual(flow, coeffs, f) < 0.03


def test_residual_zero_for_empty_flow_and_single_node():
    coeffs = make_field("linear", domain=UNIT, beta=0.0, sigma=1.0)
    config = PicardConfig(t_final=0.1, n_nodes=4, particles_n=20, dt=0.005,
                          tol=1e-9)
    flow, _ = picard_solve(coeffs, SubProbMeasure.zero(UNIT), config, seed=1)
    f = DirichletTestFunction.interval_sine(UNIT)
    assert fokker_planck_residual(flow, coeffs, f) == 0.0


def test_residual_rejects_non_vanishing_test_function():
    coeffs = make_field("linear", domain=UNIT, beta=0.0, sigma=1.0)
    gamma = cloud(UNIT, 0.2, 0.8, 50, seed=4)
    config = PicardConfig(t_final=0.05, n_nodes=2, particles_n=50, dt=0.005,
                          tol=1e-3)
    flow, _ = picard_solve(coeffs, gamma, config, seed=4)
    g = DirichletTestFunction(lambda x: np.ones(len(x)),
                              lambda x: np.zeros_like(x),
                              lambda x: np.zeros((len(x), 1, 1)))
    with pytest.raises(InvalidArgumentError):
        fokker_planck_residual(flow, coeffs, g)
