import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from killedmv.errors import EvaluationError, InvalidArgumentError, ResolutionError
from killedmv.geometry import Domain
from killedmv.measures import (
    LyapunovV,
    MeasureFlow,
    SubProbMeasure,
    first_moment,
    integrate,
    kato_class_ok,
    lpq_norm,
    quadratic_lyapunov,
    restrict_to_O,
)

UNIT = Domain.interval(0.0, 1.0)


def test_restrict_all_interior():
    mu = restrict_to_O(UNIT, [0.2, 0.4, 0.6, 0.8])
    assert mu.mass() == pytest.approx(1.0)
    assert len(mu.weights) == 4
    assert np.all(mu.weights == 0.25)


def test_restrict_boundary_points_dead():
    mu = restrict_to_O(UNIT, [0.2, 0.4, 0.0, 1.0])
    assert mu.mass() == pytest.approx(0.5)
    assert mu.dead_mass() == pytest.approx(0.5)
    # dead atoms keep their frozen location
    assert set(mu.locations[~mu.alive][:, 0]) == {0.0, 1.0}


def test_restrict_no_interior():
    mu = restrict_to_O(UNIT, [0.0, 1.0])
    assert mu.mass() == 0.0


def test_restrict_empty_raises():
    with pytest.raises(InvalidArgumentError):
        restrict_to_O(UNIT, np.zeros((0, 1)))


def test_mass_conservation_under_restriction():
    rng = np.random.default_rng(0)
    pts = rng.random(1000) * 1.2 - 0.1  # some outside
    pts = np.clip(pts, 0.0, 1.0)
    mu = restrict_to_O(UNIT, pts)
    assert mu.mass() + mu.dead_mass() == pytest.approx(1.0)


def test_integrate_point_mass():
    mu = SubProbMeasure(UNIT, [[0.5]], [1.0])
    assert integrate(mu, lambda x: x ** 2) == pytest.approx(0.25)


def test_integrate_zero_measure():
    assert integrate(SubProbMeasure.zero(UNIT), lambda x: x + 7) == 0.0


def test_integrate_monte_carlo_mean():
    # uniform draws: mu(x) = 1/2 within the CLT band
    rng = np.random.default_rng(7)
    n = 10 ** 5
    mu = restrict_to_O(UNIT, rng.random(n))
    err = 3.0 * np.sqrt(1.0 / 12.0) / np.sqrt(n)
    assert abs(integrate(mu, lambda x: x) - 0.5) <= err


def test_integrate_nonfinite_names_atom():
    mu = SubProbMeasure(UNIT, [[0.5], [0.25]], [0.5, 0.5])
    with pytest.raises(EvaluationError, match="atom"):
        integrate(mu, lambda x: np.where(x == 0.25, np.nan, x))


def test_integrate_linear_and_homogeneous():
    rng = np.random.default_rng(3)
    pts = rng.random(50)
    w = rng.random(50) / 50
    mu = SubProbMeasure(UNIT, pts, w)
    f = lambda x: np.sin(3 * x)
    g = lambda x: x ** 2
    lhs = integrate(mu, lambda x: 2 * f(x) + 5 * g(x))
    assert lhs == pytest.approx(2 * integrate(mu, f) + 5 * integrate(mu, g))
    mu2 = SubProbMeasure(UNIT, pts, 0.5 * w)
    assert integrate(mu2, f) == pytest.approx(0.5 * integrate(mu, f))


def test_first_moment_examples():
    assert first_moment(SubProbMeasure(UNIT, [[0.5]], [1.0])) == pytest.approx(0.5)
    assert first_moment(SubProbMeasure.zero(UNIT)) == 0.0
    mu = SubProbMeasure(UNIT, [[0.2], [0.8]], [0.5, 0.25])
    assert first_moment(mu) == pytest.approx(0.3)


def test_mass_cap_enforced():
    with pytest.raises(InvalidArgumentError):
        SubProbMeasure(UNIT, [[0.5], [0.6]], [0.7, 0.7])
    # reweighted clouds may pass a statistical tolerance
    SubProbMeasure(UNIT, [[0.5], [0.6]], [0.5, 0.5004], mass_tol=1e-3)


def test_kernel_abs_against_direct():
    rng = np.random.default_rng(5)
    pts = rng.random(200)
    w = rng.random(200) / 200
    mu = SubProbMeasure(UNIT, pts, w)
    q = rng.random(64) * 1.4 - 0.2
    direct_cap = np.array([np.sum(w * np.minimum(np.abs(x - pts), 1.0)) for x in q])
    direct = np.array([np.sum(w * np.abs(x - pts)) for x in q])
    assert np.allclose(mu.kernel_abs(q, cap=1.0), direct_cap, atol=1e-12)
    assert np.allclose(mu.kernel_abs(q), direct, atol=1e-12)


def test_flow_grid_validation():
    g = SubProbMeasure(UNIT, [[0.5]], [1.0])
    flow = MeasureFlow([0.0, 0.1, 0.2], [g, g, g])
    assert flow.grid_step == pytest.approx(0.1)
    with pytest.raises(InvalidArgumentError):
        MeasureFlow([0.1, 0.2], [g, g])
    with pytest.raises(InvalidArgumentError):
        MeasureFlow([0.0, 0.1, 0.35], [g, g, g])


def test_flow_mass_monotone_check():
    up = [SubProbMeasure(UNIT, [[0.5]], [w]) for w in (1.0, 0.8, 0.9)]
    down = [SubProbMeasure(UNIT, [[0.5]], [w]) for w in (1.0, 0.8, 0.7)]
    assert MeasureFlow([0, 0.1, 0.2], down).check_mass_monotone()
    assert not MeasureFlow([0, 0.1, 0.2], up).check_mass_monotone()


def test_lyapunov_quadratic_valid():
    V = quadratic_lyapunov()
    ok, worst = V.validate(np.linspace(-3, 3, 41))
    assert ok, worst


def test_lyapunov_violation_detected():
    bad = LyapunovV(lambda p: np.full(np.atleast_2d(p).shape[0], 0.5),
                    lambda p: np.zeros_like(np.atleast_2d(p)),
                    lambda p: np.zeros((np.atleast_2d(p).shape[0], 1, 1)),
                    K=1.0, eps=0.5)
    ok, worst = bad.validate(np.array([0.0]))
    assert not ok and worst == pytest.approx(0.5)


def test_lpq_constant_function():
    t = np.linspace(0.0, 1.0, 101)
    x = np.linspace(-3.0, 3.0, 6001)
    vals = np.ones((101, 6001))
    for p in (2.0, 4.0):
        assert lpq_norm(vals, t, [x], p, p) == pytest.approx(2 ** (1 / p), rel=2e-3)


def test_lpq_zero():
    t = np.linspace(0.0, 1.0, 11)
    x = np.linspace(-2.0, 2.0, 41)
    assert lpq_norm(np.zeros((11, 41)), t, [x], 3.0, 3.0) == 0.0


def test_lpq_indicator_frozen_value():
    # f = 1 on [0,1] x [-1,1]; analytic norm 2^(1/4) at p = q = 4
    t = np.linspace(0.0, 1.0, 1001)
    x = np.linspace(-2.0, 2.0, 4001)
    vals = np.where(np.abs(x)[None, :] <= 1.0, 1.0, 0.0) * np.ones((1001, 1))
    assert lpq_norm(vals, t, [x], 4.0, 4.0) == pytest.approx(2 ** 0.25, abs=1e-3)


def test_lpq_monotone():
    rng = np.random.default_rng(11)
    t = np.linspace(0.0, 1.0, 21)
    x = np.linspace(-2.0, 2.0, 201)
    f = rng.random((21, 201))
    g = f + rng.random((21, 201))
    assert lpq_norm(f, t, [x], 3.0, 4.0) <= lpq_norm(g, t, [x], 3.0, 4.0) + 1e-12


def test_lpq_resolution_error():
    t = np.linspace(0.0, 1.0, 5)
    x = np.linspace(-5.0, 5.0, 6)  # step 2 > ball radius
    with pytest.raises(ResolutionError):
        lpq_norm(np.ones((5, 6)), t, [x], 3.0, 3.0)


def test_kato_class():
    assert kato_class_ok(4.0, 8.0, 1)       # 1/4 + 2/8 = 0.5 < 1
    assert not kato_class_ok(4.0, 4.0, 2)   # 2/4 + 2/4 = 1
    assert not kato_class_ok(2.0, 8.0, 1)   # p must exceed 2


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.0, 0.2)),
                min_size=1, max_size=6))
def test_measure_mass_formula(atoms):
    pts = [a[0] for a in atoms]
    w = [a[1] for a in atoms]
    if sum(w) > 1.0:
        return
    mu = SubProbMeasure(UNIT, pts, w)
    assert mu.mass() == pytest.approx(sum(w))
