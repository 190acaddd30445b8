"""Tests for the rate function and minimum-action estimates."""

import math

import numpy as np
import pytest

from epinet.analysis.ldp import (
    BallExitTarget, PointTarget, birth_death_jumps, local_rate_L, minimize_action, path_action,
    population_exit_cost, population_jumps, sir_exit_cost, sir_jumps,
)
from epinet.analysis.ode import find_endemic_equilibrium, sir_rhs
from epinet.analysis.spectral import build_A
from epinet.utils.errors import ModelValidationError

# Immigration at rate 1 and death at rate x: z* = 1 and the cost of
# reaching 1.5 is 1.5 log 1.5 - 0.5
IMMIGRATION_DEATH_COST = 1.5 * math.log(1.5) - 0.5


@pytest.fixture
def immigration_death():
    return birth_death_jumps(lambda x: 1.0, lambda x: x)


def test_rate_function_vanishes_on_the_drift(three_node_model):
    jumps = population_jumps(three_node_model)
    x = np.array([3.0, 1.0, 7.0])
    value, u, hit = local_rate_L(jumps, x, jumps.drift(x))
    assert value == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(u, 0.0, atol=1e-6)
    assert not hit


def test_rate_function_symmetric_walk():
    jumps = birth_death_jumps(lambda x: 1.0, lambda x: 1.0)
    value, u, hit = local_rate_L(jumps, np.array([1.0]), np.array([1.0]))
    assert u[0] == pytest.approx(math.asinh(0.5), abs=1e-9)
    assert value == pytest.approx(0.2451, abs=1e-4)
    assert not hit


def test_rate_function_unreachable_velocity_hits_box():
    jumps = birth_death_jumps(lambda x: 0.0, lambda x: x)
    value, u, hit = local_rate_L(jumps, np.array([1.0]), np.array([1.0]), u_max=40.0)
    assert hit
    assert u[0] == pytest.approx(40.0)
    assert value > 30.0


def test_rate_function_rejects_negative_state(immigration_death):
    with pytest.raises(ModelValidationError):
        local_rate_L(immigration_death, np.array([-1.0]), np.array([0.0]))


def test_population_drift_is_linear(three_node_model):
    jumps = population_jumps(three_node_model)
    x = np.array([2.0, 0.5, 4.0])
    expected = build_A(three_node_model).A @ x + three_node_model.B
    np.testing.assert_allclose(jumps.drift(x), expected, atol=1e-13)


def test_sir_drift_matches_ode(symmetric_model):
    jumps = sir_jumps(symmetric_model)
    y = np.array([1.5, 1.2, 0.3, 0.4, 0.2, 0.3])
    np.testing.assert_allclose(jumps.drift(y), sir_rhs(symmetric_model, y), atol=1e-13)


def test_sir_jacobian_matches_finite_differences(symmetric_model):
    jumps = sir_jumps(symmetric_model)
    y = np.array([1.5, 1.2, 0.3, 0.4, 0.2, 0.3])
    J = jumps.jacobian(y)
    h = 1e-6
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        column = (jumps.propensity(y + e) - jumps.propensity(y - e)) / (2 * h)
        np.testing.assert_allclose(J[:, k], column, atol=1e-7)


def test_duplicate_death_block(symmetric_model):
    single = sir_jumps(symmetric_model)
    double = sir_jumps(symmetric_model, duplicate_death_block=True)
    assert double.jumps.shape[0] == single.jumps.shape[0] + 6
    y = np.array([1.0, 1.0, 0.5, 0.5, 0.2, 0.2])
    death_flow = -symmetric_model.d[0] * y
    np.testing.assert_allclose(double.drift(y) - single.drift(y), death_flow, atol=1e-13)


def test_path_action_of_deterministic_path(immigration_death):
    times = np.linspace(0.0, 4.0, 129)
    points = 1.0 + 0.5 * np.exp(-times)
    action, error = path_action(immigration_death, times, points)
    assert action == pytest.approx(0.0, abs=1e-4)
    assert error >= 0


def test_path_action_rejects_bad_grid(immigration_death):
    with pytest.raises(ModelValidationError):
        path_action(immigration_death, np.array([0.0, 1.0, 1.0]), np.ones(3))


def test_minimize_action_immigration_death(immigration_death):
    path = minimize_action(immigration_death, np.array([1.0]), PointTarget((1.5,)), T=10.0,
                           m=64, restarts=1)
    assert path.action == pytest.approx(IMMIGRATION_DEATH_COST, rel=0.05)
    assert path.points[0, 0] == 1.0
    assert path.points[-1, 0] == pytest.approx(1.5)
    assert not path.boundary_hit
    assert path.to_dict()['upper_bound'] is True
    assert list(path.to_frame().columns) == ['time', 'x_1']


def test_ball_exit_picks_the_cheaper_side(immigration_death):
    # Reaching 0.5 costs 0.5 - 0.5 log 2 > cost of reaching 1.5
    path = minimize_action(immigration_death, np.array([1.0]), BallExitTarget((1.0,), 0.5), T=10.0,
                           m=64, restarts=1)
    assert path.points[-1, 0] == pytest.approx(1.5)
    assert path.action == pytest.approx(IMMIGRATION_DEATH_COST, rel=0.05)


def test_minimize_action_trivial_target(immigration_death):
    path = minimize_action(immigration_death, np.array([1.0]), PointTarget((1.0,)), T=5.0, m=16)
    assert path.action == 0.0
    assert path.points.shape == (17, 1)


def test_minimize_action_validates_inputs(immigration_death):
    with pytest.raises(ModelValidationError, match="at least 8"):
        minimize_action(immigration_death, np.array([1.0]), PointTarget((1.5,)), T=5.0, m=4)
    with pytest.raises(ModelValidationError):
        minimize_action(immigration_death, np.array([1.0]), BallExitTarget((1.0,), 0.5, norm='l1'), T=5.0)


@pytest.mark.slow
def test_population_exit_cost_is_positive(three_node_model):
    path = population_exit_cost(three_node_model, eps=0.5, T=10.0, m=32, restarts=2)
    assert path.action > 0
    z_star = path.points[0]
    assert np.max(np.abs(path.points[-1] - z_star)) == pytest.approx(0.5, abs=1e-9)


@pytest.mark.slow
def test_sir_exit_cost(endemic_model):
    report = find_endemic_equilibrium(endemic_model)
    path = sir_exit_cost(endemic_model, report, eps=0.5, T=10.0, m=32, restarts=1)
    assert path.action > 0
    disease_free = endemic_model.replace(beta=[0.5])
    with pytest.raises(ModelValidationError, match="stable endemic"):
        sir_exit_cost(disease_free, find_endemic_equilibrium(disease_free), 0.5)


def test_rate_function_is_convex_in_velocity(three_node_model):
    jumps = population_jumps(three_node_model)
    x = np.array([3.0, 1.0, 7.0])
    drift = jumps.drift(x)
    rng = np.random.default_rng(11)
    for _ in range(50):
        first = drift + rng.normal(scale=0.5, size=3)
        second = drift + rng.normal(scale=0.5, size=3)
        L1, _, _ = local_rate_L(jumps, x, first)
        L2, _, _ = local_rate_L(jumps, x, second)
        L_mid, _, _ = local_rate_L(jumps, x, 0.5 * (first + second))
        assert L_mid <= 0.5 * (L1 + L2) + 1e-9
