"""Tests for the spectral module."""

import numpy as np
import pytest

from epinet.analysis.spectral import (
    build_A, check_subcritical, equilibrium_population, growth_rate_lambda1, lyapunov_drift_constants,
    lyapunov_vector, offspring_matrix, offspring_matrix_absorbing, r0, solve_refined, spectral_abscissa,
)
from epinet.models.network import NetworkModel
from epinet.transformers.calibration import synth_network
from epinet.utils.errors import ModelValidationError, NumericalError


def test_build_A_three_node(three_node_model):
    expected = np.array([[-0.4, 0.1, 0.1], [0.2, -0.75, 0.0], [0.2, 0.5, -0.18]])
    np.testing.assert_allclose(build_A(three_node_model).A, expected, atol=1e-15)


def test_build_A_columns_sum_to_net_growth(three_node_model):
    # Transfers conserve individuals, so column sums are b - d
    A = build_A(three_node_model).A
    np.testing.assert_allclose(A.sum(axis=0), three_node_model.b - three_node_model.d, atol=1e-15)


def test_check_subcritical():
    abscissa, subcritical = check_subcritical(np.array([[-1.0]]))
    assert abscissa == pytest.approx(-1.0)
    assert subcritical
    assert check_subcritical(np.array([[0.5]])) == (pytest.approx(0.5), False)


def test_check_subcritical_boundary_counts_as_not_subcritical():
    _, subcritical = check_subcritical(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    assert not subcritical


def test_equilibrium_population_single_node():
    np.testing.assert_allclose(equilibrium_population(np.array([[-0.5]]), np.array([5.0])), [10.0])


def test_equilibrium_population_symmetric(symmetric_model):
    z_star = equilibrium_population(build_A(symmetric_model), symmetric_model.B)
    np.testing.assert_allclose(z_star, [2.0, 2.0], rtol=1e-13)


def test_equilibrium_population_zero_immigration(three_node_model):
    z_star = equilibrium_population(build_A(three_node_model), np.zeros(3))
    np.testing.assert_array_equal(z_star, np.zeros(3))


def test_equilibrium_population_rejects_supercritical():
    with pytest.raises(ModelValidationError, match="subcritical"):
        equilibrium_population(np.array([[0.1]]), np.array([1.0]))


def test_equilibrium_population_residual(three_node_model):
    A = build_A(three_node_model).A
    z_star = equilibrium_population(A, three_node_model.B)
    np.testing.assert_allclose(A @ z_star + three_node_model.B, 0.0, atol=1e-13)
    assert np.all(z_star > 0)


def test_solve_refined_singular():
    with pytest.raises(NumericalError, match="singular"):
        solve_refined(np.array([[1.0, 2.0], [2.0, 4.0]]), np.array([1.0, 1.0]))


def test_offspring_matrix_single_node(fmd_model):
    C = offspring_matrix(fmd_model)
    assert C[0, 0] == pytest.approx(0.67 * 5.5)
    assert r0(C) == pytest.approx(3.685, abs=5e-4)


def test_offspring_matrix_symmetric(symmetric_model):
    C = offspring_matrix(symmetric_model)
    np.testing.assert_allclose(C, (2.0 / 3.0) * np.array([[2.0, 1.0], [1.0, 2.0]]), rtol=1e-13)
    assert r0(C) == pytest.approx(2.0, rel=1e-12)


def test_offspring_matrix_absorbing_agrees(three_node_model):
    model = three_node_model.replace(beta=[1.0, 2.0, 0.5], gamma=[0.3, 0.2, 0.4])
    np.testing.assert_allclose(offspring_matrix_absorbing(model), offspring_matrix(model), rtol=1e-12)


def test_offspring_matrix_no_contacts(symmetric_model):
    C = offspring_matrix(symmetric_model.replace(beta=[0.0, 0.0]))
    np.testing.assert_array_equal(C, np.zeros((2, 2)))
    assert r0(C) == 0.0


def test_offspring_matrix_requires_removal():
    model = NetworkModel(B=[1.0], b=[0.0], d=[0.0], theta=[[0.0]], beta=[1.0], gamma=[0.0])
    with pytest.raises(ModelValidationError, match="never removed"):
        offspring_matrix(model)


def test_r0_reducible_matrix():
    C = np.array([[0.5, 0.0], [0.0, 1.5]])
    assert r0(C) == pytest.approx(1.5, rel=1e-10)


def test_r0_rejects_negative_entries():
    with pytest.raises(ModelValidationError):
        r0(np.array([[1.0, -0.1], [0.0, 1.0]]))


def test_r0_uniform_rates_on_large_network():
    """
    R0 equals beta / (gamma + d) when beta, gamma and d are uniform.

    The all-ones vector is then the Perron vector. With d left as drawn and
    small transfers, R0 tends to the largest beta / (gamma + d_i) instead of
    the value at the mean death rate, so d is made uniform here.
    """
    model = synth_network(50, 0.1, seed=3)
    model = model.replace(beta=np.full(50, 2.0), gamma=np.full(50, 0.5), d=np.full(50, model.d.mean()))
    expected = 2.0 / (0.5 + model.d[0])
    assert r0(offspring_matrix(model)) == pytest.approx(expected, rel=1e-9)


def test_growth_rate_sign_matches_r0(fmd_model, symmetric_model):
    assert growth_rate_lambda1(fmd_model) == pytest.approx(0.67 - 1 / 5.5)
    assert growth_rate_lambda1(symmetric_model) == pytest.approx(1.0)
    subcritical = symmetric_model.replace(beta=[0.5, 0.5])
    assert r0(offspring_matrix(subcritical)) < 1
    assert growth_rate_lambda1(subcritical) < 0


def test_spectral_abscissa_large_sparse_matrix():
    n = 250
    M = np.diag(np.concatenate([[-0.5], -np.linspace(1.0, 5.0, n - 1)]))
    M[0, 1] = 0.1
    assert spectral_abscissa(M) == pytest.approx(-0.5, abs=1e-8)


def test_lyapunov_vector(three_node_model):
    A = build_A(three_node_model).A
    v = lyapunov_vector(A, three_node_model.B)
    assert np.all(v > 0)
    np.testing.assert_allclose(A.T @ v + three_node_model.B, 0.0, atol=1e-13)


def test_lyapunov_vector_rejects_zero_immigration(three_node_model):
    with pytest.raises(ModelValidationError, match="B != 0"):
        lyapunov_vector(build_A(three_node_model), np.zeros(3))


def test_lyapunov_drift_constants(three_node_model):
    A = build_A(three_node_model).A
    v, c, R = lyapunov_drift_constants(A, three_node_model.B, eta=0.1)
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.exponential(1.0, 3)
        x *= (R * (1.0 + rng.random() * 10.0)) / x.sum()
        assert v @ (A @ x + three_node_model.B) < -c * (v @ x + 1.0)


def test_random_models_sign_equivalence_and_perron_root():
    rng = np.random.default_rng(2024)
    supercritical = 0
    for seed in range(1000):
        model = synth_network(1 + seed % 6, 0.5, seed=seed)
        model = model.replace(beta=model.beta * rng.uniform(0.5, 1.5, model.n))
        C = offspring_matrix(model)
        reproduction = r0(C)
        assert reproduction == pytest.approx(np.max(np.linalg.eigvals(C).real), rel=1e-8, abs=1e-12)
        if abs(reproduction - 1.0) > 1e-9:
            assert (reproduction > 1) == (growth_rate_lambda1(model) > 0)
        supercritical += reproduction > 1
        A = build_A(model)
        if check_subcritical(A)[1]:
            assert np.all(lyapunov_vector(A, model.B) > 0)
    assert 0 < supercritical < 1000
