"""Tests for the exact stochastic simulators."""

import numpy as np
import pytest

from epinet.models.network import NetworkModel, ScalingConfig
from epinet.simulation.ssa import (
    KIND_CODES, OutbreakClassifier, exit_time_ball, simulate_ancestor, simulate_branching,
    simulate_coupled, simulate_population, simulate_sir,
)
from epinet.utils.errors import ModelValidationError
from epinet.utils.rng import RngSpec

INFECTIVE_KINDS = [KIND_CODES[k] for k in ('infection', 'death_i', 'recovery', 'transfer_i')]


def _same_path(a, b):
    return (
        np.array_equal(a.times, b.times)
        and np.array_equal(a.kinds, b.kinds)
        and np.array_equal(a.node_from, b.node_from)
        and np.array_equal(a.node_to, b.node_to)
    )


def test_population_run_is_deterministic(three_node_model, three_node_x0):
    first = simulate_population(three_node_model, 10, three_node_x0, 20.0, RngSpec(7, 3))
    second = simulate_population(three_node_model, 10, three_node_x0, 20.0, RngSpec(7, 3))
    other = simulate_population(three_node_model, 10, three_node_x0, 20.0, RngSpec(7, 4))
    assert first.n_events > 0
    assert _same_path(first, second)
    assert not _same_path(first, other)


def test_population_replay_matches_final_state(three_node_model, three_node_x0):
    trajectory = simulate_population(three_node_model, 10, three_node_x0, 20.0, RngSpec(1))
    np.testing.assert_array_equal(trajectory.initial, [[50, 20, 200]])
    times, states = trajectory.state_path()
    assert times[0] == 0.0 and len(times) == trajectory.n_events + 1
    np.testing.assert_array_equal(states[-1], trajectory.final)
    assert np.all(states >= 0)
    replayed = list(trajectory.replay())
    np.testing.assert_array_equal(replayed[-1][1], trajectory.final)
    np.testing.assert_array_equal(replayed[5][1], states[5])
    assert trajectory.end_reason == 'horizon'
    assert trajectory.end_time == 20.0


def test_population_transfers_stay_on_edges(three_node_model, three_node_x0):
    trajectory = simulate_population(three_node_model, 10, three_node_x0, 10.0, RngSpec(2))
    transfers = trajectory.kinds == KIND_CODES['transfer']
    assert transfers.any()
    sources = trajectory.node_from[transfers]
    targets = trajectory.node_to[transfers]
    assert np.all(three_node_model.theta[sources, targets] > 0)
    assert np.all(trajectory.node_to[~transfers] == -1)


def test_population_empty_absorbing_state():
    model = NetworkModel(B=[0.0], b=[0.0], d=[1.0], theta=[[0.0]], beta=[0.0], gamma=[0.0])
    trajectory = simulate_population(model, 10, np.array([0.0]), 5.0, RngSpec(1))
    assert trajectory.n_events == 0
    assert trajectory.end_reason == 'horizon'


def test_population_event_cap(three_node_model, three_node_x0):
    trajectory = simulate_population(three_node_model, 100, three_node_x0, 100.0, RngSpec(1), event_cap=50)
    assert trajectory.n_events == 50
    assert trajectory.end_reason == 'cap'


def test_population_rejects_infinite_horizon(three_node_model, three_node_x0):
    with pytest.raises(ModelValidationError, match="finite"):
        simulate_population(three_node_model, 10, three_node_x0, float('inf'), RngSpec(1))


def test_event_frame_columns(three_node_model, three_node_x0):
    frame = simulate_population(three_node_model, 5, three_node_x0, 2.0, RngSpec(1)).to_frame()
    assert list(frame.columns) == ['time', 'event_kind', 'node_from', 'node_to']
    assert set(frame['event_kind']) <= {'inflow', 'death', 'transfer'}


def test_sir_without_infectives_is_extinct(symmetric_model):
    scaling = ScalingConfig(N=10, x0=np.array([2.0, 2.0]), I0=np.array([0, 0]))
    trajectory = simulate_sir(symmetric_model, scaling, rng=RngSpec(1))
    assert trajectory.end_reason == 'extinct'
    assert trajectory.extinction_time == 0.0
    assert trajectory.n_events == 0


def test_sir_statistics_match_event_log(symmetric_model, small_scaling):
    trajectory = simulate_sir(symmetric_model, small_scaling, t_end=50.0, rng=RngSpec(11))
    assert trajectory.total_size == int(np.sum(trajectory.kinds == KIND_CODES['infection']))
    totals = trajectory.infective_totals()
    assert trajectory.max_infectives == totals.max()
    assert totals[-1] == trajectory.final[1].sum()
    _, states = trajectory.state_path()
    assert np.all(states >= 0)
    np.testing.assert_array_equal(states[-1], trajectory.final)
    if trajectory.end_reason == 'extinct':
        assert trajectory.extinction_time == trajectory.times[-1]
        assert totals[-1] == 0


def test_sir_stops_on_major(symmetric_model):
    scaling = ScalingConfig(N=1000, x0=np.array([2.0, 2.0]), I0=np.array([20, 20]))
    classifier = OutbreakClassifier.for_model(symmetric_model, scaling)
    assert classifier.size_threshold == pytest.approx(200.0)
    trajectory = simulate_sir(symmetric_model, scaling, rng=RngSpec(3), classifier=classifier,
                              stop_on_major=True)
    # 40 initial infectives with q = 0.5 almost surely start a major outbreak
    assert trajectory.end_reason == 'major'
    assert classifier.is_major(trajectory.total_size, trajectory.max_infectives)


def test_stop_on_major_needs_classifier(symmetric_model, small_scaling):
    with pytest.raises(ModelValidationError):
        simulate_sir(symmetric_model, small_scaling, rng=1, stop_on_major=True)


def test_classifier_thresholds():
    classifier = OutbreakClassifier(N=100, z_total=4.0)
    assert classifier.size_threshold == 100
    assert classifier.peak_threshold == pytest.approx(20.0)
    assert not classifier.is_major(100, 19)
    assert classifier.is_major(101, 0)
    assert classifier.is_major(0, 20)


def test_branching_reaches_cap(symmetric_model):
    trajectory = simulate_branching(symmetric_model, np.array([50, 50]), cap=150, rng=RngSpec(5))
    assert trajectory.end_reason == 'cap'
    assert trajectory.infective_totals()[-1] == 150
    assert set(np.unique(trajectory.kinds)) <= set(INFECTIVE_KINDS)


def test_branching_without_contacts_dies_out(symmetric_model):
    model = symmetric_model.replace(beta=[0.0, 0.0])
    trajectory = simulate_branching(model, np.array([3, 2]), cap=100, rng=RngSpec(5))
    assert trajectory.end_reason == 'extinct'
    assert trajectory.total_size == 0
    assert trajectory.extinction_time == trajectory.times[-1]


def test_branching_rejects_empty_start(symmetric_model):
    with pytest.raises(ModelValidationError, match="at least one"):
        simulate_branching(symmetric_model, np.array([0, 0]), cap=10, rng=1)


def test_exit_time_ball(symmetric_model):
    result = exit_time_ball(symmetric_model, 5, 1.0, 1e4, RngSpec(2))
    assert not result.censored
    assert result.value > 0
    censored = exit_time_ball(symmetric_model, 200, 1.0, 0.5, RngSpec(2))
    assert censored.censored
    assert censored.value == 0.5


def test_exit_time_ball_rejects_large_radius(symmetric_model):
    with pytest.raises(ModelValidationError, match="eps"):
        exit_time_ball(symmetric_model, 5, 2.5, 10.0, RngSpec(2))


def test_ancestor_offspring(symmetric_model):
    assert np.array_equal(simulate_ancestor(symmetric_model.replace(beta=[0.0, 0.0]), 0, RngSpec(1)), [0, 0])
    counts = np.array([simulate_ancestor(symmetric_model, 0, RngSpec(9, k)) for k in range(4000)])
    # Row 0 of C is (4/3, 2/3)
    np.testing.assert_allclose(counts.mean(axis=0), [4 / 3, 2 / 3], atol=0.12)


def _assert_agree_before_divergence(sir, branching, divergence):
    """Check the infective events of both paths coincide before divergence; return how many."""
    cutoff = np.inf if divergence is None else divergence
    infective = np.isin(sir.kinds, INFECTIVE_KINDS) & (sir.times < cutoff)
    early = branching.times < cutoff
    np.testing.assert_array_equal(sir.times[infective], branching.times[early])
    np.testing.assert_array_equal(sir.kinds[infective], branching.kinds[early])
    np.testing.assert_array_equal(sir.node_from[infective], branching.node_from[early])
    np.testing.assert_array_equal(sir.node_to[infective], branching.node_to[early])
    return int(early.sum())


def test_coupled_paths_agree_before_first_rejection(symmetric_model):
    scaling = ScalingConfig(N=20, x0=np.array([2.0, 2.0]), I0=np.array([2, 1]))
    agreed = 0
    for stream in range(30):
        sir, branching, divergence = simulate_coupled(symmetric_model, scaling, 30.0, RngSpec(4, stream), cap=500)
        agreed += int(_assert_agree_before_divergence(sir, branching, divergence) > 0)
    assert agreed > 0


def test_coupled_is_deterministic(symmetric_model):
    scaling = ScalingConfig(N=20, x0=np.array([2.0, 2.0]), I0=np.array([1, 1]))
    first = simulate_coupled(symmetric_model, scaling, 10.0, RngSpec(8, 1))
    second = simulate_coupled(symmetric_model, scaling, 10.0, RngSpec(8, 1))
    assert _same_path(first[0], second[0]) and _same_path(first[1], second[1])
    assert first[2] == second[2]


@pytest.mark.slow
def test_branching_survival_matches_extinction_probability(fmd_model):
    runs = 2000
    reached = sum(
        simulate_branching(fmd_model, np.array([1]), cap=200, rng=RngSpec(21, k)).end_reason == 'cap'
        for k in range(runs)
    )
    survival = 1.0 - (1 / 5.5) / 0.67
    std_error = np.sqrt(survival * (1.0 - survival) / runs)
    assert abs(reached / runs - survival) < 4 * std_error


@pytest.mark.slow
def test_exit_time_median_grows_with_N(symmetric_model):
    medians = []
    for N in (5, 20, 50):
        times = [exit_time_ball(symmetric_model, N, 0.5, 1e4, RngSpec(13, k)) for k in range(50)]
        assert not any(t.censored for t in times)
        medians.append(np.median([t.value for t in times]))
    assert medians[0] < medians[1] < medians[2]


@pytest.mark.slow
def test_coupled_divergence_is_rarer_at_large_N(fmd_open_model):
    frequencies = []
    for N in (100, 10000):
        scaling = ScalingConfig(N=N, x0=np.array([1.0]), I0=np.array([1]))
        diverged = 0
        for stream in range(300):
            sir, branching, divergence = simulate_coupled(fmd_open_model, scaling, 5.0, RngSpec(17, stream))
            _assert_agree_before_divergence(sir, branching, divergence)
            diverged += divergence is not None
        frequencies.append(diverged / 300)
    assert frequencies[1] < frequencies[0]
