"""
Monte Carlo Module

Ensemble orchestration and statistical checks of the simulators against
the analytic results: outbreak probabilities, stationary means, the law of
large numbers, offspring distributions, early growth rates, endemic
persistence scaling and exit-time scaling.

Replica k always draws from stream k of the run seed, and results are
gathered in stream order, so every ensemble is identical whatever the
number of worker processes.
"""

import logging
import math
from dataclasses import dataclass, field
from multiprocessing import Pool

import numpy as np
import pandas as pd

from epinet.analysis.ldp import population_exit_cost
from epinet.analysis.ode import find_endemic_equilibrium, linear_flow
from epinet.analysis.outbreak import eval_G
from epinet.analysis.spectral import (
    build_A, check_subcritical, equilibrium_population, growth_rate_lambda1, offspring_matrix,
)
from epinet.models.network import ScalingConfig
from epinet.simulation.ssa import (
    DEFAULT_EVENT_CAP, OutbreakClassifier, exit_time_ball, simulate_ancestor, simulate_branching,
    simulate_population, simulate_sir,
)
from epinet.utils.errors import InconclusiveError, ModelValidationError
from epinet.utils.rng import RngSpec

logger = logging.getLogger('epinet.simulation.montecarlo')

BOOTSTRAP_KEY = 1
MAX_CENSORED_FRACTION = 0.01
AMBIGUOUS_FRACTION = 0.01


def run_replicas(worker, tasks, workers=1):
    """
    Evaluate worker over tasks, in a process pool when workers > 1.

    Returns:
        list: Results in task order
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    logger.debug(f"Running {len(tasks)} replicas on {workers} workers")
    with Pool(processes=workers) as pool:
        return pool.map(worker, tasks, chunksize=max(1, len(tasks) // (4 * workers)))


@dataclass
class EnsembleResult:
    """Estimate with its standard error and the per-replicate summaries."""

    estimate: object
    std_error: object
    n_runs: int
    replicates: pd.DataFrame
    censored: int = 0
    inconclusive: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def classified(self):
        return self.n_runs - self.censored - self.inconclusive

    def to_dict(self):
        def plain(value):
            return value.tolist() if isinstance(value, np.ndarray) else value
        return {
            'estimate': plain(self.estimate),
            'std_error': plain(self.std_error),
            'n_runs': self.n_runs,
            'classified': self.classified,
            'censored': self.censored,
            'inconclusive': self.inconclusive,
            **{key: plain(value) for key, value in self.extras.items()},
        }


@dataclass
class ExperimentReport:
    """Per-level summary of a scaling experiment with its checks."""

    summary: pd.DataFrame
    replicates: pd.DataFrame
    checks: dict = field(default_factory=dict)
    inconclusive: str = None

    def to_dict(self):
        return {
            'summary': self.summary.to_dict(orient='records'),
            'checks': self.checks,
            'inconclusive': self.inconclusive,
        }


def _sample_stats(values):
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return values.mean(axis=0), np.zeros_like(values.mean(axis=0))
    return values.mean(axis=0), values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])


def _outbreak_replica(task):
    model, scaling, classifier, seed, stream, t_end, event_cap = task
    trajectory = simulate_sir(model, scaling, t_end=t_end, rng=RngSpec(seed, stream), event_cap=event_cap,
                              classifier=classifier, stop_on_major=True)
    major = trajectory.end_reason == 'major' or classifier.is_major(
        trajectory.total_size, trajectory.max_infectives)
    return {
        'stream': stream,
        'extinction_time': trajectory.extinction_time,
        'total_size': trajectory.total_size,
        'max_infectives': trajectory.max_infectives,
        'end_reason': trajectory.end_reason,
        'major': bool(major),
        'censored': bool(not major and trajectory.end_reason in ('horizon', 'cap')),
    }


def estimate_outbreak_prob(model, scaling, n_runs, seed, min_size=100, fraction=0.05,
                           t_end=math.inf, event_cap=DEFAULT_EVENT_CAP, workers=1):
    """
    Empirical major-outbreak frequency of the SIR process.

    Each replica runs until extinction or until the classifier declares a
    major outbreak. The estimate is the major fraction among classified
    replicates.

    Returns:
        EnsembleResult

    Raises:
        InconclusiveError: If more than 1% of replicates are censored, or more
            than 1% of total sizes fall in the decade below the size threshold
    """
    if n_runs < 100:
        raise ModelValidationError(f"n_runs must be at least 100, got {n_runs}")
    classifier = OutbreakClassifier.for_model(model, scaling, min_size, fraction)
    logger.info(f"Estimating outbreak probability: {n_runs} runs, size threshold "
                f"{classifier.size_threshold:.1f}")
    tasks = [(model, scaling, classifier, seed, k, t_end, event_cap) for k in range(n_runs)]
    frame = pd.DataFrame(run_replicas(_outbreak_replica, tasks, workers))

    censored = int(frame['censored'].sum())
    if censored > MAX_CENSORED_FRACTION * n_runs:
        logger.error(f"{censored} of {n_runs} replicates censored")
        raise InconclusiveError(f"{censored} of {n_runs} replicates could not be classified")
    minor = frame[~frame['major'] & ~frame['censored']]
    ambiguous = int((minor['total_size'] > classifier.size_threshold / 10).sum())
    if ambiguous > AMBIGUOUS_FRACTION * n_runs:
        raise InconclusiveError(
            f"{ambiguous} minor outbreaks within a decade of the size threshold; "
            f"the outbreak size distribution is not bimodal"
        )
    classified = frame[~frame['censored']]
    estimate, std_error = _sample_stats(classified['major'].astype(float).to_numpy())
    logger.info(f"Outbreak probability {float(estimate):.4f} +/- {float(std_error):.4f}")
    return EnsembleResult(
        estimate=float(estimate), std_error=float(std_error), n_runs=n_runs, replicates=frame,
        censored=censored, extras={'size_threshold': classifier.size_threshold,
                                   'peak_threshold': classifier.peak_threshold},
    )


def time_average(times, states, end_time, t0, t1):
    """Time average over [t0, t1] of a piecewise-constant path (states[k] holds on [times[k], times[k+1]))."""
    upper = np.append(times[1:], end_time)
    overlap = np.clip(np.minimum(upper, t1) - np.maximum(times, t0), 0.0, None)
    return np.tensordot(overlap, states, axes=1) / (t1 - t0)


def _stationary_replica(task):
    model, N, x0, burn_in, horizon, seed, stream = task
    trajectory = simulate_population(model, N, x0, horizon, RngSpec(seed, stream))
    times, states = trajectory.state_path()
    return time_average(times, states[:, 0, :], trajectory.end_time, burn_in, horizon)


def stationary_mean_population(model, N, burn_in, horizon, n_runs, seed, workers=1):
    """
    Time-and-ensemble average of the population over [burn_in, horizon].

    Runs start at floor(N z*); the result is compared with N z* = -N A^{-1} B.

    Returns:
        EnsembleResult: estimate and std_error are per-node vectors
    """
    A = build_A(model)
    abscissa, subcritical = check_subcritical(A)
    if not subcritical:
        raise ModelValidationError("stationary mean requires a subcritical model")
    if burn_in < 10.0 / abs(abscissa):
        raise ModelValidationError(
            f"burn_in must be at least 10/|abscissa| = {10.0 / abs(abscissa):.4g}, got {burn_in}"
        )
    if horizon <= burn_in:
        raise ModelValidationError("horizon must exceed burn_in")
    z_star = equilibrium_population(A, model.B)
    tasks = [(model, N, z_star, burn_in, horizon, seed, k) for k in range(n_runs)]
    averages = np.array(run_replicas(_stationary_replica, tasks, workers))
    estimate, std_error = _sample_stats(averages)
    frame = pd.DataFrame(averages, columns=[f"x_{k + 1}" for k in range(model.n)])
    frame.insert(0, 'stream', range(n_runs))
    logger.info(f"Stationary mean {np.round(estimate, 4).tolist()} vs expected "
                f"{np.round(N * z_star, 4).tolist()}")
    return EnsembleResult(estimate=estimate, std_error=std_error, n_runs=n_runs, replicates=frame,
                          extras={'expected': N * z_star})


def _lln_replica(task):
    model, N, x0, T, seed, stream, level = task
    A = build_A(model)
    trajectory = simulate_population(model, N, x0, T, RngSpec(seed, stream).generator(level))
    times, states = trajectory.state_path()
    x = states[:, 0, :] / N
    # Each state is checked at both ends of its holding interval, plus a uniform grid
    grid = np.linspace(0.0, T, 201)
    holding = np.searchsorted(times, grid, side='right') - 1
    eval_times = np.concatenate([times, times[1:], [T], grid])
    eval_states = np.concatenate([x, x[:-1], x[-1:], x[holding]])
    flow = linear_flow(A, model.B, x0, eval_times)
    return float(np.max(np.abs(eval_states - flow)))


def lln_deviation(model, Ns, T, n_runs, seed, x0, workers=1):
    """
    Sup-norm deviation of X^N / N from the deterministic linear flow over [0, T].

    Returns:
        ExperimentReport: summary rows per N with the median, 90th
            percentile and maximum of the sup deviation; checks record
            whether the 90th percentile decreases in N
    """
    Ns = list(Ns)
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ModelValidationError("Ns must be strictly increasing")
    if T < 0:
        raise ModelValidationError(f"T must be nonnegative, got {T}")
    x0 = np.asarray(x0, dtype=float)
    rows, replicate_rows = [], []
    for level, N in enumerate(Ns):
        if T == 0:
            deviation = float(np.max(np.abs(np.floor(N * x0 + 1e-9) / N - x0)))
            deviations = [deviation] * n_runs
        else:
            tasks = [(model, N, x0, T, seed, k, level) for k in range(n_runs)]
            deviations = run_replicas(_lln_replica, tasks, workers)
        values = np.asarray(deviations)
        rows.append({'N': N, 'median': float(np.median(values)), 'q90': float(np.quantile(values, 0.9)),
                     'max': float(values.max()), 'n_runs': n_runs})
        replicate_rows.extend({'N': N, 'stream': k, 'deviation': v} for k, v in enumerate(deviations))
        logger.info(f"LLN deviation at N={N}: q90={rows[-1]['q90']:.5f}")
    summary = pd.DataFrame(rows)
    q90 = summary['q90'].to_numpy()
    checks = {'q90_decreasing': bool(np.all(np.diff(q90) < 0))}
    return ExperimentReport(summary, pd.DataFrame(replicate_rows), checks)


def _offspring_block(task):
    model, node, seed, streams = task
    return [simulate_ancestor(model, node, RngSpec(seed, k)) for k in streams]


def offspring_empirical(model, source_node, n_runs, seed, s_points=None, workers=1):
    """
    Offspring of single ancestors in source_node, compared with C and G.

    Args:
        model (NetworkModel): The model
        source_node (int): 0-based node of the ancestor
        n_runs (int): Number of ancestors (at least 10^4)
        seed (int): Run seed
        s_points (list, optional): Points s at which to compare the empirical
            PGF E[prod s_j^W_j] with G(s); defaults to s = 0.5 and s = 0.9

    Returns:
        EnsembleResult: estimate is the empirical mean offspring row
    """
    if n_runs < 10 ** 4:
        raise ModelValidationError(f"n_runs must be at least 10^4, got {n_runs}")
    if s_points is None:
        s_points = [np.full(model.n, 0.5), np.full(model.n, 0.9)]
    blocks = np.array_split(np.arange(n_runs), max(1, workers) * 4)
    tasks = [(model, source_node, seed, block.tolist()) for block in blocks if block.size]
    counts = np.array([row for block in run_replicas(_offspring_block, tasks, workers) for row in block])
    estimate, std_error = _sample_stats(counts)
    expected = offspring_matrix(model)[source_node]

    pgf = []
    for s in s_points:
        s = np.asarray(s, dtype=float)
        samples = np.prod(s ** counts, axis=1)
        mean, error = _sample_stats(samples)
        pgf.append({'s': s.tolist(), 'empirical': float(mean), 'std_error': float(error),
                    'analytic': float(eval_G(model, s)[source_node])})
    frame = pd.DataFrame(counts, columns=[f"W_{k + 1}" for k in range(model.n)])
    frame.insert(0, 'stream', range(n_runs))
    return EnsembleResult(estimate=estimate, std_error=std_error, n_runs=n_runs, replicates=frame,
                          extras={'expected': expected, 'pgf': pgf})


def _endemic_replica(task):
    model, scaling, classifier, t_cap, seed, stream = task
    trajectory = simulate_sir(model, scaling, t_end=t_cap, rng=RngSpec(seed, stream))
    censored = trajectory.end_reason != 'extinct'
    return {
        'N': scaling.N,
        'stream': stream,
        'tau': trajectory.end_time if censored else trajectory.extinction_time,
        'total_size': trajectory.total_size,
        'max_infectives': trajectory.max_infectives,
        'censored': censored,
        'major': bool(classifier.is_major(trajectory.total_size, trajectory.max_infectives)),
    }


def _slope(Ns, values):
    return float(np.polyfit(np.asarray(Ns, dtype=float), np.asarray(values, dtype=float), 1)[0])


def endemic_scaling(model, Ns, n_runs, seed, t_cap=None, report=None, I0=None, min_size=100,
                    fraction=0.05, min_majors=30, n_boot=1000, workers=1):
    """
    Persistence of major outbreaks as N grows.

    For each N, replicas start at floor(N z*) with I0 infectives and run until
    extinction or t_cap (censored times count as lower bounds). Among major
    outbreaks, the medians of log tau and log Z should grow with N, and the
    median peak fraction max_I / (N ||z*||_1) should stay above half the
    equilibrium infective fraction.

    Returns:
        ExperimentReport: inconclusive is set when the model has no stable
            endemic equilibrium or some N has fewer than min_majors majors
    """
    Ns = list(Ns)
    if len(Ns) < 2 or any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ModelValidationError("Ns must hold at least two strictly increasing values")
    A = build_A(model)
    z_star = equilibrium_population(A, model.B)
    if report is None:
        report = find_endemic_equilibrium(model, z_star)
    if report.classification != 'stable-endemic':
        logger.warning(f"No stable endemic equilibrium ({report.classification}); scaling is inconclusive")
        return ExperimentReport(pd.DataFrame(), pd.DataFrame(), {},
                                inconclusive=f"equilibrium is {report.classification}")
    if t_cap is None:
        rates = np.concatenate([model.d, model.gamma, model.beta, model.theta[model.theta > 0]])
        t_cap = 1e4 / float(rates[rates > 0].min())
    I0 = np.eye(1, model.n, 0, dtype=np.int64)[0] if I0 is None else np.asarray(I0)
    z_total = float(z_star.sum())
    equilibrium_fraction = float(report.point.i.sum() / z_total)

    rows, frames = [], []
    inconclusive = None
    for level, N in enumerate(Ns):
        scaling = ScalingConfig(N, z_star, I0)
        classifier = OutbreakClassifier(N=N, z_total=z_total, min_size=min_size, fraction=fraction)
        tasks = [(model, scaling, classifier, t_cap, seed, level * n_runs + k) for k in range(n_runs)]
        frame = pd.DataFrame(run_replicas(_endemic_replica, tasks, workers))
        frames.append(frame)
        majors = frame[frame['major']]
        row = {
            'N': N,
            'n_major': len(majors),
            'censored': int(majors['censored'].sum()),
            'median_log_tau': float(np.median(np.log(majors['tau']))) if len(majors) else float('nan'),
            'median_log_size': float(np.median(np.log(majors['total_size']))) if len(majors) else float('nan'),
            'median_peak_fraction': float(np.median(majors['max_infectives'] / (N * z_total)))
            if len(majors) else float('nan'),
        }
        row['median_exact'] = bool(row['censored'] < 0.5 * max(len(majors), 1))
        rows.append(row)
        logger.info(f"N={N}: {len(majors)} majors, median log tau {row['median_log_tau']:.3f}")
        if len(majors) < min_majors and inconclusive is None:
            inconclusive = f"only {len(majors)} major outbreaks at N={N} (need {min_majors})"

    summary = pd.DataFrame(rows)
    replicates = pd.concat(frames, ignore_index=True)
    if inconclusive:
        logger.warning(f"Scaling experiment inconclusive: {inconclusive}")
        return ExperimentReport(summary, replicates, {}, inconclusive=inconclusive)

    boot_rng = RngSpec(seed).generator(BOOTSTRAP_KEY)
    boot = {'tau': [], 'size': []}
    groups = [replicates[(replicates['N'] == N) & replicates['major']] for N in Ns]
    for _ in range(n_boot):
        log_tau, log_size = [], []
        for group in groups:
            pick = boot_rng.integers(0, len(group), len(group))
            log_tau.append(np.median(np.log(group['tau'].to_numpy()[pick])))
            log_size.append(np.median(np.log(group['total_size'].to_numpy()[pick])))
        boot['tau'].append(_slope(Ns, log_tau))
        boot['size'].append(_slope(Ns, log_size))

    checks = {'equilibrium_infective_fraction': equilibrium_fraction}
    for key, column in (('tau', 'median_log_tau'), ('size', 'median_log_size')):
        low, high = np.quantile(boot[key], [0.025, 0.975])
        checks[f"slope_{key}"] = _slope(Ns, summary[column])
        checks[f"ci_{key}"] = [float(low), float(high)]
    checks['peak_fraction_ok'] = bool(np.all(summary['median_peak_fraction'] >= 0.5 * equilibrium_fraction))
    checks['passed'] = bool(checks['ci_tau'][0] > 0 and checks['ci_size'][0] > 0
                            and checks['peak_fraction_ok'])
    return ExperimentReport(summary, replicates, checks)


def _growth_replica(task):
    model, I0, cap, seed, stream = task
    trajectory = simulate_branching(model, I0, cap, RngSpec(seed, stream))
    if trajectory.end_reason != 'cap':
        return {'stream': stream, 'survived': False, 'slope': float('nan')}
    totals = trajectory.infective_totals()
    times = np.concatenate([[0.0], trajectory.times])
    window = (totals >= cap / 20) & (totals <= cap)
    if window.sum() < 3:
        return {'stream': stream, 'survived': True, 'slope': float('nan')}
    slope = float(np.polyfit(times[window], np.log(totals[window]), 1)[0])
    return {'stream': stream, 'survived': True, 'slope': slope}


def growth_rate_empirical(model, I0, n_runs, seed, cap=2000, workers=1):
    """
    Early exponential growth rate of surviving branching runs, compared with lambda1.

    Each surviving run is fitted by least squares of log ||I(t)||_1 over the
    window where ||I||_1 lies in [cap / 20, cap].

    Returns:
        EnsembleResult: estimate is the median fitted rate
    """
    tasks = [(model, np.asarray(I0, dtype=np.int64), cap, seed, k) for k in range(n_runs)]
    frame = pd.DataFrame(run_replicas(_growth_replica, tasks, workers))
    slopes = frame['slope'].dropna().to_numpy()
    lambda1 = growth_rate_lambda1(model)
    if slopes.size < 10:
        return EnsembleResult(float('nan'), float('nan'), n_runs, frame, inconclusive=n_runs - slopes.size,
                              extras={'lambda1': lambda1, 'n_survived': int(frame['survived'].sum())})
    _, std_error = _sample_stats(slopes)
    estimate = float(np.median(slopes))
    logger.info(f"Empirical growth rate {estimate:.4f} vs lambda1 {lambda1:.4f}")
    return EnsembleResult(estimate, float(std_error), n_runs, frame, inconclusive=n_runs - slopes.size,
                          extras={'lambda1': lambda1, 'n_survived': int(frame['survived'].sum())})


def _exit_replica(task):
    model, N, eps, t_cap, z_star, seed, stream = task
    result = exit_time_ball(model, N, eps, t_cap, RngSpec(seed, stream), z_star=z_star)
    return {'N': N, 'stream': stream, 'time': result.value, 'censored': result.censored}


def exit_cost_consistency(model, Ns, eps, n_runs, seed, t_cap=1e4, T=20.0, m=64, restarts=2, workers=1):
    """
    Compare exit-time medians across N with the minimum-action cost.

    Returns:
        ExperimentReport: per-N median exit times next to exp(N * cost);
            checks record whether both increase with N
    """
    Ns = list(Ns)
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ModelValidationError("Ns must be strictly increasing")
    z_star = equilibrium_population(build_A(model), model.B)
    path = population_exit_cost(model, eps, T=T, m=m, restarts=restarts, rng=seed)
    rows, frames = [], []
    for level, N in enumerate(Ns):
        tasks = [(model, N, eps, t_cap, z_star, seed, level * n_runs + k) for k in range(n_runs)]
        frame = pd.DataFrame(run_replicas(_exit_replica, tasks, workers))
        frames.append(frame)
        rows.append({
            'N': N,
            'median_exit_time': float(np.median(frame['time'])),
            'censored': int(frame['censored'].sum()),
            'exp_cost': float(np.exp(N * path.action)),
        })
    summary = pd.DataFrame(rows)
    checks = {
        'exit_cost': path.action,
        'median_increasing': bool(np.all(np.diff(summary['median_exit_time']) > 0)),
        'exp_cost_increasing': bool(np.all(np.diff(summary['exp_cost']) > 0)),
    }
    checks['consistent'] = checks['median_increasing'] and checks['exp_cost_increasing']
    return ExperimentReport(summary, pd.concat(frames, ignore_index=True), checks)
