"""
Stochastic Simulation Module

Exact event-driven simulation of the population process, the full SIR
process and the approximating multitype branching process, plus the coupled
construction driving the SIR and branching processes with shared Poisson
streams, and the exit time of the population from a ball around z*.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from epinet.models.network import warn_if_disconnected
from epinet.utils.errors import ModelValidationError
from epinet.utils.rng import RngSpec, make_generator

logger = logging.getLogger('epinet.simulation.ssa')

DEFAULT_EVENT_CAP = 10 ** 9

KIND_NAMES = (
    'inflow', 'death', 'transfer',
    'death_s', 'death_i', 'death_r',
    'transfer_s', 'transfer_i', 'transfer_r',
    'infection', 'recovery',
)
KIND_CODES = {name: code for code, name in enumerate(KIND_NAMES)}

# Per process: compartment names and, per event kind in propensity order,
# (compartment decremented, compartment incremented). Transfers decrement at
# the source node and increment at the destination.
PROCESS_LAYOUTS = {
    'population': (('x',), {
        'inflow': (None, 0),
        'death': (0, None),
        'transfer': (0, 0),
    }),
    'sir': (('s', 'i', 'r'), {
        'inflow': (None, 0),
        'death_s': (0, None),
        'death_i': (1, None),
        'death_r': (2, None),
        'transfer_s': (0, 0),
        'transfer_i': (1, 1),
        'transfer_r': (2, 2),
        'infection': (0, 1),
        'recovery': (1, 2),
    }),
    'branching': (('i',), {
        'infection': (None, 0),
        'death_i': (0, None),
        'recovery': (0, None),
        'transfer_i': (0, 0),
    }),
}

INFECTIVE_ROW = {'sir': 1, 'branching': 0}


def _apply(state, effect, node, dest):
    minus, plus = effect
    if minus is not None:
        state[minus, node] -= 1
    if plus is not None:
        state[plus, dest if dest >= 0 else node] += 1


def _pick(cumulative, u):
    """Index of the interval of a cumulative-rate vector containing u, skipping zero-rate entries."""
    idx = int(np.searchsorted(cumulative, u, side='right'))
    idx = min(idx, len(cumulative) - 1)
    while idx > 0 and cumulative[idx] == cumulative[idx - 1]:
        idx -= 1
    return idx


@dataclass
class CensoredTime:
    """A waiting time that may be right-censored."""

    value: float
    censored: bool


@dataclass
class EventTrajectory:
    """Compact event log of one simulated path with its summary statistics.

    Node indices are 0-based; node_to is -1 for events that do not move an
    individual between nodes.
    """

    process: str
    initial: np.ndarray
    t_end: float
    times: np.ndarray
    kinds: np.ndarray
    node_from: np.ndarray
    node_to: np.ndarray
    end_time: float
    end_reason: str
    final: np.ndarray
    extinction_time: float = None
    total_size: int = 0
    max_infectives: int = 0
    grid_times: np.ndarray = None
    grid_states: np.ndarray = None

    @property
    def n_events(self):
        return len(self.times)

    @property
    def compartments(self):
        return PROCESS_LAYOUTS[self.process][0]

    def kind_names(self):
        return [KIND_NAMES[code] for code in self.kinds]

    def replay(self):
        """
        Rebuild the full state after every event from the event log.

        Yields:
            tuple: (time, state) with state a (compartments, n) integer array;
                the first item is the initial state at time 0
        """
        effects = PROCESS_LAYOUTS[self.process][1]
        state = self.initial.copy()
        yield 0.0, state.copy()
        for t, code, node, dest in zip(self.times, self.kinds, self.node_from, self.node_to):
            _apply(state, effects[KIND_NAMES[code]], int(node), int(dest))
            yield float(t), state.copy()

    def state_path(self):
        """
        Vectorised replay of the whole path.

        Returns:
            tuple: (times, states) with times starting at 0 and states of
                shape (events + 1, compartments, n)
        """
        effects = PROCESS_LAYOUTS[self.process][1]
        deltas = np.zeros((self.n_events + 1,) + self.initial.shape, dtype=np.int64)
        deltas[0] = self.initial
        rows = np.arange(1, self.n_events + 1)
        for name, (minus, plus) in effects.items():
            mask = self.kinds == KIND_CODES[name]
            if not np.any(mask):
                continue
            sources = self.node_from[mask]
            if minus is not None:
                np.add.at(deltas, (rows[mask], minus, sources), -1)
            if plus is not None:
                targets = np.where(self.node_to[mask] >= 0, self.node_to[mask], sources)
                np.add.at(deltas, (rows[mask], plus, targets), 1)
        return np.concatenate([[0.0], self.times]), np.cumsum(deltas, axis=0)

    def infective_totals(self):
        """Total infective count after each event (initial value first)."""
        row = INFECTIVE_ROW[self.process]
        totals = [int(self.initial[row].sum())]
        effects = PROCESS_LAYOUTS[self.process][1]
        current = totals[0]
        for code in self.kinds:
            minus, plus = effects[KIND_NAMES[code]]
            if minus == row and plus != row:
                current -= 1
            elif plus == row and minus != row:
                current += 1
            totals.append(current)
        return np.array(totals, dtype=np.int64)

    def to_frame(self):
        """Event log as a DataFrame with columns time, event_kind, node_from, node_to."""
        return pd.DataFrame({
            'time': self.times,
            'event_kind': self.kind_names(),
            'node_from': self.node_from,
            'node_to': self.node_to,
        }, columns=['time', 'event_kind', 'node_from', 'node_to'])

    def stats(self):
        """Summary statistics as a JSON-ready dictionary."""
        return {
            'process': self.process,
            'n_events': self.n_events,
            'end_time': self.end_time,
            'end_reason': self.end_reason,
            'extinction_time': self.extinction_time,
            'total_size': int(self.total_size),
            'max_infectives': int(self.max_infectives),
            'final_state': {name: self.final[k].tolist() for k, name in enumerate(self.compartments)},
        }


@dataclass(frozen=True)
class OutbreakClassifier:
    """Major-outbreak rule for finite-N runs.

    A run is major when its total size exceeds max(min_size, f N ||z*||_1)
    or its peak infective count reaches f N ||z*||_1.
    """

    N: float
    z_total: float
    min_size: int = 100
    fraction: float = 0.05

    @property
    def size_threshold(self):
        return max(self.min_size, self.fraction * self.N * self.z_total)

    @property
    def peak_threshold(self):
        return self.fraction * self.N * self.z_total

    def is_major(self, total_size, max_infectives):
        return total_size > self.size_threshold or max_infectives >= self.peak_threshold

    @classmethod
    def for_model(cls, model, scaling, min_size=100, fraction=0.05):
        """Classifier using ||z*||_1, or ||x0||_1 when the population is not subcritical."""
        from epinet.analysis.spectral import build_A, check_subcritical, equilibrium_population
        A = build_A(model)
        _, subcritical = check_subcritical(A)
        if subcritical and np.any(model.B > 0):
            z_total = float(equilibrium_population(A, model.B).sum())
        else:
            z_total = float(scaling.x0.sum())
        return cls(N=scaling.N, z_total=z_total, min_size=min_size, fraction=fraction)


class DirectMethodSimulator:
    """Exact direct-method simulation with per-node propensity columns.

    Subclasses set `process` and implement `_column`, the vector of class
    propensities of one node. After an event only the touched nodes are
    recomputed.
    """

    process = None

    def __init__(self, model, rng, event_cap=DEFAULT_EVENT_CAP, grid=None):
        if event_cap < 1:
            raise ModelValidationError(f"event_cap must be positive, got {event_cap}")
        self.model = model
        self.rng = make_generator(rng)
        self.event_cap = int(event_cap)
        self.grid = None if grid is None else np.sort(np.asarray(grid, dtype=float))
        _, effects = PROCESS_LAYOUTS[self.process]
        self.kinds = tuple(effects)
        self.effects = [effects[k] for k in self.kinds]
        self.codes = [KIND_CODES[k] for k in self.kinds]
        self.is_transfer = [k.startswith('transfer') for k in self.kinds]
        self.theta_cdf = np.cumsum(model.theta, axis=1)

    def _column(self, state, node):
        raise NotImplementedError

    def _start(self, state):
        """Reset statistics; return an end reason to stop before the first event."""
        return None

    def _after_event(self, kind, node, dest, t, state):
        """Update statistics; return an end reason to stop, or None."""
        return None

    def _trajectory(self, initial, state, t_end, end_time, reason, log, grid_states):
        times, codes, froms, tos = log
        return EventTrajectory(
            process=self.process,
            initial=initial,
            t_end=t_end,
            times=np.array(times, dtype=float),
            kinds=np.array(codes, dtype=np.int64),
            node_from=np.array(froms, dtype=np.int64),
            node_to=np.array(tos, dtype=np.int64),
            end_time=end_time,
            end_reason=reason,
            final=state,
            grid_times=None if self.grid is None else self.grid[:len(grid_states)],
            grid_states=None if self.grid is None else np.array(grid_states, dtype=np.int64),
        )

    def run(self, state, t_end):
        """
        Simulate from `state` (compartments x n counts) until t_end or an end condition.

        Returns:
            EventTrajectory
        """
        state = np.array(state, dtype=np.int64)
        initial = state.copy()
        n = self.model.n
        rates = np.empty((len(self.kinds), n))
        for node in range(n):
            rates[:, node] = self._column(state, node)
        node_totals = rates.sum(axis=0)

        times, codes, froms, tos = [], [], [], []
        grid_states = []
        grid_index = 0
        t = 0.0
        reason = self._start(state)
        rng = self.rng

        while reason is None:
            cumulative = np.cumsum(node_totals)
            total = cumulative[-1]
            if total <= 0:
                # Absorbing state
                reason = 'horizon'
                break
            dt = rng.standard_exponential() / total
            if t + dt > t_end:
                reason = 'horizon'
                break
            if len(times) >= self.event_cap:
                reason = 'cap'
                break
            if self.grid is not None:
                while grid_index < len(self.grid) and self.grid[grid_index] < t + dt:
                    grid_states.append(state.copy())
                    grid_index += 1
            t += dt

            node = _pick(cumulative, rng.random() * total)
            kind = _pick(np.cumsum(rates[:, node]), rng.random() * node_totals[node])
            dest = -1
            if self.is_transfer[kind]:
                row = self.theta_cdf[node]
                dest = _pick(row, rng.random() * row[-1])
            _apply(state, self.effects[kind], node, dest)

            times.append(t)
            codes.append(self.codes[kind])
            froms.append(node)
            tos.append(dest)

            rates[:, node] = self._column(state, node)
            node_totals[node] = rates[:, node].sum()
            if dest >= 0:
                rates[:, dest] = self._column(state, dest)
                node_totals[dest] = rates[:, dest].sum()
            reason = self._after_event(kind, node, dest, t, state)

        end_time = t_end if reason == 'horizon' else t
        if self.grid is not None:
            while grid_index < len(self.grid) and self.grid[grid_index] <= end_time:
                grid_states.append(state.copy())
                grid_index += 1
        if reason == 'cap':
            logger.warning(f"{self.process} run censored at the event cap ({self.event_cap}) at t={t:.6g}")
        return self._trajectory(initial, state, t_end, end_time, reason, (times, codes, froms, tos), grid_states)


class PopulationSimulator(DirectMethodSimulator):
    """Inflow N B_j + b_j x_j, death d_j x_j and transfer theta_jk x_j."""

    process = 'population'

    def __init__(self, model, N, rng, event_cap=DEFAULT_EVENT_CAP, grid=None):
        super().__init__(model, rng, event_cap, grid)
        self.inflow = N * model.B
        self.theta_out = model.theta_out

    def _column(self, state, node):
        x = state[0, node]
        m = self.model
        return (self.inflow[node] + m.b[node] * x, m.d[node] * x, self.theta_out[node] * x)


class InfectiveStatsMixin:
    """Tracks total infectives, total size and extinction for epidemic processes."""

    infective_row = 0
    infection_kind = None

    def _start(self, state):
        self.infectives = int(state[self.infective_row].sum())
        self.max_infectives = self.infectives
        self.total_size = 0
        self.extinction_time = None
        if self.infectives == 0:
            self.extinction_time = 0.0
            return 'extinct'
        return None

    def _count(self, kind):
        minus, plus = self.effects[kind]
        row = self.infective_row
        if plus == row and minus != row:
            self.infectives += 1
            if self.kinds[kind] == 'infection':
                self.total_size += 1
            self.max_infectives = max(self.max_infectives, self.infectives)
        elif minus == row and plus != row:
            self.infectives -= 1

    def _trajectory(self, *args):
        trajectory = super()._trajectory(*args)
        trajectory.extinction_time = self.extinction_time
        trajectory.total_size = self.total_size
        trajectory.max_infectives = self.max_infectives
        return trajectory


class SIRSimulator(InfectiveStatsMixin, DirectMethodSimulator):
    """The nine transition classes of the open SIR process."""

    process = 'sir'
    infective_row = 1

    def __init__(self, model, N, rng, event_cap=DEFAULT_EVENT_CAP, grid=None,
                 classifier=None, stop_on_major=False):
        super().__init__(model, rng, event_cap, grid)
        if stop_on_major and classifier is None:
            raise ModelValidationError("stop_on_major requires a classifier")
        self.inflow = N * model.B
        self.theta_out = model.theta_out
        self.classifier = classifier
        self.stop_on_major = stop_on_major

    def _column(self, state, node):
        s, i, r = state[0, node], state[1, node], state[2, node]
        x = s + i + r
        m = self.model
        d = m.d[node]
        out = self.theta_out[node]
        # beta i s / x is 0/0 on an empty node
        infection = m.beta[node] * i * s / x if x > 0 else 0.0
        return (
            self.inflow[node] + m.b[node] * x,
            d * s, d * i, d * r,
            out * s, out * i, out * r,
            infection,
            m.gamma[node] * i,
        )

    def _after_event(self, kind, node, dest, t, state):
        self._count(kind)
        if self.infectives == 0:
            self.extinction_time = t
            return 'extinct'
        if self.stop_on_major and self.classifier.is_major(self.total_size, self.max_infectives):
            return 'major'
        return None


class BranchingSimulator(InfectiveStatsMixin, DirectMethodSimulator):
    """Infectives give birth at rate beta_j, die at d_j + gamma_j and move at theta_jk."""

    process = 'branching'
    infective_row = 0

    def __init__(self, model, cap, rng, event_cap=DEFAULT_EVENT_CAP, grid=None):
        super().__init__(model, rng, event_cap, grid)
        if cap < 1:
            raise ModelValidationError(f"cap must be positive, got {cap}")
        self.cap = cap
        self.theta_out = model.theta_out

    def _column(self, state, node):
        i = state[0, node]
        m = self.model
        return (m.beta[node] * i, m.d[node] * i, m.gamma[node] * i, self.theta_out[node] * i)

    def _start(self, state):
        reason = super()._start(state)
        if reason is None and self.infectives >= self.cap:
            return 'cap'
        return reason

    def _after_event(self, kind, node, dest, t, state):
        self._count(kind)
        if self.infectives == 0:
            self.extinction_time = t
            return 'extinct'
        if self.infectives >= self.cap:
            return 'cap'
        return None


class BallExitSimulator(PopulationSimulator):
    """Population simulation stopped when X/N leaves the sup-norm ball B(z*, eps)."""

    def __init__(self, model, N, z_star, eps, rng, event_cap=DEFAULT_EVENT_CAP):
        super().__init__(model, N, rng, event_cap)
        self.N = N
        self.z_star = z_star
        self.eps = eps

    def _outside(self, state, node):
        return abs(state[0, node] / self.N - self.z_star[node]) >= self.eps

    def _start(self, state):
        if np.max(np.abs(state[0] / self.N - self.z_star)) >= self.eps:
            return 'exit'
        return None

    def _after_event(self, kind, node, dest, t, state):
        if self._outside(state, node) or (dest >= 0 and self._outside(state, dest)):
            return 'exit'
        return None


def _check_horizon(t_end, allow_infinite):
    if not (t_end > 0):
        raise ModelValidationError(f"t_end must be positive, got {t_end}")
    if not allow_infinite and not math.isfinite(t_end):
        raise ModelValidationError("t_end must be finite")


def simulate_population(model, N, x0, t_end, rng, event_cap=DEFAULT_EVENT_CAP, grid=None):
    """
    Exact sample path of the population process from floor(N x0).

    Args:
        model (NetworkModel): The model
        N (float): Scaling parameter
        x0 (array): Scaled initial population
        t_end (float): Horizon
        rng: RngSpec, Generator or integer seed
        event_cap (int): Maximum number of events (end_reason 'cap' beyond)
        grid (array, optional): Times at which to store state snapshots

    Returns:
        EventTrajectory
    """
    _check_horizon(t_end, allow_infinite=False)
    if N <= 0:
        raise ModelValidationError(f"N must be positive, got {N}")
    warn_if_disconnected(model)
    x = np.floor(N * np.asarray(x0, dtype=float) + 1e-9).astype(np.int64)
    if x.shape != (model.n,) or np.any(x < 0):
        raise ModelValidationError("floor(N*x0) must be a nonnegative vector of length n")
    simulator = PopulationSimulator(model, N, rng, event_cap, grid)
    trajectory = simulator.run(x[None, :], t_end)
    logger.debug(f"Population run: {trajectory.n_events} events, end={trajectory.end_reason}")
    return trajectory


def simulate_sir(model, scaling, t_end=math.inf, rng=0, event_cap=DEFAULT_EVENT_CAP,
                 classifier=None, stop_on_major=False, grid=None):
    """
    Exact sample path of the open SIR process.

    Runs until the infectives die out (end_reason 'extinct'), t_end
    ('horizon'), the event cap ('cap') or, with stop_on_major, until the
    classifier declares a major outbreak ('major').

    Returns:
        EventTrajectory
    """
    _check_horizon(t_end, allow_infinite=True)
    warn_if_disconnected(model)
    if scaling.n != model.n:
        raise ModelValidationError("scaling and model dimensions differ")
    initial = scaling.initial_sir()
    state = np.vstack([initial.s, initial.i, initial.r])
    simulator = SIRSimulator(model, scaling.N, rng, event_cap, grid, classifier, stop_on_major)
    return simulator.run(state, t_end)


def simulate_branching(model, I0, cap, rng, t_end=math.inf, event_cap=DEFAULT_EVENT_CAP, grid=None):
    """
    Exact sample path of the approximating branching process.

    Stops at extinction, when the infective count reaches cap (end_reason
    'cap', counted as survival) or at t_end.

    Returns:
        EventTrajectory
    """
    _check_horizon(t_end, allow_infinite=True)
    I0 = np.asarray(I0, dtype=np.int64)
    if I0.shape != (model.n,) or np.any(I0 < 0):
        raise ModelValidationError("I0 must be a nonnegative vector of length n")
    if not np.any(I0):
        raise ModelValidationError("I0 must contain at least one infective")
    simulator = BranchingSimulator(model, cap, rng, event_cap, grid)
    return simulator.run(I0[None, :], t_end)


def exit_time_ball(model, N, eps, t_cap, rng, z_star=None, event_cap=DEFAULT_EVENT_CAP):
    """
    First time the scaled population leaves the sup-norm ball of radius eps around z*.

    The run starts at floor(N z*).

    Returns:
        CensoredTime: censored at t_cap (or at the event cap)

    Raises:
        ModelValidationError: If eps is not in (0, ||z*||_inf)
    """
    from epinet.analysis.spectral import build_A, equilibrium_population
    if z_star is None:
        z_star = equilibrium_population(build_A(model), model.B)
    if not (0 < eps < np.max(z_star)):
        raise ModelValidationError(f"eps must lie in (0, {np.max(z_star):.6g}), got {eps}")
    _check_horizon(t_cap, allow_infinite=False)
    x = np.floor(N * z_star + 1e-9).astype(np.int64)
    simulator = BallExitSimulator(model, N, z_star, eps, rng, event_cap)
    trajectory = simulator.run(x[None, :], t_cap)
    if trajectory.end_reason == 'exit':
        return CensoredTime(trajectory.end_time, False)
    return CensoredTime(trajectory.end_time, True)


def simulate_ancestor(model, node, rng):
    """
    Offspring of one infective followed through the network until removal.

    In each stay of length T in node j the infective has Poisson(beta_j T)
    offspring there.

    Returns:
        numpy.ndarray: Offspring counts per node
    """
    rng = make_generator(rng)
    sigma = model.sigma
    if not 0 <= node < model.n:
        raise ModelValidationError(f"node must be in [0, {model.n}), got {node}")
    jump_cdf = np.column_stack([model.omega, model.theta]).cumsum(axis=1)
    offspring = np.zeros(model.n, dtype=np.int64)
    current = node
    while True:
        if sigma[current] <= 0:
            raise ModelValidationError(f"infective can never leave node {current}")
        stay = rng.standard_exponential() / sigma[current]
        offspring[current] += rng.poisson(model.beta[current] * stay)
        choice = _pick(jump_cdf[current], rng.random() * jump_cdf[current, -1])
        if choice == 0:
            return offspring
        current = choice - 1


# Channels of the coupled construction, one unit-rate Poisson stream each.
CHANNEL_KINDS = (
    'inflow', 'death_s', 'death_i', 'death_r', 'contact', 'recovery',
    'transfer_s', 'transfer_i', 'transfer_r',
)
BRANCHING_CHANNELS = frozenset({'death_i', 'contact', 'recovery', 'transfer_i'})
CHANNEL_EFFECTS = {
    'inflow': (None, 0), 'death_s': (0, None), 'death_i': (1, None), 'death_r': (2, None),
    'recovery': (1, 2), 'transfer_s': (0, 0), 'transfer_i': (1, 1), 'transfer_r': (2, 2),
}


@dataclass
class _CoupledProcess:
    """Clock state of one process in the modified next-reaction method."""

    name: str
    state: np.ndarray
    rates: np.ndarray
    internal: np.ndarray
    next_firing: np.ndarray
    streams: dict = field(default_factory=dict)
    log: tuple = field(default_factory=lambda: ([], [], [], []))
    alive: bool = True
    infectives: int = 0
    max_infectives: int = 0
    total_size: int = 0
    extinction_time: float = None
    end_reason: str = None


class CoupledSimulator:
    """SIR and branching processes driven by the same Poisson streams.

    Every channel (kind, node, destination) owns a unit-rate Poisson stream
    and each node owns a stream of uniform marks. Both processes run the
    modified next-reaction method on the same channel streams with the same
    time steps; a contact at node j infects in the SIR process only when its
    mark is at most S_j / X_j, while it always gives birth in the branching
    process. Before the first rejected contact both infective processes agree
    event for event.
    """

    def __init__(self, model, N, rng_spec, cap=10 ** 6, event_cap=DEFAULT_EVENT_CAP):
        self.model = model
        self.N = N
        self.spec = rng_spec
        self.cap = cap
        self.event_cap = event_cap
        n = model.n
        channels = []
        for kind in CHANNEL_KINDS:
            for j in range(n):
                if kind.startswith('transfer'):
                    channels.extend((kind, j, k) for k in np.flatnonzero(model.theta[j]).tolist())
                else:
                    channels.append((kind, j, -1))
        self.channels = channels
        self.channel_ids = [
            CHANNEL_KINDS.index(kind) * n * n + j * n + (k if k >= 0 else j)
            for kind, j, k in channels
        ]
        self.by_node = [[] for _ in range(n)]
        for c, (_, j, _) in enumerate(channels):
            self.by_node[j].append(c)
        self.branching_mask = np.array([kind in BRANCHING_CHANNELS for kind, _, _ in channels])
        self.marks = {}

    def _rate(self, process, c):
        kind, j, k = self.channels[c]
        m = self.model
        s, i, r = process.state[:, j]
        if kind == 'inflow':
            return self.N * m.B[j] + m.b[j] * (s + i + r)
        if kind == 'death_s':
            return m.d[j] * s
        if kind == 'death_i':
            return m.d[j] * i
        if kind == 'death_r':
            return m.d[j] * r
        if kind == 'contact':
            return m.beta[j] * i
        if kind == 'recovery':
            return m.gamma[j] * i
        compartment = {'transfer_s': s, 'transfer_i': i, 'transfer_r': r}[kind]
        return m.theta[j, k] * compartment

    def _refresh(self, process, nodes):
        for j in nodes:
            for c in self.by_node[j]:
                if process.name == 'branching' and not self.branching_mask[c]:
                    continue
                rate = self._rate(process, c)
                process.rates[c] = rate
                if rate > 0 and c not in process.streams:
                    stream = self.spec.generator(0, self.channel_ids[c])
                    process.streams[c] = stream
                    process.next_firing[c] = stream.standard_exponential()

    def _mark(self, node):
        if node not in self.marks:
            self.marks[node] = self.spec.generator(1, node)
        return self.marks[node].random()

    def _new_process(self, name, state):
        size = len(self.channels)
        process = _CoupledProcess(
            name=name,
            state=state,
            rates=np.zeros(size),
            internal=np.zeros(size),
            next_firing=np.full(size, np.inf),
        )
        process.infectives = int(state[1].sum())
        process.max_infectives = process.infectives
        self._refresh(process, range(self.model.n))
        return process

    @staticmethod
    def _waiting_time(process):
        if not process.alive:
            return np.inf, -1
        with np.errstate(divide='ignore', invalid='ignore'):
            waits = np.where(process.rates > 0, (process.next_firing - process.internal) / process.rates, np.inf)
        c = int(np.argmin(waits))
        return waits[c], c

    def _fire(self, process, c, t):
        """Apply channel c to a process; returns True for a rejected contact."""
        kind, j, k = self.channels[c]
        process.next_firing[c] += process.streams[c].standard_exponential()
        rejected = False
        if kind == 'contact':
            if process.name == 'sir':
                s, i, r = process.state[:, j]
                if self._mark(j) <= s / (s + i + r):
                    process.state[0, j] -= 1
                    process.state[1, j] += 1
                    event = 'infection'
                else:
                    rejected = True
                    event = None
            else:
                process.state[1, j] += 1
                event = 'infection'
        else:
            _apply(process.state, CHANNEL_EFFECTS[kind], j, k)
            event = kind
        if event is not None:
            times, codes, froms, tos = process.log
            times.append(t)
            codes.append(KIND_CODES[event])
            froms.append(j)
            tos.append(k)
            before = process.infectives
            process.infectives = int(process.state[1].sum())
            if event == 'infection':
                process.total_size += 1
            process.max_infectives = max(process.max_infectives, process.infectives)
            if before > 0 and process.infectives == 0:
                process.extinction_time = t
                process.end_reason = 'extinct'
                process.alive = False
            elif process.name == 'branching' and process.infectives >= self.cap:
                process.end_reason = 'cap'
                process.alive = False
        self._refresh(process, (j,) if k < 0 else (j, k))
        return rejected

    def run(self, initial, horizon):
        """
        Simulate both processes on [0, horizon].

        Returns:
            tuple: (sir EventTrajectory, branching EventTrajectory, divergence time or None)
        """
        sir = self._new_process('sir', initial.copy())
        branching_state = np.zeros_like(initial)
        branching_state[1] = initial[1]
        branching = self._new_process('branching', branching_state)
        processes = (sir, branching)
        for process in processes:
            if process.infectives == 0:
                process.extinction_time = 0.0
                process.end_reason = 'extinct'
                process.alive = False

        t = 0.0
        divergence = None
        events = 0
        while sir.alive or branching.alive:
            waits = [self._waiting_time(p) for p in processes]
            delta = min(w for w, _ in waits)
            if not math.isfinite(delta) or t + delta > horizon:
                break
            if events >= self.event_cap:
                for p in processes:
                    if p.alive:
                        p.end_reason = 'cap'
                        p.alive = False
                break
            t += delta
            for p in processes:
                p.internal += p.rates * delta
            for p, (wait, c) in zip(processes, waits):
                if p.alive and wait == delta:
                    rejected = self._fire(p, c, t)
                    events += 1
                    if rejected and divergence is None:
                        divergence = t
                        logger.debug(f"First rejected contact at t={t:.6g}")

        trajectories = []
        for p in processes:
            if p.end_reason is None:
                p.end_reason = 'horizon'
            end_time = horizon if p.end_reason == 'horizon' else t
            if p.name == 'sir':
                state, start = p.state, initial
            else:
                state, start = p.state[1:2], initial[1:2]
            times, codes, froms, tos = p.log
            trajectories.append(EventTrajectory(
                process=p.name,
                initial=start.copy(),
                t_end=horizon,
                times=np.array(times, dtype=float),
                kinds=np.array(codes, dtype=np.int64),
                node_from=np.array(froms, dtype=np.int64),
                node_to=np.array(tos, dtype=np.int64),
                end_time=end_time,
                end_reason=p.end_reason,
                final=state.copy(),
                extinction_time=p.extinction_time,
                total_size=p.total_size,
                max_infectives=p.max_infectives,
            ))
        return trajectories[0], trajectories[1], divergence


def simulate_coupled(model, scaling, T, rng, cap=10 ** 6, event_cap=DEFAULT_EVENT_CAP):
    """
    Coupled SIR and branching runs sharing every Poisson stream.

    Args:
        model (NetworkModel): The model
        scaling (ScalingConfig): N, x0 and I0
        T (float): Horizon
        rng (RngSpec or int): Stream address; channel and mark sub-streams
            are derived from it
        cap (int): Branching population at which the branching run stops

    Returns:
        tuple: (sir, branching, divergence_time) with divergence_time the
            time of the first rejected contact, or None
    """
    _check_horizon(T, allow_infinite=False)
    spec = rng if isinstance(rng, RngSpec) else RngSpec(int(rng))
    initial = scaling.initial_sir()
    state = np.vstack([initial.s, initial.i, initial.r])
    simulator = CoupledSimulator(model, scaling.N, spec, cap=cap, event_cap=event_cap)
    return simulator.run(state, T)
