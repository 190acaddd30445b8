"""
Network Model Module

This module defines the trade-network model (all demographic and epidemic
rates), the state containers used by the simulators, and loading/serialisation
of experiment config documents.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from epinet.utils.errors import ModelValidationError

logger = logging.getLogger('epinet.models.network')

REQUIRED_FIELDS = ('n', 'B', 'b', 'd', 'theta', 'beta', 'gamma')


def _frozen(values, shape, name):
    try:
        arr = np.array(values, dtype=float)
    except (TypeError, ValueError):
        raise ModelValidationError(f"{name} must be numeric")
    if arr.shape != shape:
        raise ModelValidationError(
            f"dimension mismatch: {name} has shape {arr.shape}, expected {shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ModelValidationError(f"{name} must be finite")
    if np.any(arr < 0):
        raise ModelValidationError(f"negative rate in {name}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Rate parameters of an open multitype SIR model on a directed network.

    Attributes:
        B: Immigration rates per node (individuals / time, before N scaling)
        b: Per-capita birth rates
        d: Per-capita death rates
        theta: Per-capita transfer rates, theta[i, j] for moves i -> j
        beta: Per-capita infection contact rates
        gamma: Per-capita recovery rates
        time_unit: Free-text unit label, carried as metadata only
        node_ids: Optional external node labels
    """

    B: np.ndarray
    b: np.ndarray
    d: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    time_unit: str = 'days'
    node_ids: tuple = None

    def __post_init__(self):
        n = np.size(self.B)
        if n < 1:
            raise ModelValidationError("model needs at least one node")
        for name in ('B', 'b', 'd', 'beta', 'gamma'):
            object.__setattr__(self, name, _frozen(getattr(self, name), (n,), name))
        object.__setattr__(self, 'theta', _frozen(self.theta, (n, n), 'theta'))
        if np.any(np.diag(self.theta) != 0):
            raise ModelValidationError("diagonal transfer: theta[i][i] must be 0")
        if self.node_ids is not None:
            ids = tuple(str(k) for k in self.node_ids)
            if len(ids) != n or len(set(ids)) != n:
                raise ModelValidationError("node_ids must be n unique labels")
            object.__setattr__(self, 'node_ids', ids)
        if not np.any(self.d > 0):
            logger.warning("All death rates are zero; population analytics will be unavailable")

    @property
    def n(self):
        return self.B.shape[0]

    @property
    def theta_out(self):
        """Total per-capita outflow rate of each node."""
        return self.theta.sum(axis=1)

    @property
    def sigma(self):
        """Total per-capita exit rate of an infective: gamma + d + outflow."""
        return self.gamma + self.d + self.theta_out

    @property
    def omega(self):
        """Per-capita removal rate (death or recovery) of an infective."""
        return self.d + self.gamma

    def replace(self, **changes):
        """Return a copy with some fields replaced (validated again)."""
        values = {
            'B': self.B, 'b': self.b, 'd': self.d, 'theta': self.theta,
            'beta': self.beta, 'gamma': self.gamma,
            'time_unit': self.time_unit, 'node_ids': self.node_ids,
        }
        values.update(changes)
        return NetworkModel(**values)

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return (
            self.time_unit == other.time_unit
            and self.node_ids == other.node_ids
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ('B', 'b', 'd', 'theta', 'beta', 'gamma')
            )
        )

    __hash__ = None

    def to_dict(self):
        """Plain-JSON representation of the rate parameters."""
        data = {
            'n': self.n,
            'B': self.B.tolist(),
            'b': self.b.tolist(),
            'd': self.d.tolist(),
            'theta': self.theta.tolist(),
            'beta': self.beta.tolist(),
            'gamma': self.gamma.tolist(),
            'time_unit': self.time_unit,
        }
        if self.node_ids is not None:
            data['node_ids'] = list(self.node_ids)
        return data


def _count_vector(values, n, name):
    arr = np.asarray(values)
    if arr.shape != (n,):
        raise ModelValidationError(f"dimension mismatch: {name} must have length {n}")
    if np.any(arr < 0):
        raise ModelValidationError(f"{name} entries must be nonnegative")
    if not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ModelValidationError(f"{name} entries must be integers")
    return arr.astype(np.int64)


@dataclass
class PopulationState:
    """Individuals per node."""

    x: np.ndarray

    def __post_init__(self):
        self.x = _count_vector(self.x, np.size(self.x), 'x')

    @property
    def total(self):
        return int(self.x.sum())


@dataclass
class SIRState:
    """Susceptible, infective and removed counts per node."""

    s: np.ndarray
    i: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        n = np.size(self.s)
        self.s = _count_vector(self.s, n, 's')
        self.i = _count_vector(self.i, n, 'i')
        self.r = _count_vector(self.r, n, 'r')

    @property
    def x(self):
        """Node populations s + i + r."""
        return self.s + self.i + self.r

    def copy(self):
        return SIRState(self.s.copy(), self.i.copy(), self.r.copy())


@dataclass
class ScalingConfig:
    """Scaling parameter N, scaled initial population x0 and initial infectives I0."""

    N: float
    x0: np.ndarray
    I0: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (isinstance(self.N, (int, float, np.floating, np.integer)) and math.isfinite(self.N)) \
                or self.N <= 0:
            raise ModelValidationError(f"N must be a positive real, got {self.N!r}")
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.ndim != 1 or np.any(self.x0 < 0) or not np.all(np.isfinite(self.x0)):
            raise ModelValidationError("x0 must be a nonnegative finite vector")
        n = self.x0.shape[0]
        if self.I0 is None:
            self.I0 = np.eye(1, n, 0, dtype=np.int64)[0]
        self.I0 = _count_vector(self.I0, n, 'I0')
        if np.any(self.initial_population() - self.I0 < 0):
            raise ModelValidationError("floor(N*x0) - I0 has negative entries")

    @property
    def n(self):
        return self.x0.shape[0]

    def initial_population(self):
        """floor(N * x0) as integer counts."""
        return np.floor(self.N * self.x0 + 1e-9).astype(np.int64)

    def initial_sir(self):
        """Initial SIR state: S = floor(N x0) - I0, I = I0, R = 0."""
        x = self.initial_population()
        return SIRState(x - self.I0, self.I0.copy(), np.zeros_like(x))

    def with_I0(self, I0):
        return ScalingConfig(self.N, self.x0, I0)

    def to_dict(self):
        return {'N': self.N, 'x0': self.x0.tolist(), 'I0': self.I0.tolist()}


def load_model(config_text):
    """
    Parse a config document into a validated model and scaling.

    Args:
        config_text (str or bytes): JSON document with keys n, B, b, d, theta,
            beta, gamma and optional N, x0, I0, time_unit, node_ids

    Returns:
        tuple: (NetworkModel, ScalingConfig)

    Raises:
        ModelValidationError: On parse failure, missing fields, dimension
            mismatch, negative rates or a nonzero theta diagonal
    """
    try:
        doc = json.loads(config_text)
    except (ValueError, TypeError) as e:
        raise ModelValidationError(f"parse failure: {e}")
    if not isinstance(doc, dict):
        raise ModelValidationError("parse failure: top level must be an object")

    for name in REQUIRED_FIELDS:
        if name not in doc:
            raise ModelValidationError(f"missing field {name}")

    n = doc['n']
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ModelValidationError(f"n must be a positive integer, got {n!r}")
    for name in ('B', 'b', 'd', 'beta', 'gamma'):
        if not isinstance(doc[name], list) or len(doc[name]) != n:
            raise ModelValidationError(f"dimension mismatch: {name} must have length {n}")
    theta = doc['theta']
    if not isinstance(theta, list) or len(theta) != n or any(
            not isinstance(row, list) or len(row) != n for row in theta):
        raise ModelValidationError(f"dimension mismatch: theta must be {n}x{n}")

    model = NetworkModel(
        B=doc['B'], b=doc['b'], d=doc['d'], theta=theta,
        beta=doc['beta'], gamma=doc['gamma'],
        time_unit=doc.get('time_unit', 'days'),
        node_ids=doc.get('node_ids'),
    )

    if 'x0' in doc:
        x0 = doc['x0']
        if not isinstance(x0, list) or len(x0) != n:
            raise ModelValidationError(f"dimension mismatch: x0 must have length {n}")
    else:
        # Default to the equilibrium population when it exists
        from epinet.analysis.spectral import build_A, check_subcritical, equilibrium_population
        A = build_A(model)
        _, subcritical = check_subcritical(A)
        if not subcritical:
            raise ModelValidationError("missing field x0")
        x0 = equilibrium_population(A, model.B)
        logger.debug("x0 defaulted to the equilibrium population")

    scaling = ScalingConfig(N=doc.get('N', 1.0), x0=x0, I0=doc.get('I0'))
    logger.info(f"Loaded {n}-node model (time unit: {model.time_unit})")
    return model, scaling


def dump_model(model, scaling=None):
    """Serialise a model (and optional scaling) as a config document."""
    data = model.to_dict()
    if scaling is not None:
        data.update(scaling.to_dict())
    return json.dumps(data, sort_keys=True, indent=2)


def transfer_graph(model):
    """Directed graph with an edge i -> j wherever theta[i, j] > 0."""
    graph = nx.DiGraph()
    graph.add_nodes_from(range(model.n))
    rows, cols = np.nonzero(model.theta)
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    return graph


def validate_connectivity(model):
    """
    Check strong connectivity of the transfer graph.

    Args:
        model (NetworkModel): The model

    Returns:
        tuple: (connected, unreachable) where unreachable lists 0-based
            (source, target) pairs with no directed path
    """
    graph = transfer_graph(model)
    if nx.is_strongly_connected(graph):
        return True, []
    unreachable = []
    for src in range(model.n):
        reach = nx.descendants(graph, src)
        unreachable.extend((src, dst) for dst in range(model.n) if dst != src and dst not in reach)
    return False, unreachable


def require_connected(model, context):
    """Raise ModelValidationError unless the transfer graph is strongly connected."""
    connected, unreachable = validate_connectivity(model)
    if not connected:
        sample = ', '.join(f"{i + 1}->{j + 1}" for i, j in unreachable[:5])
        raise ModelValidationError(
            f"{context} requires a strongly connected network; unreachable: {sample}"
        )


def warn_if_disconnected(model):
    """Log a warning when the transfer graph is not strongly connected."""
    connected, unreachable = validate_connectivity(model)
    if not connected:
        logger.warning(f"Transfer graph is not strongly connected ({len(unreachable)} unreachable pairs)")
    return connected
