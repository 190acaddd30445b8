"""
Calibration Module

This module provides functionality to build network models from node census
and movement records, and to generate synthetic trade networks.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from epinet.models.network import NetworkModel, validate_connectivity
from epinet.utils.errors import ModelValidationError
from epinet.utils.rng import RngSpec

logger = logging.getLogger('epinet.transformers.calibration')

DAYS_PER_YEAR = 365.25
DEFAULT_FLOOR_PER_YEAR = 1e-6
UNITS_PER_YEAR = {'days': DAYS_PER_YEAR, 'weeks': DAYS_PER_YEAR / 7.0, 'years': 1.0}

NODE_COLUMNS = ('node_id', 'avg_population', 'births', 'deaths', 'external_in')
MOVEMENT_COLUMNS = ('src_id', 'dst_id', 'count')

# Rate ranges of synthetic networks
SYNTH_RANGES = {
    'B': (0.5, 2.0),
    'd': (0.5, 1.5),
    'theta': (0.01, 0.1),
    'beta': (0.5, 3.0),
    'gamma': (0.2, 1.0),
}


@dataclass(frozen=True)
class NodeRecord:
    """Census of one holding over the calibration period."""

    node_id: str
    avg_population: float
    births: float
    deaths: float
    external_in: float

    def __post_init__(self):
        if not self.avg_population > 0:
            raise ModelValidationError(
                f"avg_population of node {self.node_id} must be positive, got {self.avg_population}"
            )
        for name in ('births', 'deaths', 'external_in'):
            value = getattr(self, name)
            if not value >= 0:
                raise ModelValidationError(f"{name} of node {self.node_id} must be nonnegative, got {value}")


@dataclass(frozen=True)
class MovementRecord:
    """Observed number of animals moved from src_id to dst_id over the period."""

    src_id: str
    dst_id: str
    count: float

    def __post_init__(self):
        if self.src_id == self.dst_id:
            raise ModelValidationError(f"movement from node {self.src_id} to itself")
        if not self.count >= 0:
            raise ModelValidationError(f"movement count must be nonnegative, got {self.count}")


def default_floor(time_unit='days'):
    """The 1e-6 per year transfer floor expressed in the given time unit."""
    if time_unit not in UNITS_PER_YEAR:
        raise ModelValidationError(f"unknown time unit: {time_unit}")
    return DEFAULT_FLOOR_PER_YEAR / UNITS_PER_YEAR[time_unit]


def calibrate(nodes, moves, floor=None, time_unit='days', beta=None, gamma=None):
    """
    Build a network model from per-period census and movement records.

    Rates are ratios to the average node population: b = births / pop,
    d = deaths / pop, theta[i, j] = flow(i -> j) / pop_i. External entries are
    used directly as B. Every zero off-diagonal theta is replaced by floor.

    Args:
        nodes (list): NodeRecord per node
        moves (list): MovementRecord per observed flow; repeated pairs are summed
        floor (float, optional): Transfer floor; defaults to 1e-6 per year in time_unit
        time_unit (str): Unit of the calibration period
        beta (array, optional): Contact rates (default zero)
        gamma (array, optional): Recovery rates (default zero)

    Returns:
        NetworkModel: Nodes in sorted node_id order

    Raises:
        ModelValidationError: For duplicate or unknown node ids, or a negative floor
    """
    if floor is None:
        floor = default_floor(time_unit)
    if floor < 0:
        raise ModelValidationError(f"floor must be nonnegative, got {floor}")
    ids = sorted(record.node_id for record in nodes)
    if len(set(ids)) != len(ids):
        raise ModelValidationError("duplicate node ids in census records")
    index = {node_id: k for k, node_id in enumerate(ids)}
    by_id = {record.node_id: record for record in nodes}
    n = len(ids)
    if n == 0:
        raise ModelValidationError("no node records")

    population = np.array([by_id[i].avg_population for i in ids], dtype=float)
    flows = np.zeros((n, n))
    for move in moves:
        for endpoint in (move.src_id, move.dst_id):
            if endpoint not in index:
                raise ModelValidationError(f"unknown node id in movement: {endpoint}")
        flows[index[move.src_id], index[move.dst_id]] += move.count

    theta = flows / population[:, None]
    off_diagonal = ~np.eye(n, dtype=bool)
    floored = int(np.sum((theta == 0) & off_diagonal))
    theta[(theta == 0) & off_diagonal] = floor
    logger.info(f"Calibrated {n} nodes from {len(moves)} movement records; {floored} transfer rates floored")

    return NetworkModel(
        B=np.array([by_id[i].external_in for i in ids], dtype=float),
        b=np.array([by_id[i].births for i in ids], dtype=float) / population,
        d=np.array([by_id[i].deaths for i in ids], dtype=float) / population,
        theta=theta,
        beta=np.zeros(n) if beta is None else beta,
        gamma=np.zeros(n) if gamma is None else gamma,
        time_unit=time_unit,
        node_ids=tuple(ids),
    )


def calibration_summary(model):
    """
    Mean and sd of b, d and B over all nodes and over non-operator nodes.

    Operator nodes (markets, dealers) are those with b = 0.

    Returns:
        pandas.DataFrame: Columns parameter, scope, mean, sd, count
    """
    rows = []
    breeding = model.b > 0
    for name in ('b', 'd', 'B'):
        values = getattr(model, name)
        for scope, mask in (('all', np.ones(model.n, dtype=bool)), ('non_operator', breeding)):
            selected = values[mask]
            rows.append({
                'parameter': name,
                'scope': scope,
                'mean': float(selected.mean()) if selected.size else math.nan,
                'sd': float(selected.std(ddof=1)) if selected.size > 1 else math.nan,
                'count': int(selected.size),
            })
    return pd.DataFrame(rows, columns=['parameter', 'scope', 'mean', 'sd', 'count'])


def synth_network(n, density, seed, time_unit='days'):
    """
    Random strongly connected network model.

    A random ring through all nodes guarantees strong connectivity; every
    other ordered pair carries a transfer with probability density.

    Args:
        n (int): Number of nodes
        density (float): Edge probability in (0, 1]
        seed (int): Seed; the same seed always gives the same model

    Returns:
        NetworkModel
    """
    if n < 1:
        raise ModelValidationError(f"n must be positive, got {n}")
    if not 0 < density <= 1:
        raise ModelValidationError(f"density must lie in (0, 1], got {density}")
    rng = RngSpec(seed).generator()

    def draw(name):
        low, high = SYNTH_RANGES[name]
        return rng.uniform(low, high, n)

    B, d, beta, gamma = draw('B'), draw('d'), draw('beta'), draw('gamma')
    b = rng.uniform(0.0, 0.9, n) * d

    edges = rng.random((n, n)) < density
    if n > 1:
        order = rng.permutation(n)
        edges[order, np.roll(order, -1)] = True
    np.fill_diagonal(edges, False)
    low, high = SYNTH_RANGES['theta']
    theta = np.where(edges, rng.uniform(low, high, (n, n)), 0.0)

    model = NetworkModel(B=B, b=b, d=d, theta=theta, beta=beta, gamma=gamma, time_unit=time_unit,
                         node_ids=tuple(f"n{k + 1}" for k in range(n)))
    connected, _ = validate_connectivity(model)
    logger.debug(f"Synthetic network: {n} nodes, {int(edges.sum())} edges, connected={connected}")
    return model


class NetworkCalibrator:
    """Class for calibrating network models from census and movement tables."""

    def __init__(self, floor=None, time_unit='days'):
        """
        Initialize the calibrator.

        Args:
            floor (float, optional): Transfer floor (default 1e-6 per year)
            time_unit (str): Unit of the calibration period
        """
        self.floor = floor
        self.time_unit = time_unit

    def transform(self, nodes_df, moves_df):
        """
        Clean the tables and calibrate a model from them.

        Every movement row is a shipment; repeated (src, dst) rows, identical
        ones included, are aggregated by summing counts.

        Args:
            nodes_df (pandas.DataFrame): Columns node_id, avg_population, births, deaths, external_in
            moves_df (pandas.DataFrame): Columns src_id, dst_id, count

        Returns:
            NetworkModel: The calibrated model
        """
        try:
            logger.info("Starting network calibration")
            nodes_df = nodes_df.copy()
            nodes_df['node_id'] = nodes_df['node_id'].astype(str)
            moves_df = moves_df.copy()
            moves_df[['src_id', 'dst_id']] = moves_df[['src_id', 'dst_id']].astype(str)

            rows = len(moves_df)
            moves_df = moves_df.groupby(['src_id', 'dst_id'], as_index=False, sort=True)['count'].sum()
            logger.info(f"Aggregated {rows} movement records into {len(moves_df)} node pairs")

            nodes = [
                NodeRecord(row.node_id, float(row.avg_population), float(row.births),
                           float(row.deaths), float(row.external_in))
                for row in nodes_df.itertuples(index=False)
            ]
            moves = [
                MovementRecord(src, dst, float(count))
                for src, dst, count in zip(moves_df['src_id'], moves_df['dst_id'], moves_df['count'])
            ]
            model = calibrate(nodes, moves, floor=self.floor, time_unit=self.time_unit)
            logger.info(f"Calibration complete. {model.n} nodes calibrated.")
            return model

        except Exception as e:
            logger.error(f"Error during network calibration: {str(e)}")
            raise
