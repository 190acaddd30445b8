"""
Outbreak Probability Module

Evaluates the multivariate offspring generating function G by a linear solve
and computes extinction probabilities q and major-outbreak probabilities
p = 1 - q by fixed-point iteration from s = 0.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from epinet.analysis.spectral import (
    DENSE_LIMIT, OutbreakAnalysis, build_A, check_subcritical, equilibrium_population,
    growth_rate_lambda1, offspring_matrix, r0, require_removal_reachable,
)
from epinet.utils.errors import ConvergenceError, ModelValidationError, NumericalError

logger = logging.getLogger('epinet.analysis.outbreak')

R0_BOUNDARY_TOL = 1e-12


class PgfSystem:
    """Linear system (diag((1 - s) beta + Sigma) - Theta) G = omega for repeated evaluation."""

    def __init__(self, model):
        self.n = model.n
        self.beta = model.beta
        self.sigma = model.sigma
        self.omega = model.omega
        self.sparse = self.n > DENSE_LIMIT
        if self.sparse:
            self.neg_theta = -scipy.sparse.csc_matrix(model.theta)
        else:
            self.neg_theta = -model.theta

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if s.shape != (self.n,):
            raise ModelValidationError(f"s must have length {self.n}")
        if np.any(s < -1e-12) or np.any(s > 1 + 1e-12):
            raise ModelValidationError("s must lie in [0, 1]^n")
        lam = (1.0 - s) * self.beta + self.sigma
        try:
            if self.sparse:
                system = (self.neg_theta + scipy.sparse.diags(lam, format='csc')).tocsc()
                G = scipy.sparse.linalg.splu(system).solve(self.omega)
            else:
                G = scipy.linalg.solve(self.neg_theta + np.diag(lam), self.omega)
        except (scipy.linalg.LinAlgError, RuntimeError) as e:
            raise NumericalError(f"singular PGF system: {e}")
        if not np.all(np.isfinite(G)):
            raise NumericalError("PGF evaluation produced non-finite values")
        return np.clip(G, 0.0, 1.0)


def eval_G(model, s):
    """
    Evaluate the offspring PGF G at s.

    Args:
        model (NetworkModel): The model
        s (array): Point of [0, 1]^n

    Returns:
        numpy.ndarray: G(s), entrywise in [0, 1]
    """
    require_removal_reachable(model)
    return PgfSystem(model)(s)


@dataclass
class ExtinctionResult:
    """Outcome of the extinction-probability iteration."""

    q: np.ndarray
    iterations: int
    gap: float
    rate_estimate: float
    converged: bool

    @property
    def p(self):
        return 1.0 - self.q


def extinction_probs(model, tol=1e-12, max_iter=10 ** 6, start=None):
    """
    Extinction probabilities q, the minimal fixed point of G on [0, 1]^n.

    Iterates s <- G(s) until the sup-norm step is below tol. When R0 <= 1
    the answer is q = 1 and no iteration is performed.

    Args:
        model (NetworkModel): The model
        tol (float): Stopping tolerance on the sup-norm step
        max_iter (int): Iteration cap
        start (array, optional): Starting point; only s = 0 is guaranteed to
            reach the minimal fixed point

    Returns:
        ExtinctionResult

    Raises:
        ConvergenceError: When max_iter is exceeded (carries the last iterate and gap)
        NumericalError: When an iterate from s = 0 decreases
    """
    if tol <= 0 or max_iter < 1:
        raise ModelValidationError("tol must be positive and max_iter at least 1")
    require_removal_reachable(model)

    reproduction = r0(offspring_matrix(model))
    if reproduction <= 1.0 + R0_BOUNDARY_TOL:
        if abs(reproduction - 1.0) <= R0_BOUNDARY_TOL:
            logger.warning("R0 = 1 within tolerance; reporting no major outbreak")
        return ExtinctionResult(np.ones(model.n), 0, 0.0, 0.0, True)

    G = PgfSystem(model)
    monotone = start is None
    s = np.zeros(model.n) if start is None else np.clip(np.asarray(start, dtype=float), 0.0, 1.0)
    previous_gap = None
    rate = 0.0
    for iteration in range(1, max_iter + 1):
        s_next = G(s)
        if monotone and np.any(s_next < s - 1e-14):
            raise NumericalError(f"non-monotone PGF iterate at step {iteration}")
        gap = float(np.max(np.abs(s_next - s)))
        if previous_gap:
            rate = gap / previous_gap
        previous_gap = gap
        s = s_next
        if gap < tol:
            logger.debug(f"Extinction iteration converged in {iteration} steps (rate {rate:.4f})")
            return ExtinctionResult(s, iteration, gap, rate, True)

    logger.error(f"Extinction iteration stopped after {max_iter} steps with gap {gap:.3e}")
    raise ConvergenceError(
        f"extinction iteration did not converge in {max_iter} steps (gap {gap:.3e}, rate {rate:.6f})",
        last=s, gap=gap, iterations=max_iter,
    )


def major_outbreak_prob(q, I0):
    """
    Probability of a major outbreak from initial infectives I0: 1 - prod q_k^I0_k.
    """
    q = np.asarray(q, dtype=float)
    I0 = np.asarray(I0)
    if np.any(q < 0) or np.any(q > 1):
        raise ModelValidationError("q must lie in [0, 1]^n")
    if q.shape != I0.shape:
        raise ModelValidationError("q and I0 must have the same length")
    if not np.any(I0):
        return 0.0
    return float(np.clip(1.0 - np.prod(q ** I0), 0.0, 1.0))


def analyze(model, scaling=None, tol=1e-12, max_iter=10 ** 6):
    """
    Compute every analytic outbreak quantity of a model.

    Args:
        model (NetworkModel): The model
        scaling (ScalingConfig, optional): Supplies I0 (defaults to one
            infective in the first node)
        tol (float): Extinction iteration tolerance
        max_iter (int): Extinction iteration cap

    Returns:
        OutbreakAnalysis
    """
    logger.info(f"Analyzing {model.n}-node model")
    A = build_A(model)
    abscissa, subcritical = check_subcritical(A)
    z_star = equilibrium_population(A, model.B) if subcritical else None
    C = offspring_matrix(model)
    reproduction = r0(C)
    lambda1 = growth_rate_lambda1(model)
    if (reproduction > 1) != (lambda1 > 0) and abs(reproduction - 1) > R0_BOUNDARY_TOL:
        logger.warning(f"R0 = {reproduction} and lambda1 = {lambda1} disagree in sign")
    extinction = extinction_probs(model, tol=tol, max_iter=max_iter)
    I0 = scaling.I0 if scaling is not None else np.eye(1, model.n, 0, dtype=np.int64)[0]
    analysis = OutbreakAnalysis(
        A=A,
        spectral_abscissa=abscissa,
        subcritical=subcritical,
        z_star=z_star,
        C=C,
        R0=reproduction,
        lambda1=lambda1,
        q=extinction.q,
        p=extinction.p,
        p_I0=major_outbreak_prob(extinction.q, I0),
        iterations=extinction.iterations,
        gap=extinction.gap,
    )
    logger.info(f"R0 = {reproduction:.6f}, lambda1 = {lambda1:.6f}, p_I0 = {analysis.p_I0:.6f}")
    return analysis


def acceleration_sweep(model, ks, tol=1e-12, max_iter=10 ** 6):
    """
    Scale infection and recovery rates together and summarise outbreak risk.

    Multiplying beta and gamma by k speeds the disease relative to demography
    and trade. For each k the frame reports R0 and the mean, sd, min and max
    of the per-node major-outbreak probabilities.

    Returns:
        pandas.DataFrame: One row per k
    """
    rows = []
    for k in ks:
        if k <= 0:
            raise ModelValidationError(f"acceleration factors must be positive, got {k}")
        scaled = model.replace(beta=model.beta * k, gamma=model.gamma * k)
        extinction = extinction_probs(scaled, tol=tol, max_iter=max_iter)
        p = extinction.p
        rows.append({
            'k': float(k),
            'R0': r0(offspring_matrix(scaled)),
            'p_mean': float(p.mean()),
            'p_sd': float(p.std(ddof=1)) if p.size > 1 else 0.0,
            'p_min': float(p.min()),
            'p_max': float(p.max()),
        })
        logger.debug(f"Sweep k={k}: p_mean={rows[-1]['p_mean']:.4f}")
    return pd.DataFrame(rows, columns=['k', 'R0', 'p_mean', 'p_sd', 'p_min', 'p_max'])
