"""
Deterministic Dynamics Module

Deterministic counterparts of the stochastic processes: the closed-form
linear population flow, the 3n-dimensional SIR system with its analytic
Jacobian, endemic equilibria and the single-node Lyapunov function.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.integrate import solve_ivp

from epinet.analysis.outbreak import R0_BOUNDARY_TOL
from epinet.analysis.spectral import (
    as_matrix, build_A, equilibrium_population, offspring_matrix, r0, solve_refined, spectral_abscissa,
)
from epinet.utils.errors import ConvergenceError, ModelValidationError, NumericalError

logger = logging.getLogger('epinet.analysis.ode')

MODES = ('current_total', 'z_star')
CONDITION_LIMIT = 1e8


def linear_flow(A, B, x0, t):
    """
    Closed-form solution z(t) = e^{tA}(x0 - z*) + z* of z' = A z + B.

    Args:
        A (DemographyMatrix or array): Invertible matrix
        B (array): Constant input
        x0 (array): Initial value
        t (float or array): Time or times

    Returns:
        numpy.ndarray: Shape (n,) for a scalar t, (len(t), n) otherwise
    """
    M = as_matrix(A)
    fixed = -solve_refined(M, np.asarray(B, dtype=float))
    offset = np.asarray(x0, dtype=float) - fixed
    if np.ndim(t) == 0:
        return scipy.linalg.expm(float(t) * M) @ offset + fixed

    times = np.asarray(t, dtype=float)
    eigenvalues, V = scipy.linalg.eig(M)
    if np.linalg.cond(V) < CONDITION_LIMIT:
        coefficients = scipy.linalg.solve(V, offset.astype(complex))
        modes = np.exp(np.outer(times, eigenvalues)) * coefficients
        return (modes @ V.T).real + fixed
    logger.debug("Eigenvectors ill-conditioned; evaluating the flow with expm per time")
    return np.array([scipy.linalg.expm(tau * M) @ offset + fixed for tau in times])


@dataclass
class DeterministicState:
    """Scaled densities s, i, r per node."""

    s: np.ndarray
    i: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.i = np.asarray(self.i, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if not (self.s.shape == self.i.shape == self.r.shape) or self.s.ndim != 1:
            raise ModelValidationError("s, i and r must be vectors of equal length")

    @property
    def n(self):
        return self.s.shape[0]

    def as_vector(self):
        return np.concatenate([self.s, self.i, self.r])

    @classmethod
    def from_vector(cls, y):
        s, i, r = np.split(np.asarray(y, dtype=float), 3)
        return cls(s, i, r)

    def to_dict(self):
        return {'s': self.s.tolist(), 'i': self.i.tolist(), 'r': self.r.tolist()}


def _denominator(model, y, z_star, mode):
    s, i, r = np.split(y, 3)
    if mode == 'current_total':
        return s + i + r
    if mode == 'z_star':
        return z_star
    raise ModelValidationError(f"unknown denominator mode {mode!r}; expected one of {MODES}")


def sir_rhs(model, y, z_star=None, mode='current_total'):
    """Right-hand side of the deterministic SIR system at the stacked state y = (s, i, r)."""
    y = np.asarray(y, dtype=float)
    s, i, r = np.split(y, 3)
    denominator = _denominator(model, y, z_star, mode)
    with np.errstate(divide='ignore', invalid='ignore'):
        force = np.where(denominator > 0, model.beta * i * s / denominator, 0.0)
    theta_t = model.theta.T
    out = model.theta_out
    x = s + i + r
    ds = model.B + model.b * x - model.d * s - force + theta_t @ s - out * s
    di = force - model.omega * i + theta_t @ i - out * i
    dr = model.gamma * i - model.d * r + theta_t @ r - out * r
    return np.concatenate([ds, di, dr])


def sir_jacobian(model, y, z_star=None, mode='current_total'):
    """Analytic Jacobian of sir_rhs with respect to the stacked state."""
    y = np.asarray(y, dtype=float)
    s, i, r = np.split(y, 3)
    beta = model.beta
    if mode == 'current_total':
        x = s + i + r
        with np.errstate(divide='ignore', invalid='ignore'):
            x2 = np.where(x > 0, x * x, np.inf)
            f_s = beta * i * (i + r) / x2
            f_i = beta * s * (s + r) / x2
            f_r = -beta * i * s / x2
    else:
        denominator = _denominator(model, y, z_star, mode)
        f_s = beta * i / denominator
        f_i = beta * s / denominator
        f_r = np.zeros_like(s)
    transfer = model.theta.T - np.diag(model.theta_out)
    D = np.diag
    return np.block([
        [D(model.b - model.d - f_s) + transfer, D(model.b - f_i), D(model.b - f_r)],
        [D(f_s), D(f_i - model.omega) + transfer, D(f_r)],
        [np.zeros((model.n, model.n)), D(model.gamma), -D(model.d) + transfer],
    ])


@dataclass
class OdeTrajectory:
    """Sampled solution of the SIR system; s, i and r have shape (len(t), n)."""

    t: np.ndarray
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    mode: str = 'current_total'

    def total(self):
        return self.s + self.i + self.r

    def to_frame(self):
        n = self.s.shape[1]
        data = {'time': self.t}
        for name, values in (('s', self.s), ('i', self.i), ('r', self.r)):
            for k in range(n):
                data[f"{name}_{k + 1}"] = values[:, k]
        return pd.DataFrame(data)


def integrate_sir_ode(model, z_star=None, init=None, t_end=100.0, mode='current_total',
                      rtol=1e-9, atol=1e-12, t_eval=None, max_step=np.inf):
    """
    Integrate the deterministic SIR system with an adaptive Runge-Kutta pair.

    The infection term is beta_k i_k s_k / (s_k + i_k + r_k) in current_total
    mode and beta_k i_k s_k / z*_k in z_star mode. The field is evaluated on
    the state clipped at zero.

    Args:
        model (NetworkModel): The model
        z_star (array, optional): Equilibrium population (computed when needed)
        init (DeterministicState): Initial state with i != 0
        t_end (float): Final time
        mode (str): 'current_total' or 'z_star'
        rtol, atol (float): Integrator tolerances
        t_eval (array, optional): Output times (default: 501 uniform points)
        max_step (float): Largest allowed step

    Returns:
        OdeTrajectory

    Raises:
        ModelValidationError: If init has no infectives or negative entries
        NumericalError: On integrator failure or a significantly negative output
    """
    if mode not in MODES:
        raise ModelValidationError(f"unknown denominator mode {mode!r}; expected one of {MODES}")
    if init is None or init.n != model.n:
        raise ModelValidationError("init must be a DeterministicState of dimension n")
    y0 = init.as_vector()
    if np.any(y0 < 0):
        raise ModelValidationError("init must be nonnegative")
    if not np.any(init.i > 0):
        raise ModelValidationError("init not in E: i(0) must be nonzero")
    if t_end <= 0:
        raise ModelValidationError(f"t_end must be positive, got {t_end}")
    if mode == 'z_star' and z_star is None:
        z_star = equilibrium_population(build_A(model), model.B)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, 501)

    def field(_, y):
        return sir_rhs(model, np.maximum(y, 0.0), z_star, mode)

    solution = solve_ivp(field, (0.0, t_end), y0, method='DOP853', t_eval=t_eval,
                         rtol=rtol, atol=atol, max_step=max_step)
    if solution.status == -1:
        location = solution.t[-1] if solution.t.size else 0.0
        logger.error(f"SIR integration failed near t={location}: {solution.message}")
        raise NumericalError(f"integration failed near t={location}: {solution.message}")
    y = solution.y.T
    if np.any(y < -10 * atol):
        row, col = np.unravel_index(np.argmin(y), y.shape)
        raise NumericalError(f"negative state {y[row, col]:.3e} at t={solution.t[row]}")
    s, i, r = np.split(np.maximum(y, 0.0), 3, axis=1)
    return OdeTrajectory(solution.t, s, i, r, mode)


def endemic_equilibrium_1d(B, b, d, beta, gamma):
    """
    Closed-form endemic equilibrium of the single-node SIR system.

    Returns:
        tuple: (s*, i*, r*) with s* + i* + r* = B / (d - b)

    Raises:
        ModelValidationError: If d <= b or beta <= d + gamma
    """
    if d <= b:
        raise ModelValidationError("subcriticality violation: d must exceed b")
    if beta <= d + gamma:
        raise ModelValidationError("no endemic equilibrium: beta <= d + gamma")
    total = B / (d - b)
    excess = 1.0 / (d + gamma) - 1.0 / beta
    return (d + gamma) / beta * total, d * total * excess, gamma * total * excess


@dataclass
class EquilibriumReport:
    """Equilibrium of the SIR system with its local stability."""

    point: DeterministicState
    residual: float
    jacobian_abscissa: float
    classification: str
    iterations: int = 0

    def to_dict(self):
        return {
            'point': self.point.to_dict(),
            'residual': self.residual,
            'jacobian_abscissa': self.jacobian_abscissa,
            'classification': self.classification,
            'iterations': self.iterations,
        }


def _newton(model, y, z_star, mode, max_iter, tol):
    residual = np.max(np.abs(sir_rhs(model, y, z_star, mode)))
    best = (residual, y)
    for iteration in range(1, max_iter + 1):
        if residual < tol:
            return y, residual, iteration - 1, True
        F = sir_rhs(model, y, z_star, mode)
        J = sir_jacobian(model, y, z_star, mode)
        try:
            step = scipy.linalg.solve(J, -F)
        except scipy.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
        damping = 1.0
        for _ in range(40):
            candidate = y + damping * step
            candidate_residual = np.max(np.abs(sir_rhs(model, candidate, z_star, mode)))
            if candidate_residual < residual:
                break
            damping *= 0.5
        else:
            logger.debug(f"Newton line search stalled at iteration {iteration}")
            return best[1], best[0], iteration, False
        y, residual = candidate, candidate_residual
        if residual < best[0]:
            best = (residual, y)
        logger.debug(f"Newton iteration {iteration}: residual {residual:.3e}, damping {damping}")
    return best[1], best[0], max_iter, residual < tol


def find_endemic_equilibrium(model, z_star=None, mode='current_total', max_iter=200, tol=1e-10):
    """
    Locate an equilibrium of the SIR system by damped Newton iteration.

    Starts from s = 0.8 z*, i = 0.1 z*, r = 0.1 z*. A root with vanishing or
    negative infectives, or a failure to converge when R0 <= 1, is reported as
    the disease-free equilibrium (z*, 0, 0).

    Returns:
        EquilibriumReport

    Raises:
        ConvergenceError: If Newton fails for a model with R0 > 1
    """
    if mode not in MODES:
        raise ModelValidationError(f"unknown denominator mode {mode!r}; expected one of {MODES}")
    if z_star is None:
        z_star = equilibrium_population(build_A(model), model.B)
    z_star = np.asarray(z_star, dtype=float)
    start = np.concatenate([0.8 * z_star, 0.1 * z_star, 0.1 * z_star])
    y, residual, iterations, converged = _newton(model, start, z_star, mode, max_iter, tol)
    _, i, _ = np.split(y, 3)
    scale = float(np.max(z_star))

    disease_free = converged and (np.max(i) <= 1e-9 * scale or np.any(i < -1e-9 * scale))
    if not converged:
        reproduction = r0(offspring_matrix(model))
        if reproduction > 1 + R0_BOUNDARY_TOL:
            logger.error(f"Newton did not converge (best residual {residual:.3e})")
            raise ConvergenceError(
                f"equilibrium search did not converge after {iterations} iterations "
                f"(best residual {residual:.3e})",
                last=y, gap=residual, iterations=iterations,
            )
        disease_free = True

    if disease_free:
        y = np.concatenate([z_star, np.zeros_like(z_star), np.zeros_like(z_star)])
        residual = float(np.max(np.abs(sir_rhs(model, y, z_star, mode))))
        classification = 'disease-free'
    abscissa = spectral_abscissa(sir_jacobian(model, y, z_star, mode))
    if not disease_free:
        classification = 'stable-endemic' if abscissa < 0 else 'unstable'
    logger.info(f"Equilibrium search: {classification} after {iterations} iterations "
                f"(residual {residual:.3e})")
    return EquilibriumReport(DeterministicState.from_vector(y), float(residual), abscissa,
                             classification, iterations)


def lyapunov_V(trajectory, s_star, i_star):
    """
    V(t) = s - s* log s + i - i* log i along a single-node trajectory.

    Args:
        trajectory (OdeTrajectory): Trajectory of a one-node model
        s_star, i_star (float): Endemic equilibrium values

    Returns:
        numpy.ndarray: V at the trajectory times
    """
    if trajectory.s.shape[1] != 1:
        raise ModelValidationError("lyapunov_V is defined for single-node trajectories")
    s = trajectory.s[:, 0]
    i = trajectory.i[:, 0]
    if np.any(s <= 0) or np.any(i <= 0):
        raise ModelValidationError("lyapunov_V needs positive s and i along the trajectory")
    return s - s_star * np.log(s) + i - i_star * np.log(i)
