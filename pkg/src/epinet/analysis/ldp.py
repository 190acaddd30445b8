"""
Large Deviations Module

Local rate function of density-dependent jump processes (Legendre transform
of the Poisson jump Hamiltonian), path actions on a time grid and
minimum-action estimates of exit costs from a neighbourhood of a stable
equilibrium. Every minimized action is an upper bound on the true exit cost.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.integrate import trapezoid
from scipy.optimize import minimize

from epinet.analysis.spectral import build_A, equilibrium_population
from epinet.utils.errors import ConvergenceError, ModelValidationError
from epinet.utils.rng import RngSpec

logger = logging.getLogger('epinet.analysis.ldp')

DEFAULT_U_MAX = 40.0


def _finite_difference_jacobian(propensity):
    def jacobian(x):
        x = np.asarray(x, dtype=float)
        columns = []
        for k in range(x.size):
            h = 1e-7 * max(1.0, abs(x[k]))
            step = np.zeros_like(x)
            step[k] = h
            columns.append((propensity(x + step) - propensity(x - step)) / (2 * h))
        return np.column_stack(columns)
    return jacobian


@dataclass
class JumpSpec:
    """Scaled transition classes of a density-dependent jump process.

    Attributes:
        jumps: (J, dim) integer jump vectors
        propensity: Callable mapping a state to the J nonnegative scaled rates
        jacobian: Callable mapping a state to the (J, dim) propensity Jacobian
            (central differences when omitted)
        labels: Optional names of the transition classes
    """

    jumps: np.ndarray
    propensity: callable
    jacobian: callable = None
    labels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.jumps = np.atleast_2d(np.asarray(self.jumps, dtype=float))
        if self.jacobian is None:
            self.jacobian = _finite_difference_jacobian(self.propensity)

    @property
    def dim(self):
        return self.jumps.shape[1]

    def rates(self, x):
        return np.maximum(np.asarray(self.propensity(np.asarray(x, dtype=float)), dtype=float), 0.0)

    def drift(self, x):
        """Mean velocity sum_j jump_j * rate_j(x)."""
        return self.jumps.T @ self.rates(x)

    def hamiltonian(self, x, u):
        return float(self.rates(x) @ np.expm1(self.jumps @ u))


def local_rate_L(jumps, x, beta_vec, u_max=DEFAULT_U_MAX, tol=1e-13, max_iter=200):
    """
    Local rate function L(x, beta) = sup_u [beta.u - H(x, u)] over ||u||_inf <= u_max.

    Solved by projected Newton with a Levenberg-Marquardt shift and
    backtracking on the strictly concave inner objective.

    Args:
        jumps (JumpSpec): Transition classes
        x (array): State in the nonnegative orthant
        beta_vec (array): Velocity
        u_max (float): Box half-width

    Returns:
        tuple: (value, u_opt, boundary_hit); boundary_hit flags a supremum
            attained on the box edge, where the returned value is a finite
            surrogate of a non-attained supremum
    """
    x = np.asarray(x, dtype=float)
    beta_vec = np.asarray(beta_vec, dtype=float)
    if np.any(x < 0):
        raise ModelValidationError("state must lie in the nonnegative orthant")
    rates = jumps.rates(x)
    active = rates > 0
    Z = jumps.jumps[active]
    a = rates[active]
    dim = jumps.dim

    def objective(u):
        return float(beta_vec @ u - a @ np.expm1(Z @ u))

    u = np.zeros(dim)
    value = objective(u)
    scale = max(1.0, float(np.max(np.abs(beta_vec))) if dim else 1.0, float(a.sum()))
    for _ in range(max_iter):
        weights = a * np.exp(Z @ u)
        gradient = beta_vec - Z.T @ weights
        at_upper = (u >= u_max) & (gradient > 0)
        at_lower = (u <= -u_max) & (gradient < 0)
        free = ~(at_upper | at_lower)
        if not np.any(free) or np.max(np.abs(gradient[free])) < tol * scale:
            break
        hessian = (Z * weights[:, None]).T @ Z
        H = hessian[np.ix_(free, free)]
        shift = 1e-12 * max(1.0, float(np.trace(H)))
        direction = np.zeros(dim)
        try:
            direction[free] = scipy.linalg.solve(H + shift * np.eye(H.shape[0]), gradient[free], assume_a='sym')
        except scipy.linalg.LinAlgError:
            direction[free] = np.linalg.lstsq(H, gradient[free], rcond=None)[0]
        step = 1.0
        improved = False
        for _ in range(60):
            candidate = np.clip(u + step * direction, -u_max, u_max)
            candidate_value = objective(candidate)
            if candidate_value >= value + 1e-4 * gradient @ (candidate - u):
                improved = True
                break
            step *= 0.5
        if not improved or np.max(np.abs(candidate - u)) < 1e-15:
            break
        u, value = candidate, candidate_value
    boundary_hit = bool(np.any(np.abs(u) >= u_max * (1 - 1e-12)))
    return max(value, 0.0), u, boundary_hit


@dataclass
class ActionPath:
    """Path on a time grid with its action (an upper bound on the exit cost)."""

    times: np.ndarray
    points: np.ndarray
    action: float
    richardson_error: float = float('nan')
    boundary_hit: bool = False

    def to_frame(self):
        data = {'time': self.times}
        for k in range(self.points.shape[1]):
            data[f"x_{k + 1}"] = self.points[:, k]
        return pd.DataFrame(data)

    def to_dict(self):
        return {
            'action': self.action,
            'richardson_error': self.richardson_error,
            'boundary_hit': self.boundary_hit,
            'horizon': float(self.times[-1] - self.times[0]),
            'grid': len(self.times) - 1,
            'upper_bound': True,
        }


def _action_terms(jumps, times, points, u_max):
    velocities = np.gradient(points, times, axis=0)
    values = np.empty(len(times))
    controls = np.empty_like(points)
    hit = False
    for k in range(len(times)):
        values[k], controls[k], boundary = local_rate_L(jumps, points[k], velocities[k], u_max)
        hit = hit or boundary
    return values, controls, hit


def path_action(jumps, times, points, u_max=DEFAULT_U_MAX):
    """
    Trapezoid-rule action of a path with finite-difference velocities.

    Args:
        jumps (JumpSpec): Transition classes
        times (array): Increasing grid t_0 < ... < t_m
        points (array): (m + 1, dim) states on the grid

    Returns:
        tuple: (action, richardson_error); the error compares the action with
            the one on every second grid point (nan when the grid is too short)
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] != times.shape[0] or times.shape[0] < 2 or np.any(np.diff(times) <= 0):
        raise ModelValidationError("path grid must be increasing and match the points")
    values, _, _ = _action_terms(jumps, times, points, u_max)
    action = float(trapezoid(values, times))
    error = float('nan')
    if len(times) >= 5 and (len(times) - 1) % 2 == 0:
        coarse_values, _, _ = _action_terms(jumps, times[::2], points[::2], u_max)
        error = abs(action - float(trapezoid(coarse_values, times[::2]))) / 3.0
    return action, error


@dataclass(frozen=True)
class PointTarget:
    """Paths must end exactly at `point`."""

    point: tuple


@dataclass(frozen=True)
class BallExitTarget:
    """Paths must end on the sphere of radius `radius` around `center` ('inf' or 2 norm)."""

    center: tuple
    radius: float
    norm: str = 'inf'


class _ActionObjective:
    """Action of a grid path with pinned start as a function of the free coordinates."""

    def __init__(self, jumps, start, times, u_max, end_map):
        self.jumps = jumps
        self.start = start
        self.times = times
        self.u_max = u_max
        self.end_map = end_map
        self.dim = start.size
        self.m = len(times) - 1
        self.weights = self._trapezoid_weights(times)
        self.D = np.gradient(np.eye(len(times)), times, axis=0)

    @staticmethod
    def _trapezoid_weights(times):
        h = np.diff(times)
        weights = np.zeros(len(times))
        weights[:-1] += h / 2
        weights[1:] += h / 2
        return weights

    def path(self, z):
        interior = z[:(self.m - 1) * self.dim].reshape(self.m - 1, self.dim)
        end, _ = self.end_map(z[(self.m - 1) * self.dim:])
        return np.vstack([self.start, interior, end])

    def __call__(self, z):
        points = self.path(z)
        values, controls, _ = _action_terms(self.jumps, self.times, points, self.u_max)
        action = float(self.weights @ values)
        grad_x = np.empty_like(points)
        for k in range(len(self.times)):
            rates_grad = self.jumps.jacobian(points[k])
            grad_x[k] = -(np.expm1(self.jumps.jumps @ controls[k]) @ rates_grad)
        grad_points = self.weights[:, None] * grad_x + self.D.T @ (self.weights[:, None] * controls)
        grad = grad_points[1:-1].ravel()
        _, end_jacobian = self.end_map(z[(self.m - 1) * self.dim:])
        grad = np.concatenate([grad, end_jacobian.T @ grad_points[-1]])
        if not np.isfinite(action):
            return np.inf, np.zeros_like(z)
        return action, grad


def _end_maps(target, start):
    """Parametrizations (end_map, initial end parameters, bounds) of the terminal point."""
    dim = start.size
    if isinstance(target, PointTarget):
        point = np.asarray(target.point, dtype=float)
        return [(lambda w: (point, np.zeros((dim, 0))), np.zeros(0), [])]
    center = np.asarray(target.center, dtype=float)
    radius = float(target.radius)
    if target.norm == 2 or target.norm == '2':
        def sphere(w):
            length = np.linalg.norm(w)
            unit = w / length
            jacobian = radius * (np.eye(dim) - np.outer(unit, unit)) / length
            return center + radius * unit, jacobian
        direction = start - center
        if np.linalg.norm(direction) < 1e-12:
            direction = np.ones(dim)
        return [(sphere, direction / np.linalg.norm(direction), [(None, None)] * dim)]
    if target.norm != 'inf':
        raise ModelValidationError(f"unknown norm {target.norm!r}; expected 'inf' or 2")
    # Sup-norm sphere: one bound-constrained problem per face
    maps = []
    for k in range(dim):
        for sign in (1.0, -1.0):
            level = center[k] + sign * radius
            if level < 0:
                continue
            free = [j for j in range(dim) if j != k]
            selector = np.zeros((dim, dim - 1))
            selector[free, np.arange(dim - 1)] = 1.0

            def face(w, k=k, level=level, selector=selector):
                end = selector @ w
                end[k] = level
                return end, selector
            bounds = [(max(0.0, center[j] - radius), center[j] + radius) for j in free]
            initial = np.clip(start[free], [b[0] for b in bounds], [b[1] for b in bounds])
            maps.append((face, np.asarray(initial, dtype=float), bounds))
    return maps


def _descend(jumps, start, times, u_max, end_map, end_initial, end_bounds, noise_rng, noise):
    objective = _ActionObjective(jumps, start, times, u_max, end_map)
    end, _ = end_map(end_initial)
    fractions = np.linspace(0.0, 1.0, len(times))[1:-1, None]
    interior = start + fractions * (end - start)
    if noise_rng is not None:
        scale = noise * max(1.0, float(np.max(np.abs(end - start))))
        interior = interior + noise_rng.normal(0.0, scale, size=interior.shape)
    interior = np.maximum(interior, 0.0)
    z0 = np.concatenate([interior.ravel(), end_initial])
    bounds = [(0.0, None)] * interior.size + list(end_bounds)
    result = minimize(objective, z0, jac=True, method='L-BFGS-B', bounds=bounds,
                      options={'maxiter': 2000})
    return result.fun, objective.path(result.x), result


def minimize_action(jumps, start, target, T, m=64, restarts=4, rng=0, u_max=DEFAULT_U_MAX,
                    noise=0.05, workers=None):
    """
    Minimum-action path from `start` to a target on a uniform grid of m steps.

    Interior grid points (and the terminal point on a ball-exit sphere) are
    optimized by L-BFGS-B with the analytic action gradient. Restart 0 starts
    from the straight line; restart k > 0 perturbs it with noise drawn from
    the (seed, k) stream. Restarts run concurrently.

    Args:
        jumps (JumpSpec): Transition classes
        start (array): Start state, strictly inside the orthant
        target (PointTarget or BallExitTarget): Terminal condition
        T (float): Horizon
        m (int): Number of grid steps (at least 8)
        restarts (int): Number of descents
        rng (int or RngSpec): Seed of the restart perturbations
        workers (int, optional): Thread count for restarts

    Returns:
        ActionPath: Best path found; its action is an upper bound on the cost

    Raises:
        ConvergenceError: If every descent diverged
    """
    start = np.asarray(start, dtype=float)
    if m < 8:
        raise ModelValidationError(f"grid size m must be at least 8, got {m}")
    if restarts < 1 or T <= 0:
        raise ModelValidationError("restarts must be positive and T must be positive")
    if start.size != jumps.dim or np.any(start < 0):
        raise ModelValidationError("start must be a nonnegative state of the jump dimension")
    times = np.linspace(0.0, float(T), m + 1)

    if isinstance(target, PointTarget) and np.allclose(np.asarray(target.point, dtype=float), start,
                                                       rtol=0, atol=1e-14):
        logger.debug("Target equals start; returning the trivial path")
        return ActionPath(times, np.tile(start, (m + 1, 1)), 0.0, 0.0, False)

    spec = rng if isinstance(rng, RngSpec) else RngSpec(int(rng))
    maps = _end_maps(target, start)
    if not maps:
        raise ModelValidationError("target sphere lies outside the nonnegative orthant")

    def run(restart):
        noise_rng = None if restart == 0 else spec.generator(restart)
        best = (np.inf, None)
        for end_map, end_initial, end_bounds in maps:
            value, points, result = _descend(jumps, start, times, u_max, end_map, end_initial,
                                             end_bounds, noise_rng, noise)
            if not result.success:
                logger.debug(f"Restart {restart}: descent stopped early ({result.message})")
            if np.isfinite(value) and value < best[0]:
                best = (value, points)
        return best

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(run, range(restarts)))

    value, points = min(outcomes, key=lambda outcome: outcome[0])
    if points is None:
        raise ConvergenceError("every minimum-action descent diverged", iterations=restarts)
    action, error = path_action(jumps, times, points, u_max)
    _, _, hit = _action_terms(jumps, times, points, u_max)
    logger.info(f"Minimum action {action:.6g} (Richardson error {error:.2e}, {restarts} restarts)")
    return ActionPath(times, points, action, error, hit)


def population_jumps(model):
    """Transition classes of the scaled population process: inflow, death and transfers."""
    n = model.n
    eye = np.eye(n)
    sources, targets = np.nonzero(model.theta)
    jumps = np.vstack([eye, -eye] + [eye[k] - eye[j] for j, k in zip(sources, targets)]).reshape(-1, n)
    transfer_rates = model.theta[sources, targets]

    def propensity(x):
        return np.concatenate([model.B + model.b * x, model.d * x, transfer_rates * x[sources]])

    jac_transfer = np.zeros((len(sources), n))
    jac_transfer[np.arange(len(sources)), sources] = transfer_rates
    jacobian_matrix = np.vstack([np.diag(model.b), np.diag(model.d), jac_transfer])

    labels = tuple([f"inflow_{j + 1}" for j in range(n)] + [f"death_{j + 1}" for j in range(n)]
                   + [f"transfer_{j + 1}_{k + 1}" for j, k in zip(sources, targets)])
    return JumpSpec(jumps, propensity, lambda x: jacobian_matrix, labels)


def sir_jumps(model, duplicate_death_block=False):
    """
    Transition classes of the scaled SIR process on the 3n-dimensional state (s, i, r).

    With duplicate_death_block the three death classes are listed twice,
    doubling their weight in the Hamiltonian.
    """
    n = model.n
    eye = np.eye(3 * n)
    S, I, R = (lambda j: j), (lambda j: n + j), (lambda j: 2 * n + j)
    sources, targets = np.nonzero(model.theta)
    theta_rates = model.theta[sources, targets]

    rows, labels = [], []
    rows += [eye[S(j)] for j in range(n)]
    labels += [f"inflow_{j + 1}" for j in range(n)]
    death_rows = [eye[C(j)] * -1 for C in (S, I, R) for j in range(n)]
    death_labels = [f"death_{c}_{j + 1}" for c in 'sir' for j in range(n)]
    repeats = 2 if duplicate_death_block else 1
    rows += death_rows * repeats
    labels += death_labels * repeats
    for C, c in ((S, 's'), (I, 'i'), (R, 'r')):
        rows += [eye[C(k)] - eye[C(j)] for j, k in zip(sources, targets)]
        labels += [f"transfer_{c}_{j + 1}_{k + 1}" for j, k in zip(sources, targets)]
    rows += [eye[I(j)] - eye[S(j)] for j in range(n)]
    labels += [f"infection_{j + 1}" for j in range(n)]
    rows += [eye[R(j)] - eye[I(j)] for j in range(n)]
    labels += [f"recovery_{j + 1}" for j in range(n)]
    jumps = np.vstack(rows)

    def propensity(y):
        s, i, r = np.split(np.asarray(y, dtype=float), 3)
        x = s + i + r
        with np.errstate(divide='ignore', invalid='ignore'):
            force = np.where(x > 0, model.beta * i * s / x, 0.0)
        deaths = np.concatenate([model.d * s, model.d * i, model.d * r])
        return np.concatenate(
            [model.B + model.b * x]
            + [deaths] * repeats
            + [theta_rates * s[sources], theta_rates * i[sources], theta_rates * r[sources]]
            + [force, model.gamma * i]
        )

    def jacobian(y):
        s, i, r = np.split(np.asarray(y, dtype=float), 3)
        x = s + i + r
        blocks = []
        inflow = np.zeros((n, 3 * n))
        for C in (S, I, R):
            inflow[np.arange(n), [C(j) for j in range(n)]] = model.b
        blocks.append(inflow)
        death = np.zeros((3 * n, 3 * n))
        death[np.arange(3 * n), np.arange(3 * n)] = np.tile(model.d, 3)
        blocks += [death] * repeats
        for C in (S, I, R):
            transfer = np.zeros((len(sources), 3 * n))
            transfer[np.arange(len(sources)), [C(j) for j in sources]] = theta_rates
            blocks.append(transfer)
        infection = np.zeros((n, 3 * n))
        with np.errstate(divide='ignore', invalid='ignore'):
            x2 = np.where(x > 0, x * x, np.inf)
            infection[np.arange(n), [S(j) for j in range(n)]] = model.beta * i * (i + r) / x2
            infection[np.arange(n), [I(j) for j in range(n)]] = model.beta * s * (s + r) / x2
            infection[np.arange(n), [R(j) for j in range(n)]] = -model.beta * i * s / x2
        blocks.append(infection)
        recovery = np.zeros((n, 3 * n))
        recovery[np.arange(n), [I(j) for j in range(n)]] = model.gamma
        blocks.append(recovery)
        return np.vstack(blocks)

    return JumpSpec(jumps, propensity, jacobian, tuple(labels))


def birth_death_jumps(up, down):
    """One-dimensional process with up-rate up(x) and down-rate down(x)."""
    def propensity(x):
        value = float(np.asarray(x).reshape(-1)[0])
        return np.array([up(value), down(value)], dtype=float)

    return JumpSpec(np.array([[1.0], [-1.0]]), propensity, labels=('up', 'down'))


def population_exit_cost(model, eps, T=20.0, m=64, restarts=4, rng=0, norm='inf',
                         u_max=DEFAULT_U_MAX, workers=None):
    """Upper bound on the cost of leaving the eps-ball around z* for the population process."""
    z_star = equilibrium_population(build_A(model), model.B)
    if not 0 < eps:
        raise ModelValidationError(f"eps must be positive, got {eps}")
    return minimize_action(population_jumps(model), z_star, BallExitTarget(tuple(z_star), eps, norm),
                           T, m=m, restarts=restarts, rng=rng, u_max=u_max, workers=workers)


def sir_exit_cost(model, report, eps, T=20.0, m=64, restarts=4, rng=0, norm='inf',
                  u_max=DEFAULT_U_MAX, workers=None, duplicate_death_block=False):
    """Upper bound on the cost of leaving the eps-ball around a stable endemic equilibrium."""
    if report.classification != 'stable-endemic':
        raise ModelValidationError(
            f"exit cost needs a stable endemic equilibrium, got {report.classification}"
        )
    if not 0 < eps:
        raise ModelValidationError(f"eps must be positive, got {eps}")
    start = report.point.as_vector()
    return minimize_action(sir_jumps(model, duplicate_death_block), start,
                           BallExitTarget(tuple(start), eps, norm),
                           T, m=m, restarts=restarts, rng=rng, u_max=u_max, workers=workers)
