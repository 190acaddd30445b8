"""
Spectral Analysis Module

Matrix-analytic quantities of the network model: the demographic matrix A,
subcriticality, the equilibrium population z*, the mean offspring matrix C,
R0, the early growth rate lambda1 and the population Lyapunov vector.
"""

import logging
from dataclasses import dataclass

import networkx as nx
import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from epinet.models.network import transfer_graph
from epinet.utils.errors import ModelValidationError, NumericalError

logger = logging.getLogger('epinet.analysis.spectral')

DENSE_LIMIT = 200
REFINE_TOL = 1e-12
BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class DemographyMatrix:
    """Generator of the mean scaled population: dz/dt = A z + B.

    A[i, i] = b_i - d_i - sum_j theta[i, j] and A[i, j] = theta[j, i].
    """

    A: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.A, dtype=dtype)


def as_matrix(A):
    if isinstance(A, DemographyMatrix):
        return A.A
    return np.atleast_2d(np.asarray(A, dtype=float))


def build_A(model):
    """
    Assemble the demographic matrix of a model.

    Args:
        model (NetworkModel): The model

    Returns:
        DemographyMatrix: Metzler matrix with A[i, j] = theta[j, i] off the diagonal
    """
    A = np.diag(model.b - model.d - model.theta_out) + model.theta.T
    A.setflags(write=False)
    return DemographyMatrix(A)


def spectral_abscissa(M):
    """Largest real part over the eigenvalues of a square matrix."""
    M = as_matrix(M)
    n = M.shape[0]
    try:
        if n <= DENSE_LIMIT:
            eigenvalues = scipy.linalg.eigvals(M)
        else:
            eigenvalues = scipy.sparse.linalg.eigs(
                scipy.sparse.csr_matrix(M), k=1, which='LR', return_eigenvectors=False
            )
    except (scipy.linalg.LinAlgError, scipy.sparse.linalg.ArpackNoConvergence) as e:
        logger.error(f"Eigenvalue solver failed on a {n}x{n} matrix: {e}")
        raise NumericalError(f"eigenvalue solver did not converge: {e}")
    return float(np.max(eigenvalues.real))


def check_subcritical(A):
    """
    Determine whether the population dynamics are subcritical.

    Args:
        A (DemographyMatrix or array): Demographic matrix

    Returns:
        tuple: (spectral_abscissa, subcritical); an abscissa of 0 counts as
            not subcritical
    """
    M = as_matrix(A)
    abscissa = spectral_abscissa(M)
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if abs(abscissa) <= BOUNDARY_TOL * scale:
        logger.warning(f"Spectral abscissa {abscissa:.3e} is on the stability boundary; "
                       f"treating the model as not subcritical")
        return abscissa, False
    return abscissa, abscissa < 0


def solve_refined(M, rhs):
    """
    Solve M x = rhs by LU with partial pivoting and iterative refinement.

    Raises:
        NumericalError: If M is numerically singular or refinement fails
    """
    M = as_matrix(M)
    rhs = np.asarray(rhs, dtype=float)
    lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.size and (diag.min() == 0 or diag.min() < np.finfo(float).eps * diag.max() * M.shape[0]):
        raise NumericalError(f"singular system (pivot ratio {diag.min() / max(diag.max(), 1e-300):.3e})")
    x = scipy.linalg.lu_solve((lu, piv), rhs)
    scale = max(float(np.max(np.abs(rhs))) if rhs.size else 0.0, 1e-300)
    for _ in range(10):
        residual = rhs - M @ x
        if np.max(np.abs(residual)) < REFINE_TOL * scale:
            break
        x = x + scipy.linalg.lu_solve((lu, piv), residual)
    if not np.all(np.isfinite(x)):
        raise NumericalError("linear solve produced non-finite values")
    return x


def equilibrium_population(A, B):
    """
    Equilibrium scaled population z* = -A^{-1} B.

    Args:
        A (DemographyMatrix or array): Demographic matrix
        B (array): Immigration rates

    Returns:
        numpy.ndarray: z*, solving A z + B = 0

    Raises:
        ModelValidationError: If the model is not subcritical
    """
    M = as_matrix(A)
    _, subcritical = check_subcritical(M)
    if not subcritical:
        raise ModelValidationError("equilibrium population requires a subcritical model")
    return -solve_refined(M, np.asarray(B, dtype=float))


def require_removal_reachable(model):
    """Every node must lead, through transfers, to a node where infectives are removed."""
    removing = set(np.flatnonzero(model.omega > 0).tolist())
    if not removing:
        raise ModelValidationError("every node has d + gamma = 0; infectives are never removed")
    graph = transfer_graph(model)
    reached = set(removing)
    for node in removing:
        reached |= nx.ancestors(graph, node)
    if len(reached) < model.n:
        stuck = sorted(set(range(model.n)) - reached)
        raise ModelValidationError(
            f"nodes {[k + 1 for k in stuck[:5]]} cannot reach a node with d + gamma > 0"
        )


def offspring_matrix(model):
    """
    Mean offspring matrix C = (diag(Sigma) - Theta)^{-1} diag(beta).

    C[i, j] is the expected number of infections caused in node j by one
    infective starting in node i.
    """
    require_removal_reachable(model)
    M = np.diag(model.sigma) - model.theta
    return solve_refined(M, np.diag(model.beta))


def expected_visits(model):
    """Fundamental matrix (I - T)^{-1} of the embedded jump chain of one infective."""
    require_removal_reachable(model)
    T = model.theta / model.sigma[:, None]
    return solve_refined(np.eye(model.n) - T, np.eye(model.n))


def offspring_matrix_absorbing(model):
    """C computed as beta_j times the expected time spent in node j."""
    visits = expected_visits(model)
    return visits * (model.beta / model.sigma)[None, :]


def r0(C, tol=1e-13, max_iter=10000):
    """
    Perron root of a nonnegative matrix.

    Power iteration on C + I with Collatz-Wielandt bracketing; falls back to a
    full eigensolve when the bracket does not close (reducible C).
    """
    C = as_matrix(C)
    if np.any(C < 0):
        raise ModelValidationError("offspring matrix must be entrywise nonnegative")
    if not np.any(C):
        return 0.0
    n = C.shape[0]
    shifted = C + np.eye(n)
    # v stays strictly positive: (C + I) v >= v
    v = np.full(n, 1.0 / n)
    for iteration in range(max_iter):
        w = shifted @ v
        ratios = w / v
        low, high = ratios.min(), ratios.max()
        if high - low <= tol * high:
            logger.debug(f"Power iteration converged in {iteration} steps")
            return float(0.5 * (low + high) - 1.0)
        w = w / w.sum()
        if np.max(np.abs(w - v)) < 1e-16:
            break
        v = w
    logger.debug("Power iteration did not converge; using a full eigensolve")
    return float(np.max(scipy.linalg.eigvals(C).real))


def growth_rate_lambda1(model):
    """Largest real eigenvalue of M = Theta + diag(beta - Sigma)."""
    M = model.theta + np.diag(model.beta - model.sigma)
    return spectral_abscissa(M)


def lyapunov_vector(A, B):
    """
    Lyapunov vector v = -(A^T)^{-1} B of the population process.

    Raises:
        ModelValidationError: If the model is not subcritical, B is zero, or
            the solution has a non-positive entry
    """
    M = as_matrix(A)
    B = np.asarray(B, dtype=float)
    if not np.any(B > 0):
        raise ModelValidationError("Lyapunov vector requires B != 0")
    _, subcritical = check_subcritical(M)
    if not subcritical:
        raise ModelValidationError("Lyapunov vector requires a subcritical model")
    v = -solve_refined(M.T, B)
    if np.any(v <= 0):
        raise ModelValidationError(
            "Lyapunov vector has a non-positive entry; check connectivity and subcriticality"
        )
    return v


def lyapunov_drift_constants(A, B, eta):
    """
    Constants of the linear drift bound of the population process.

    Returns (v, c, R) such that v.(A x + B) < -c (v.x + 1) for every
    nonnegative x with ||x||_1 > R.
    """
    B = np.asarray(B, dtype=float)
    if eta < 0:
        raise ModelValidationError(f"eta must be nonnegative, got {eta}")
    shifted = B + eta
    if np.min(shifted) <= 0:
        raise ModelValidationError("drift constants need min(B + eta) > 0")
    v = lyapunov_vector(A, shifted)
    c = float(shifted.min() / (2.0 * v.max()))
    R = float((1.0 + v @ B / c) / v.min())
    return v, c, R


@dataclass
class OutbreakAnalysis:
    """Bundle of analytic outbreak quantities for one model."""

    A: DemographyMatrix
    spectral_abscissa: float
    subcritical: bool
    z_star: np.ndarray
    C: np.ndarray
    R0: float
    lambda1: float
    q: np.ndarray
    p: np.ndarray
    p_I0: float
    iterations: int = 0
    gap: float = 0.0

    def to_dict(self):
        """Flat JSON-ready dictionary."""
        return {
            'A': self.A.A.tolist(),
            'spectral_abscissa': self.spectral_abscissa,
            'subcritical': bool(self.subcritical),
            'z_star': None if self.z_star is None else self.z_star.tolist(),
            'C': self.C.tolist(),
            'R0': self.R0,
            'lambda1': self.lambda1,
            'q': self.q.tolist(),
            'p': self.p.tolist(),
            'p_I0': self.p_I0,
            'iterations': self.iterations,
            'gap': self.gap,
        }
