"""Anti-regularized least squares.

The objective is

    F(theta) = (1/n) sum_i 0.5 (y_i - x_i' theta)^2 - (lam/2) theta' W theta

with Hessian ``Sigma - lam W``. Everything here is a pure function of a
frozen :class:`RegressionProblem`.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import MaxItersError, StepTooLargeError, UnsafeLambdaError
from .spectral import (
    SafetyBound,
    as_design,
    safe_lambda_max,
    sample_covariance,
    sym_eigendecomposition,
)

COND_LIMIT = 1e12


@dataclass(frozen=True)
class RegressionProblem:
    """Design, response, reward strength and optional reward weight matrix."""

    X: np.ndarray
    y: np.ndarray
    lam: float = 0.0
    W: Optional[np.ndarray] = None

    def __post_init__(self):
        X = as_design(self.X)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"y has length {y.shape[0]}, expected n = {X.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite entries")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "lam", float(self.lam))
        if self.W is not None:
            W = np.asarray(self.W, dtype=float)
            if W.shape != (X.shape[1], X.shape[1]):
                raise ValueError(f"W has shape {W.shape}, expected ({X.shape[1]}, {X.shape[1]})")
            object.__setattr__(self, "W", W)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def weight(self):
        """The reward weight matrix, identity when absent."""
        return np.eye(self.p) if self.W is None else self.W

    def covariance(self):
        return sample_covariance(self.X)

    def hessian(self):
        return hessian(self.covariance(), self.lam, self.W)

    def with_lambda(self, lam):
        return RegressionProblem(self.X, self.y, lam, self.W)


@dataclass(frozen=True)
class GDCertificate:
    """Step-size certificate for gradient descent on a strongly convex quadratic."""

    L: float
    mu: float

    @property
    def kappa(self):
        return self.L / self.mu

    @property
    def eta_star(self):
        return 2.0 / (self.L + self.mu)

    @property
    def rho_star(self):
        k = self.kappa
        return (k - 1.0) / (k + 1.0)

    @property
    def eta_max(self):
        """Supremum of stable fixed step sizes, ``2 / L``."""
        return 2.0 / self.L


def hessian(Sigma, lam, W=None):
    Sigma = np.asarray(Sigma, dtype=float)
    if W is None:
        H = Sigma - lam * np.eye(Sigma.shape[0])
    else:
        H = Sigma - lam * np.asarray(W, dtype=float)
    return 0.5 * (H + H.T)


def hessian_min_eig(Sigma, lam, W=None):
    """Smallest eigenvalue of ``Sigma - lam W``; positive iff strongly convex."""
    return float(np.linalg.eigvalsh(hessian(Sigma, lam, W))[0])


def _bound_for(problem):
    try:
        return safe_lambda_max(problem.covariance(), problem.W)
    except Exception:  # noqa: BLE001 - the bound is informational here
        return None


def _raise_unsafe(problem, mu):
    bound = _bound_for(problem)
    raw = bound.raw if isinstance(bound, SafetyBound) else float("nan")
    raise UnsafeLambdaError(
        f"lam = {problem.lam:.6g} is outside the safe region "
        f"(Hessian min eigenvalue {mu:.3e}, raw bound {raw:.6g})",
        bound=bound,
        lam=problem.lam,
    )


def closed_form_solve(problem):
    """Unique minimizer ``(X'X - n lam W)^-1 X'y``.

    A Cholesky factorization is tried first. If the system is close to
    singular (condition number above 1e12) the solve goes through the
    eigendecomposition instead, which handles tiny ``sigma_j - lam`` gaps
    without pivoting noise.

    Raises
    ------
    UnsafeLambdaError
        If ``Sigma - lam W`` is not positive definite.
    """
    X, y, n = problem.X, problem.y, problem.n
    H = problem.hessian()
    spec = sym_eigendecomposition(H)
    mu = spec.sigma_min
    if mu <= 0:
        _raise_unsafe(problem, mu)
    A = n * H
    b = X.T @ y
    if spec.sigma_max / mu <= COND_LIMIT:
        try:
            return linalg.cho_solve(linalg.cho_factor(A), b)
        except linalg.LinAlgError:
            pass
    U, s = spec.eigenvectors, n * spec.eigenvalues
    return U @ ((U.T @ b) / s)


def objective(problem, theta):
    r = problem.y - problem.X @ theta
    reward = theta @ (problem.weight @ theta)
    return 0.5 * float(r @ r) / problem.n - 0.5 * problem.lam * float(reward)


def objective_and_gradient(problem, theta):
    """Objective value and gradient ``Sigma theta - X'y/n - lam W theta``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    X, n = problem.X, problem.n
    r = problem.y - X @ theta
    Wt = theta if problem.W is None else problem.W @ theta
    value = 0.5 * float(r @ r) / n - 0.5 * problem.lam * float(theta @ Wt)
    grad = -(X.T @ r) / n - problem.lam * Wt
    return value, grad


def gd_certificate(Sigma, lam, W=None):
    """Exact ``L``, ``mu`` of the Hessian and the derived optimal step.

    Raises
    ------
    UnsafeLambdaError
        If the Hessian is not positive definite.
    """
    ev = np.linalg.eigvalsh(hessian(Sigma, lam, W))
    mu, L = float(ev[0]), float(ev[-1])
    if mu <= 0:
        bound = None
        try:
            bound = safe_lambda_max(Sigma, W)
        except Exception:  # noqa: BLE001
            pass
        raise UnsafeLambdaError(
            f"lam = {lam:.6g} gives Hessian min eigenvalue {mu:.3e} <= 0", bound=bound, lam=lam
        )
    return GDCertificate(L, mu)


@dataclass
class GDResult:
    theta: np.ndarray
    iterations: int
    errors: np.ndarray
    objectives: np.ndarray
    certificate: GDCertificate


def gd_solve(problem, eta=None, max_iter=100000, tol=1e-10, theta0=None):
    """Full-batch gradient descent, traced against the closed-form optimum.

    Parameters
    ----------
    eta : float, optional
        Step size; defaults to ``1 / L``. Must satisfy ``0 < eta < 2 / L``.
    tol : float
        Stop when ``||theta - theta_closed|| <= tol``.

    Returns
    -------
    GDResult
        ``errors[k]`` is the distance to the optimum after ``k`` steps, so
        ``errors[0]`` is the starting error.
    """
    cert = gd_certificate(problem.covariance(), problem.lam, problem.W)
    if eta is None:
        eta = 1.0 / cert.L
    if not 0 < eta < cert.eta_max:
        raise StepTooLargeError(f"step {eta:.6g} outside (0, 2/L = {cert.eta_max:.6g})")
    theta_star = closed_form_solve(problem)
    theta = np.zeros(problem.p) if theta0 is None else np.array(theta0, dtype=float)

    errors = [float(np.linalg.norm(theta - theta_star))]
    value, grad = objective_and_gradient(problem, theta)
    objectives = [value]
    it = 0
    while errors[-1] > tol:
        if it >= max_iter:
            raise MaxItersError(
                f"gradient descent stopped at error {errors[-1]:.3e} after {max_iter} iterations"
            )
        theta = theta - eta * grad
        it += 1
        value, grad = objective_and_gradient(problem, theta)
        errors.append(float(np.linalg.norm(theta - theta_star)))
        objectives.append(value)
    return GDResult(theta, it, np.array(errors), np.array(objectives), cert)


def contraction_bound(problem, eta):
    """Worst per-step error contraction ``max_j |1 - eta h_j|``."""
    ev = np.linalg.eigvalsh(problem.hessian())
    return float(np.max(np.abs(1.0 - eta * ev)))


def min_eigvector(Sigma):
    """Unit eigenvector for the smallest eigenvalue of ``Sigma``.

    Ties are broken toward the lowest index returned by ``eigh`` and the
    sign is fixed so the largest-magnitude entry is positive.
    """
    _, U = np.linalg.eigh(np.asarray(Sigma, dtype=float))
    u = U[:, 0]
    k = int(np.argmax(np.abs(u)))
    return u if u[k] >= 0 else -u


def divergence_probe(problem, scales, direction=None):
    """Objective values along the ray ``t * u`` for each ``t`` in ``scales``.

    ``u`` defaults to the bottom eigenvector of the sample covariance. When
    ``lam`` exceeds that eigenvalue the quadratic coefficient along the ray
    is negative and the values eventually fall without bound.
    """
    u = min_eigvector(problem.covariance()) if direction is None else np.asarray(direction, float)
    return np.array([objective(problem, t * u) for t in np.asarray(scales, dtype=float)])
