"""Dense symmetric linear algebra used by every safety and DoF computation.

All functions are pure: they never modify their inputs and return fresh arrays.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import (
    DegenerateWError,
    NoConvergenceError,
    NonSymmetricError,
    SingularCapacitorError,
)

RANK_TOL = 1e-10
DEFAULT_EPS = 0.05


@dataclass(frozen=True)
class DesignMatrix:
    """An ``n x p`` design matrix with a provenance label.

    Construction rejects empty or non-finite inputs so downstream
    operations can assume ``n >= 1`` and ``p >= 1``.
    """

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"design matrix must be 2-D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("design matrix contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]


def as_design(X):
    """Return ``X`` as an ``(n, p)`` float array, accepting a :class:`DesignMatrix`."""
    if isinstance(X, DesignMatrix):
        return X.values
    return DesignMatrix(X).values


@dataclass(frozen=True)
class SpectrumView:
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.

    ``eigenvectors[:, j]`` pairs with ``eigenvalues[j]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank_tol: float = RANK_TOL

    @property
    def rank(self):
        """Number of eigenvalues above ``rank_tol * sigma_1``."""
        if self.eigenvalues.size == 0:
            return 0
        top = self.eigenvalues[0]
        if top <= 0:
            return 0
        return int(np.sum(self.eigenvalues > self.rank_tol * top))

    @property
    def sigma_max(self):
        return float(self.eigenvalues[0])

    @property
    def sigma_min(self):
        return float(self.eigenvalues[-1])

    def nonzero(self):
        """Eigenvalues counted in the rank, in descending order."""
        return self.eigenvalues[: self.rank]

    def reconstruct(self):
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T


@dataclass(frozen=True)
class SafetyBound:
    """Upper limit on the reward strength keeping ``Sigma - lam * W`` positive definite.

    ``raw`` is the exact infimum of the generalized Rayleigh quotient; the
    usable value is ``clipped = (1 - eps) * raw``.
    """

    raw: float
    eps: float = DEFAULT_EPS
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0 <= self.eps < 1:
            raise ValueError(f"slack eps must lie in [0, 1), got {self.eps}")

    @property
    def clipped(self):
        return (1.0 - self.eps) * self.raw

    def admits(self, lam):
        """True when ``lam`` is strictly inside the raw bound."""
        return lam < self.raw


def _check_symmetric(A, tol):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NonSymmetricError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    asym = float(np.max(np.abs(A - A.T))) if A.size else 0.0
    if asym > tol * scale:
        raise NonSymmetricError(f"matrix asymmetry {asym:.3e} exceeds tolerance {tol:.1e}")
    return 0.5 * (A + A.T)


def sample_covariance(X):
    """Uncentered sample covariance ``X^T X / n``, symmetrized."""
    X = as_design(X)
    C = X.T @ X / X.shape[0]
    return 0.5 * (C + C.T)


def sym_eigendecomposition(A, tol=1e-10, rank_tol=RANK_TOL):
    """Exact dense eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    A : array-like, shape (p, p)
        Symmetric input. Asymmetry above ``tol`` (relative to the largest
        entry, floored at 1) raises :class:`NonSymmetricError`.

    Returns
    -------
    SpectrumView
        Eigenvalues sorted in descending order.
    """
    A = _check_symmetric(A, tol)
    w, U = np.linalg.eigh(A)
    order = np.argsort(w, kind="stable")[::-1]
    return SpectrumView(w[order], U[:, order], rank_tol=rank_tol)


def _rayleigh(A, v):
    Av = A @ v
    q = float(v @ Av) / float(v @ v)
    res = float(np.linalg.norm(Av - q * v))
    # residuals at rounding level carry no information
    if res <= 8 * np.finfo(float).eps * max(1.0, abs(q)):
        res = 0.0
    return q, res


def _start_vector(p, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(p)
    return v / np.linalg.norm(v)


def extreme_eigs_estimate(A, iterations=10000, tolerance=1e-10, seed=0):
    """Iterative estimates of the largest and smallest eigenvalue of a PSD matrix.

    The largest eigenvalue uses power iteration. The smallest uses inverse
    iteration with a shift below the spectrum, so it converges to the bottom
    eigenpair; the returned value is the Rayleigh quotient minus the residual
    norm, which never overshoots the true minimum once the iterate is aligned.

    Returns
    -------
    (sigma_max, sigma_min) : tuple of float

    Raises
    ------
    NoConvergenceError
        When either residual is still above ``tolerance`` after
        ``iterations`` steps.
    """
    A = _check_symmetric(A, 1e-10)
    p = A.shape[0]
    if p == 1:
        val = float(A[0, 0])
        return val, val
    scale = max(1.0, float(np.max(np.abs(A))))

    v = _start_vector(p, seed)
    for _ in range(iterations):
        w = A @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            # A == 0 on the Krylov space; zero is an eigenvalue
            q_max, res = 0.0, 0.0
            break
        v = w / nrm
        q_max, res = _rayleigh(A, v)
        if res <= tolerance:
            break
    else:
        raise NoConvergenceError(f"power iteration residual {res:.2e} above {tolerance:.1e}")
    sigma_max = q_max + res

    # shift strictly below the spectrum so the nearest eigenvalue is the minimum
    delta = 1e-12 * scale
    try:
        factor = linalg.cho_factor(A + delta * np.eye(p), check_finite=False)
        solve = lambda b: linalg.cho_solve(factor, b, check_finite=False)  # noqa: E731
    except linalg.LinAlgError:
        gersh = float(np.min(np.diag(A) - (np.sum(np.abs(A), axis=1) - np.abs(np.diag(A)))))
        lu = linalg.lu_factor(A - (gersh - delta) * np.eye(p), check_finite=False)
        solve = lambda b: linalg.lu_solve(lu, b, check_finite=False)  # noqa: E731

    v = _start_vector(p, seed + 1)
    for _ in range(iterations):
        w = solve(v)
        v = w / np.linalg.norm(w)
        q_min, res = _rayleigh(A, v)
        if res <= tolerance:
            break
    else:
        raise NoConvergenceError(f"inverse iteration residual {res:.2e} above {tolerance:.1e}")
    sigma_min = q_min - res
    return float(sigma_max), float(sigma_min)


def _is_pd(M):
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def safe_lambda_max(Sigma, W=None, eps=DEFAULT_EPS):
    """Largest reward strength for which ``Sigma - lam * W`` stays positive definite.

    The raw bound is ``inf_v (v' Sigma v) / (v' W v)``; with ``W = I`` it is
    ``sigma_min(Sigma)``.

    Raises
    ------
    DegenerateWError
        If ``W`` is identically zero (every ``lam`` is safe).
    """
    Sigma = _check_symmetric(Sigma, 1e-10)
    p = Sigma.shape[0]
    if W is None:
        raw = float(np.linalg.eigvalsh(Sigma)[0])
        return SafetyBound(raw, eps, {"method": "sigma_min"})
    W = _check_symmetric(W, 1e-10)
    if W.shape != Sigma.shape:
        raise ValueError(f"W has shape {W.shape}, expected {Sigma.shape}")
    if not np.any(W):
        raise DegenerateWError("W is identically zero; the safety bound is +inf")

    if _is_pd(W):
        raw = float(linalg.eigh(Sigma, W, eigvals_only=True)[0])
        return SafetyBound(raw, eps, {"method": "generalized_W_pd"})
    if _is_pd(Sigma):
        rho_max = float(linalg.eigh(W, Sigma, eigvals_only=True)[-1])
        if rho_max <= 0:
            raise DegenerateWError("W has no positive direction; the safety bound is +inf")
        return SafetyBound(1.0 / rho_max, eps, {"method": "generalized_sigma_pd"})

    # both singular: any W-mass on null(Sigma) forces the bound to zero,
    # otherwise PSD structure lets us restrict to range(Sigma)
    spec = sym_eigendecomposition(Sigma)
    r = spec.rank
    U_range, U_null = spec.eigenvectors[:, :r], spec.eigenvectors[:, r:]
    if U_null.shape[1] and np.max(np.abs(U_null.T @ W @ U_null)) > 1e-12 * np.max(np.abs(W)):
        return SafetyBound(0.0, eps, {"method": "null_space"})
    if r == 0:
        raise DegenerateWError("Sigma is zero and W has no mass; bound undefined")
    S_r = np.diag(spec.eigenvalues[:r])
    W_r = U_range.T @ W @ U_range
    rho_max = float(linalg.eigh(0.5 * (W_r + W_r.T), S_r, eigvals_only=True)[-1])
    if rho_max <= 0:
        raise DegenerateWError("W has no positive direction; the safety bound is +inf")
    del p
    return SafetyBound(1.0 / rho_max, eps, {"method": "range_restricted"})


def smw_update(A_inv, U, C, V):
    """Sherman-Morrison-Woodbury: ``(A + U C V)^-1`` from a known ``A^-1``.

    Raises
    ------
    SingularCapacitorError
        If ``C`` or the capacitance ``C^-1 + V A^-1 U`` is numerically singular.
    """
    A_inv = np.asarray(A_inv, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.shape[0] != A_inv.shape[0] and U.shape[1] == A_inv.shape[0]:
        U = U.T
    try:
        C_inv = np.linalg.inv(C)
    except np.linalg.LinAlgError as exc:
        raise SingularCapacitorError("C is singular") from exc
    AU = A_inv @ U
    VA = V @ A_inv
    cap = C_inv + V @ AU
    if np.linalg.cond(cap) > 1.0 / np.finfo(float).eps:
        raise SingularCapacitorError("capacitance matrix C^-1 + V A^-1 U is singular")
    return A_inv - AU @ np.linalg.solve(cap, VA)
