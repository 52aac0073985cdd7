"""Linear smoother, degrees of freedom and risk identities for the AR solution."""

from dataclasses import dataclass

import numpy as np

from .errors import UnsafeLambdaError
from .regression import RegressionProblem, closed_form_solve, hessian
from .spectral import RANK_TOL, as_design, safe_lambda_max, sample_covariance


def _spectrum(sigma, weights=None, cutoff=RANK_TOL):
    """Drop modes below ``cutoff * sigma_1`` and align weights."""
    s = np.asarray(sigma, dtype=float).ravel()
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != s.shape:
        raise ValueError(f"{w.size} weights for {s.size} eigenvalues")
    if s.size == 0:
        return s, w
    keep = s > cutoff * np.max(s)
    return s[keep], w[keep]


def _gaps(s, w, lam):
    gap = s - lam * w
    if np.any(gap <= 0):
        j = int(np.argmin(gap))
        raise UnsafeLambdaError(
            f"lam = {lam:.6g} reaches mode {j}: sigma = {s[j]:.6g}, w = {w[j]:.6g}", lam=lam
        )
    return gap


def dof(sigma, lam, weights=None):
    """Effective degrees of freedom ``sum_j sigma_j / (sigma_j - lam w_j)``."""
    s, w = _spectrum(sigma, weights)
    return float(np.sum(s / _gaps(s, w, lam)))


def dof_derivative(sigma, lam, weights=None):
    """``d dof / d lam = sum_j sigma_j w_j / (sigma_j - lam w_j)^2``."""
    s, w = _spectrum(sigma, weights)
    gap = _gaps(s, w, lam)
    return float(np.sum(s * w / gap**2))


def variance_trace(sigma, lam, weights=None):
    """``tr(S^2) = sum_j sigma_j^2 / (sigma_j - lam w_j)^2``."""
    s, w = _spectrum(sigma, weights)
    gap = _gaps(s, w, lam)
    return float(np.sum((s / gap) ** 2))


def whitened_weights(Sigma, W):
    """Eigenvalues of ``A = Sigma^-1/2 W Sigma^-1/2``.

    With these, ``dof = sum_j 1 / (1 - lam a_j)`` for any PSD ``W``, even
    when ``Sigma`` and ``W`` do not commute. Requires ``Sigma`` positive
    definite.
    """
    ev, U = np.linalg.eigh(np.asarray(Sigma, dtype=float))
    if ev[0] <= RANK_TOL * ev[-1]:
        raise ValueError("whitened form needs a positive definite covariance")
    R = (U / np.sqrt(ev)) @ U.T
    A = R @ np.asarray(W, dtype=float) @ R
    return np.linalg.eigvalsh(0.5 * (A + A.T))


def whitened_dof(Sigma, W, lam):
    a = whitened_weights(Sigma, W)
    gap = 1.0 - lam * a
    if np.any(gap <= 0):
        raise UnsafeLambdaError(f"lam = {lam:.6g} leaves the safe region", lam=lam)
    return float(np.sum(1.0 / gap))


def smoother_matrix(X, lam, W=None):
    """``S = (1/n) X (Sigma - lam W)^-1 X'`` mapping responses to fitted values."""
    X = as_design(X)
    n = X.shape[0]
    H = hessian(sample_covariance(X), lam, W)
    ev, U = np.linalg.eigh(H)
    if ev[0] <= 0:
        bound = safe_lambda_max(sample_covariance(X), W)
        raise UnsafeLambdaError(
            f"lam = {lam:.6g} exceeds the safety bound {bound.raw:.6g}", bound=bound, lam=lam
        )
    XU = X @ U
    S = (XU / ev) @ XU.T / n
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class NoiseModel:
    """Additive noise with known variance, either shared or per sample."""

    tau2: object = 1.0

    def __post_init__(self):
        t = np.asarray(self.tau2, dtype=float)
        if np.any(t <= 0) or not np.all(np.isfinite(t)):
            raise ValueError("noise variances must be positive and finite")
        object.__setattr__(self, "tau2", float(t) if t.ndim == 0 else t.copy())

    @property
    def kind(self):
        return "homoskedastic" if np.ndim(self.tau2) == 0 else "heteroskedastic"

    def variances(self, n):
        if self.kind == "homoskedastic":
            return np.full(n, self.tau2)
        if self.tau2.shape[0] != n:
            raise ValueError(f"noise model has {self.tau2.shape[0]} variances, need {n}")
        return self.tau2

    def mean_variance(self, n):
        return float(np.mean(self.variances(n)))


def optimism_gap(noise, n, S):
    """Expected train-to-test gap ``(2/n) sum_i tau_i^2 S_ii``.

    For homoskedastic noise this is ``2 tau^2 tr(S) / n``.
    """
    S = np.asarray(S, dtype=float)
    if noise.kind == "homoskedastic":
        return 2.0 * noise.tau2 * float(np.trace(S)) / n
    return 2.0 * float(np.sum(noise.variances(n) * np.diag(S))) / n


@dataclass(frozen=True)
class SmootherReport:
    dof: float
    dof_derivative: float
    variance_trace: float
    optimism_gap: float
    safe: bool
    safe_bound: float
    n: int


def smoother_report(X, lam, noise=None, W=None):
    """Trace summaries of the smoother for design ``X`` at strength ``lam``.

    Outside the safe region every trace is ``nan`` and ``safe`` is False.
    """
    X = as_design(X)
    n = X.shape[0]
    noise = NoiseModel(1.0) if noise is None else noise
    Sigma = sample_covariance(X)
    bound = safe_lambda_max(Sigma, W)
    if not bound.admits(lam) or bound.raw <= 0:
        nan = float("nan")
        return SmootherReport(nan, nan, nan, nan, False, bound.raw, n)
    if W is None:
        sigma = np.linalg.eigvalsh(Sigma)[::-1]
        weights = None
    else:
        sigma = np.ones(X.shape[1])
        weights = whitened_weights(Sigma, W)
    d = dof(sigma, lam, weights)
    gap = optimism_gap(noise, n, smoother_matrix(X, lam, W))
    return SmootherReport(
        dof=d,
        dof_derivative=dof_derivative(sigma, lam, weights),
        variance_trace=variance_trace(sigma, lam, weights),
        optimism_gap=gap,
        safe=True,
        safe_bound=bound.raw,
        n=n,
    )


@dataclass(frozen=True)
class OptimismResult:
    """Monte-Carlo check of ``E[R] = E[R_train] + gap``.

    ``test_risk`` is the excess risk ``||f - f_hat||^2 / n`` under a fresh
    noise draw, ``train_proxy`` is ``||y - f_hat||^2 / n - tau^2``. The
    second-order term ``tau^2 tr(S^2) / n`` is reported separately.
    """

    mean_test: float
    mean_train: float
    gap: float
    discrepancy: float
    standard_error: float
    residual_term: float
    draws: int

    @property
    def z_score(self):
        if self.standard_error == 0:
            return 0.0 if self.discrepancy == 0 else float("inf")
        return self.discrepancy / self.standard_error


def optimism_monte_carlo(X, f, lam, tau, draws=2000, seed=0, W=None):
    """Simulate the optimism identity on a fixed design.

    Parameters
    ----------
    X : array, shape (n, p)
    f : array, shape (n,)
        Noise-free regression function on the design points.
    tau : float
        Noise standard deviation.
    """
    X = as_design(X)
    n = X.shape[0]
    f = np.asarray(f, dtype=float)
    S = smoother_matrix(X, lam, W)
    tau2 = float(tau) ** 2
    rng = np.random.default_rng(seed)
    eps = tau * rng.standard_normal((draws, n))
    Y = f + eps
    F_hat = Y @ S.T
    test = np.sum((F_hat - f) ** 2, axis=1) / n
    train = np.sum((Y - F_hat) ** 2, axis=1) / n - tau2
    gap = optimism_gap(NoiseModel(tau2), n, S)
    diff = test - train - gap
    return OptimismResult(
        mean_test=float(test.mean()),
        mean_train=float(train.mean()),
        gap=gap,
        discrepancy=float(diff.mean()),
        standard_error=float(diff.std(ddof=1) / np.sqrt(draws)),
        residual_term=tau2 * float(np.sum(S * S)) / n,
        draws=draws,
    )


def underfit_improvement_check(delta_train, delta_trace, tau2, n):
    """True iff the train-risk drop beats the optimism increase strictly."""
    if delta_train < 0 or delta_trace < 0:
        raise ValueError("both changes must be non-negative")
    return bool(delta_train > 2.0 * tau2 * delta_trace / n)


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric PSD Gram matrix with its origin (``explicit`` or ``empirical_ntk``)."""

    K: np.ndarray
    source: str = "explicit"

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"kernel must be square, got {K.shape}")
        scale = max(1.0, float(np.max(np.abs(K))))
        if np.max(np.abs(K - K.T)) > 1e-10 * scale:
            raise ValueError("kernel matrix is not symmetric")
        K = 0.5 * (K + K.T)
        ev = np.linalg.eigvalsh(K)
        if ev[0] < -1e-10 * max(abs(ev[-1]), 1.0):
            raise ValueError(f"kernel matrix is not PSD (min eigenvalue {ev[0]:.3e})")
        object.__setattr__(self, "K", K)

    @property
    def sigma_min(self):
        return float(np.linalg.eigvalsh(self.K)[0])


def kernel_ar_solve(kernel, y, lam):
    """Fitted values ``(K - lam I)^-1 y``; requires ``lam < sigma_min(K)``."""
    K = kernel.K if isinstance(kernel, KernelMatrix) else KernelMatrix(kernel).K
    ev, U = np.linalg.eigh(K)
    if lam >= ev[0]:
        raise UnsafeLambdaError(
            f"lam = {lam:.6g} is not below sigma_min(K) = {ev[0]:.6g}", lam=lam
        )
    y = np.asarray(y, dtype=float)
    return U @ ((U.T @ y) / (ev - lam))


def empirical_ntk(net, X):
    """Gram matrix of per-example parameter gradients, summed over outputs."""
    J = net.jacobian(X)
    K = np.einsum("iko,jko->ij", J, J)
    return KernelMatrix(0.5 * (K + K.T), source="empirical_ntk")


def fit_predictions(X, y, lam, W=None):
    """``X theta_hat`` from the closed form; used to cross-check ``S y``."""
    theta = closed_form_solve(RegressionProblem(X, y, lam, W))
    return as_design(X) @ theta

