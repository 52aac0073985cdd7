"""Choose the reward strength so the smoother has a prescribed per-sample DoF.

Solves ``dof(lam) = kappa * n`` on ``[0, (1 - eps) * bound]``. The DoF is
strictly increasing there, so the root is unique whenever it exists.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MaxItersError, TargetUnreachableError
from .smoother import _spectrum, dof, dof_derivative
from .spectral import DEFAULT_EPS

BELOW_RANGE = "target below achievable range"


@dataclass(frozen=True)
class DofTarget:
    """Per-sample DoF target ``kappa`` for a spectrum observed on ``n`` samples."""

    kappa: float
    n: int
    sigma: np.ndarray
    weights: Optional[np.ndarray] = None
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        s, w = _spectrum(self.sigma, self.weights)
        if s.size == 0:
            raise ValueError("spectrum has no modes above the cutoff")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "weights", w)

    @property
    def rank(self):
        return int(self.sigma.size)

    @property
    def raw_bound(self):
        """``min_j sigma_j / w_j`` over modes with positive weight."""
        pos = self.weights > 0
        if not np.any(pos):
            return float("inf")
        return float(np.min(self.sigma[pos] / self.weights[pos]))

    @property
    def upper(self):
        return (1.0 - self.eps) * self.raw_bound

    @property
    def target_dof(self):
        return self.kappa * self.n

    def g(self, lam):
        return dof(self.sigma, lam, self.weights) - self.target_dof

    def g_prime(self, lam):
        return dof_derivative(self.sigma, lam, self.weights)


@dataclass
class DofSolution:
    lam: float
    residual: float  # |dof(lam) / n - kappa|
    iterations: int
    trace: list = field(default_factory=list)  # (method, lam, g) per evaluation
    flag: str = ""

    def __iter__(self):
        return iter((self.lam, self.residual, self.iterations, self.trace))


def initial_guess(target):
    """First-order start ``(kappa n - r) / sum_j (w_j / sigma_j)``, clipped to the safe interval."""
    denom = float(np.sum(target.weights / target.sigma))
    lam0 = (target.target_dof - target.rank) / denom if denom > 0 else 0.0
    return float(min(max(lam0, 0.0), target.upper))


def _bisect(target, lo, hi, tol, max_iter, trace, log_scale, xtol=1e-13):
    g_lo, g_hi = target.g(lo), target.g(hi)
    it = 0
    while True:
        mid = np.sqrt(lo * hi) if log_scale and lo > 0 else 0.5 * (lo + hi)
        g_mid = target.g(mid)
        it += 1
        trace.append(("bisection", float(mid), float(g_mid)))
        if g_mid <= 0:
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
        assert g_lo <= 0 <= g_hi
        width = hi - lo
        if (abs(g_mid) / target.n <= tol and width <= xtol * max(hi, 1e-300)) or (
            width <= 4 * np.finfo(float).eps * max(hi, 1e-300)
        ):
            return float(mid), it
        if it >= max_iter:
            raise MaxItersError(f"bisection residual {abs(g_mid) / target.n:.3e} after {it} steps")


def solve_dof_target(target, tol=1e-10, max_iter=500, method="hybrid", log_scale=False):
    """Solve ``dof(lam) / n = kappa`` inside the clipped safe interval.

    Parameters
    ----------
    method : {"hybrid", "bisection", "newton"}
        ``hybrid`` runs damped Newton from :func:`initial_guess` and
        switches to bisection for good after the undamped step leaves the
        current bracket twice.
    log_scale : bool
        Search in ``log(lam)``: geometric bisection midpoints and Newton
        steps in ``u = log(lam)``.

    Returns
    -------
    DofSolution
        ``flag`` is set to ``BELOW_RANGE`` when ``kappa n <= r``, in which
        case ``lam = 0``.

    Raises
    ------
    TargetUnreachableError
        If the DoF at the clipped upper end is still below the target.
    MaxItersError
    """
    if method not in ("hybrid", "bisection", "newton"):
        raise ValueError(f"unknown method {method!r}")
    n = target.n
    if target.target_dof <= target.rank:
        res = abs(target.rank / n - target.kappa)
        return DofSolution(0.0, res, 0, [("clip", 0.0, float(target.g(0.0)))], BELOW_RANGE)
    hi = target.upper
    g_hi = target.g(hi) if np.isfinite(hi) else np.inf
    if g_hi < 0 and abs(g_hi) / n > tol:
        raise TargetUnreachableError(
            f"dof at the clipped bound {hi:.6g} is {g_hi + target.target_dof:.6g}, "
            f"below the target {target.target_dof:.6g}; loosen eps or reduce kappa"
        )
    if not np.isfinite(hi):
        # no positive weight: dof is constant at r, already handled above
        raise TargetUnreachableError("reward weights vanish; dof does not depend on lam")
    trace = []
    lo = 0.0

    if method == "bisection":
        lo_start = lo
        if log_scale:
            lo_start = hi * 1e-16
            if target.g(lo_start) > 0:
                lo_start = 0.0
        lam, it = _bisect(target, lo_start, hi, tol, max_iter, trace, log_scale)
        return DofSolution(lam, abs(target.g(lam)) / n, it, trace)

    lam = initial_guess(target)
    exits = 0
    for it in range(1, max_iter + 1):
        g = target.g(lam)
        trace.append(("newton", float(lam), float(g)))
        if abs(g) / n <= tol:
            # one more Newton step pins lam well below the residual tolerance
            polished = lam - g / target.g_prime(lam)
            if lo <= polished <= hi and abs(target.g(polished)) <= abs(g):
                lam, g = polished, target.g(polished)
            return DofSolution(float(lam), abs(g) / n, it - 1, trace)
        if g <= 0:
            lo = max(lo, lam)
        else:
            hi = min(hi, lam)
        gp = target.g_prime(lam)
        if log_scale and lam > 0:
            step_u = -g / (lam * gp)
            candidate = lambda eta: lam * np.exp(eta * step_u)  # noqa: E731
        else:
            step = -g / gp
            candidate = lambda eta: lam + eta * step  # noqa: E731
        eta = 1.0
        new = candidate(eta)
        if not lo <= new <= hi:
            exits += 1
            if method == "hybrid" and exits >= 2:
                bis, k = _bisect(target, lo, hi, tol, max_iter - it, trace, log_scale)
                return DofSolution(bis, abs(target.g(bis)) / n, it + k, trace)
            while not lo <= new <= hi:
                eta *= 0.5
                new = candidate(eta)
                if eta < 1e-30:
                    new = 0.5 * (lo + hi)
                    break
        if new == lam:
            return DofSolution(float(lam), abs(g) / n, it, trace)
        lam = new
    raise MaxItersError(f"Newton did not reach tolerance {tol:.1e} in {max_iter} iterations")
