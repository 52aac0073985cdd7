"""Run-level safety diagnostics, calibration error, stability bound and paired statistics."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from .errors import AllZeroError, DegenerateCurvatureError, ZeroBaselineError

EXACT_WILCOXON_MAX = 25


@dataclass
class RunDiagnostics:
    """Safety record of one training run.

    ``rho`` stays ``nan`` until a matched baseline run is available; the
    harness fills it in from the stored final-epoch output norms.
    """

    rho: float = float("nan")
    r_clip: float = 0.0
    r_proj: float = 0.0
    epochs: int = 0
    runtime_s: float = 0.0
    final_lambda: float = 0.0
    mu_eff_trace: list = field(default_factory=list)
    diverged: bool = False
    z_norm: float = float("nan")  # ||Z||_F of final validation outputs
    max_norm_excess: float = float("-inf")  # max over epochs/layers of ||W_l|| - B_l
    message: str = ""

    def __post_init__(self):
        for name in ("r_clip", "r_proj"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class PairedSample:
    """Seed-matched treatment/baseline values for one metric."""

    metric: str
    treatment: np.ndarray
    baseline: np.ndarray
    seeds: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.treatment, dtype=float).ravel()
        b = np.asarray(self.baseline, dtype=float).ravel()
        if t.shape != b.shape:
            raise ValueError(f"treatment has {t.size} values, baseline {b.size}")
        seeds = tuple(self.seeds) if len(self.seeds) else tuple(range(t.size))
        if len(seeds) != t.size or len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct and match the value count")
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "baseline", b)
        object.__setattr__(self, "seeds", seeds)

    @classmethod
    def from_differences(cls, d, metric="diff"):
        d = np.asarray(d, dtype=float)
        return cls(metric, d, np.zeros_like(d))

    @property
    def differences(self):
        return self.treatment - self.baseline

    def __len__(self):
        return self.treatment.size


def output_scale_ratio(Z_ar, Z_base):
    """``||Z_ar||_F / ||Z_base||_F``."""
    Z_ar = np.asarray(Z_ar, dtype=float)
    Z_base = np.asarray(Z_base, dtype=float)
    if Z_ar.shape != Z_base.shape:
        raise ValueError(f"shapes differ: {Z_ar.shape} vs {Z_base.shape}")
    denom = np.linalg.norm(Z_base)
    if denom == 0:
        raise ZeroBaselineError("baseline outputs have zero Frobenius norm")
    return float(np.linalg.norm(Z_ar) / denom)


def clip_and_proj_rates(clip_flags, proj_flags):
    """Fractions of minibatches where clipping / projection actually fired."""
    c = np.asarray(clip_flags, dtype=bool)
    p = np.asarray(proj_flags, dtype=bool)
    if c.size == 0 or p.size == 0:
        raise ValueError("need at least one minibatch")
    return float(c.mean()), float(p.mean())


def ece(confidences, predicted, labels, n_bins=15):
    """Expected calibration error over equal-width confidence bins.

    Bin ``b`` covers ``(b/B, (b+1)/B]``; confidence 0 falls in the first bin.
    """
    conf = np.asarray(confidences, dtype=float).ravel()
    pred = np.asarray(predicted).ravel()
    true = np.asarray(labels).ravel()
    if not (conf.size == pred.size == true.size):
        raise ValueError("inputs must have equal length")
    if conf.size == 0:
        return 0.0
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidences must lie in [0, 1]")
    correct = (pred == true).astype(float)
    bins = np.clip(np.ceil(conf * n_bins).astype(int) - 1, 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        mask = bins == b
        if np.any(mask):
            total += mask.mean() * abs(correct[mask].mean() - conf[mask].mean())
    return float(total)


def stability_bound(L_loss, G, n, mu, alpha_R, lam):
    """Uniform-stability bound ``2 L G / (n (mu - lam alpha_R))``."""
    mu_eff = mu - lam * alpha_R
    if mu_eff <= 0:
        raise DegenerateCurvatureError(f"effective curvature {mu_eff:.3e} is not positive")
    return 2.0 * L_loss * G / (n * mu_eff)


@dataclass(frozen=True)
class StatResult:
    statistic: float
    p_value: float
    degenerate: bool = False
    method: str = ""


def paired_t_test(sample):
    """Two-sided paired t-test on ``treatment - baseline``.

    When every difference is identical the statistic is undefined; the
    result then carries ``p = 1`` and ``degenerate = True``.
    """
    d = sample.differences
    if d.size < 2:
        raise ValueError("paired t-test needs at least two pairs")
    if np.all(d == d[0]):
        return StatResult(float("nan"), 1.0, True, "paired-t")
    n = d.size
    se = d.std(ddof=1) / np.sqrt(n)
    t = d.mean() / se
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return StatResult(float(t), float(min(1.0, p)), False, "paired-t")


def _signed_ranks(d):
    d = d[d != 0]
    if d.size == 0:
        raise AllZeroError("all paired differences are zero")
    ranks = stats.rankdata(np.abs(d))
    return ranks, d > 0


@lru_cache(maxsize=None)
def _rank_sum_distribution(doubled):
    """Counts of every achievable doubled rank sum over the 2^n sign patterns."""
    total = sum(doubled)
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_exact_p(ranks, positive):
    """Two-sided exact p from the permutation distribution of ``W+``.

    Works on doubled mid-ranks so tied ranks stay integral.
    """
    doubled = tuple(int(round(2 * r)) for r in ranks)
    counts = _rank_sum_distribution(tuple(sorted(doubled)))
    w = int(round(2 * np.sum(ranks[positive])))
    total = sum(doubled)
    n_patterns = 2 ** len(doubled)
    lower = int(sum(counts[: w + 1]))
    upper = int(sum(counts[w:]))
    p = 2.0 * min(lower, upper) / n_patterns
    return min(1.0, p), w / 2.0, total / 2.0


def wilcoxon_signed_rank(sample, exact_max=EXACT_WILCOXON_MAX):
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zero differences are dropped and ties receive mid-ranks. With at most
    ``exact_max`` nonzero pairs the p value enumerates the sign-flip
    distribution exactly; above that a tie-corrected normal approximation
    with continuity correction is used.
    """
    d = sample.differences if isinstance(sample, PairedSample) else np.asarray(sample, float)
    ranks, positive = _signed_ranks(d)
    n = ranks.size
    if n <= exact_max:
        p, w_plus, _ = wilcoxon_exact_p(ranks, positive)
        return StatResult(w_plus, p, False, "wilcoxon-exact")
    w_plus = float(np.sum(ranks[positive]))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if var <= 0:
        return StatResult(w_plus, 1.0, True, "wilcoxon-normal")
    z = (abs(w_plus - mean) - 0.5) / np.sqrt(var)
    p = 2.0 * stats.norm.sf(max(z, 0.0))
    return StatResult(w_plus, float(min(1.0, p)), False, "wilcoxon-normal")


def holm_bonferroni(p_values):
    """Holm step-down adjusted p values, returned in the input order."""
    p = np.asarray(p_values, dtype=float).ravel()
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.maximum.accumulate(adjusted)
    out = np.empty(m)
    out[order] = adjusted
    return out


@dataclass(frozen=True)
class Interval:
    mean: float
    se: float
    lower: float
    upper: float

    def __iter__(self):
        return iter((self.mean, self.se, self.lower, self.upper))


def ci95(values):
    """Mean, standard error and t-based 95% confidence interval."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise ValueError("ci95 needs at least two values")
    mean = float(v.mean())
    se = float(v.std(ddof=1) / np.sqrt(v.size))
    half = float(stats.t.ppf(0.975, df=v.size - 1)) * se
    return Interval(mean, se, mean - half, mean + half)
