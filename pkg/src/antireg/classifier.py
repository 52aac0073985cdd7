"""Losses, margin rewards and safeguards for anti-regularized network training."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

MARGIN_KINDS = ("capped_hinge", "saturated_exp", "sigmoid")


def cross_entropy(logits, label):
    """``-log softmax(logits)[label]`` via a shifted log-sum-exp."""
    z = np.asarray(logits, dtype=float)
    return float(logsumexp(z) - z[label])


def softmax(Z):
    Z = np.asarray(Z, dtype=float)
    e = np.exp(Z - Z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_batch(Z, y):
    """Mean cross-entropy over rows and its gradient with respect to ``Z``."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=int)
    n = Z.shape[0]
    lse = logsumexp(Z, axis=1)
    value = float(np.mean(lse - Z[np.arange(n), y]))
    dZ = softmax(Z)
    dZ[np.arange(n), y] -= 1.0
    return value, dZ / n


def _runner_up(Z, y):
    masked = np.array(Z, dtype=float, copy=True)
    masked[np.arange(Z.shape[0]), y] = -np.inf
    return np.argmax(masked, axis=1)


def margin(logits, label):
    """Correct-class logit minus the largest competing logit."""
    z = np.asarray(logits, dtype=float)
    if z.size < 2:
        raise ValueError("margin needs at least two classes")
    others = np.delete(z, label)
    return float(z[label] - np.max(others))


def margins(Z, y):
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=int)
    j = _runner_up(Z, y)
    idx = np.arange(Z.shape[0])
    return Z[idx, y] - Z[idx, j]


@dataclass(frozen=True)
class MarginRewardSpec:
    """Bounded, Lipschitz reward of the classification margin.

    ``capped_hinge`` is ``min(max(m, 0), phi_max)``; ``saturated_exp`` is
    ``phi_max (1 - exp(-m / gamma))_+``; ``sigmoid`` is ``phi_max sigmoid(m / gamma)``.
    """

    kind: str = "capped_hinge"
    phi_max: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in MARGIN_KINDS:
            raise ValueError(f"kind must be one of {MARGIN_KINDS}, got {self.kind!r}")
        if self.phi_max <= 0 or self.gamma <= 0:
            raise ValueError("phi_max and gamma must be positive")

    @property
    def lipschitz(self):
        if self.kind == "capped_hinge":
            return 1.0
        if self.kind == "saturated_exp":
            return self.phi_max / self.gamma
        return self.phi_max / (4.0 * self.gamma)


def phi(spec, m):
    m = np.asarray(m, dtype=float)
    if spec.kind == "capped_hinge":
        out = np.minimum(np.maximum(m, 0.0), spec.phi_max)
    elif spec.kind == "saturated_exp":
        out = spec.phi_max * np.maximum(-np.expm1(-np.maximum(m, 0.0) / spec.gamma), 0.0)
    else:
        out = spec.phi_max * expit(m / spec.gamma)
    return out if out.ndim else float(out)


def phi_grad(spec, m):
    """Derivative of :func:`phi` (zero at the hinge kinks)."""
    m = np.asarray(m, dtype=float)
    if spec.kind == "capped_hinge":
        return ((m > 0) & (m < spec.phi_max)).astype(float)
    if spec.kind == "saturated_exp":
        return np.where(m > 0, spec.phi_max / spec.gamma * np.exp(-np.maximum(m, 0) / spec.gamma), 0.0)
    s = expit(m / spec.gamma)
    return spec.phi_max / spec.gamma * s * (1.0 - s)


def clip_logits(Z, M):
    """Clamp every logit to ``[-M, M]``."""
    if M <= 0:
        raise ValueError("M must be positive")
    return np.clip(np.asarray(Z, dtype=float), -M, M)


def _global_norm(grads):
    total = 0.0
    for g in grads:
        parts = g if isinstance(g, (tuple, list)) else (g,)
        for a in parts:
            total += float(np.sum(np.square(a)))
    return np.sqrt(total)


def _scale(grads, c):
    out = []
    for g in grads:
        if isinstance(g, (tuple, list)):
            out.append(type(g)(a * c for a in g))
        else:
            out.append(g * c)
    return out


def clip_gradient(grads, tau):
    """Rescale a list of gradient arrays (or ``(dW, db)`` pairs) to global norm ``<= tau``.

    Returns
    -------
    (grads, clipped, norm_before)
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    norm = _global_norm(grads)
    if norm > tau:
        return _scale(grads, tau / norm), True, norm
    return grads, False, norm


def project_trust_region(net, radii):
    """Radially project each weight matrix onto its Frobenius ball, in place.

    Layers already inside their ball are left untouched. Returns one flag
    per layer telling whether that layer was rescaled.
    """
    if len(radii) != net.depth:
        raise ValueError(f"{len(radii)} radii for {net.depth} layers")
    flags = []
    for lay, B in zip(net.layers, radii):
        if B <= 0:
            raise ValueError("trust radius must be positive")
        nrm = np.linalg.norm(lay.W)
        if nrm > B:
            lay.W = lay.W * (B / nrm)
            # guard the last ulp so the invariant holds exactly
            for _ in range(8):
                if np.linalg.norm(lay.W) <= B:
                    break
                lay.W = np.nextafter(lay.W, 0.0)
            while np.linalg.norm(lay.W) > B:
                lay.W = lay.W * (1.0 - 4 * np.finfo(float).eps)
            flags.append(True)
        else:
            flags.append(False)
    return flags


@dataclass
class ObjectiveResult:
    value: float
    data_loss: float
    reward: float  # signed term added to the data loss
    grads: list
    Z: np.ndarray  # outputs after any logit clip


def ar_objective(net, X, y, lam, reward="negative_l2", task="classification", margin_spec=None,
                 logit_clip=None, W=None, need_grad=True):
    """Data loss plus the signed reward term, with gradients.

    Parameters
    ----------
    reward : str
        ``negative_l2`` adds ``-(lam/2) sum_l ||W_l||_F^2``; ``l2`` adds
        ``+lam sum_l ||W_l||_F^2``; ``weighted`` adds
        ``-(lam/2) sum_k w_k' W w_k`` on the first layer; ``bounded_margin``
        adds ``-lam mean phi(margin)``; ``none`` adds nothing. Biases never
        enter any reward.
    task : {"classification", "regression"}
        Classification uses mean cross-entropy on (optionally clamped)
        logits; regression uses ``0.5 * mean((z - y)^2)`` on a single output.
    """
    Xb = np.asarray(X, dtype=float)
    Z_raw, fc = net.forward(Xb, cache=True)
    if logit_clip is not None and task == "classification":
        Z = clip_logits(Z_raw, logit_clip)
        inside = (Z_raw > -logit_clip) & (Z_raw < logit_clip)
    else:
        Z, inside = Z_raw, None

    if task == "classification":
        data, dZ = cross_entropy_batch(Z, y)
    else:
        t = np.asarray(y, dtype=float).reshape(Z.shape)
        r = Z - t
        data = 0.5 * float(np.mean(r * r))
        dZ = r / Z.shape[0]

    extra = 0.0
    weight_grads = [np.zeros_like(lay.W) for lay in net.layers]
    if lam != 0 and reward != "none":
        if reward == "negative_l2":
            extra = -0.5 * lam * net.weight_sq_sum()
            weight_grads = [-lam * lay.W for lay in net.layers]
        elif reward == "l2":
            extra = lam * net.weight_sq_sum()
            weight_grads = [2.0 * lam * lay.W for lay in net.layers]
        elif reward == "weighted":
            if W is None:
                raise ValueError("weighted reward needs a weight matrix W")
            W0 = net.layers[0].W
            extra = -0.5 * lam * float(np.sum(W0 * (W @ W0)))
            weight_grads[0] = -0.5 * lam * (W + W.T) @ W0
        elif reward == "bounded_margin":
            if task != "classification":
                raise ValueError("bounded margin reward is defined for classification only")
            spec = margin_spec or MarginRewardSpec()
            m = margins(Z, y)
            extra = -lam * float(np.mean(phi(spec, m)))
            if need_grad:
                g = -lam * phi_grad(spec, m) / Z.shape[0]
                idx = np.arange(Z.shape[0])
                dZ = dZ.copy()
                np.add.at(dZ, (idx, np.asarray(y, dtype=int)), g)
                np.add.at(dZ, (idx, _runner_up(Z, y)), -g)
        else:
            raise ValueError(f"unknown reward {reward!r}")

    grads = []
    if need_grad:
        if inside is not None:
            dZ = dZ * inside
        grads = net.backward(fc, dZ)
        grads = [(dW + gw, db) for (dW, db), gw in zip(grads, weight_grads)]
    return ObjectiveResult(data + extra, data, extra, grads, Z)


def gamma_calibrate(margin_values, q):
    """``q``-th percentile of the margins with linear interpolation between order statistics."""
    m = np.asarray(margin_values, dtype=float).ravel()
    if m.size == 0:
        raise ValueError("need at least one margin")
    if not 0 < q < 100:
        raise ValueError(f"q must lie in (0, 100), got {q}")
    return float(np.percentile(m, q, method="linear"))


@dataclass(frozen=True)
class GenBoundTerms:
    """Additive terms of a margin plus reward-Lipschitz generalization bound.

    All universal constants are set to 1, so these values track rates
    only and do not certify anything.
    """

    empirical_ce: float
    reward_term: float
    margin_complexity: float
    reward_complexity: float
    label: str = "rate diagnostic, not a certified bound"

    @property
    def total(self):
        return self.empirical_ce + self.reward_term + self.margin_complexity + self.reward_complexity


def gen_bound_terms(net, X, y, lam, gamma, spec, G, n, logit_clip=None):
    """Evaluate each term of the bound on ``(X, y)`` with constants = 1.

    Returns empirical cross-entropy, the reward term ``-lam mean phi``, the
    margin complexity ``G / (gamma sqrt(n))`` and the reward complexity
    ``|lam| L_phi / sqrt(n)``.
    """
    if gamma <= 0 or n < 1:
        raise ValueError("need gamma > 0 and n >= 1")
    Z = net.forward(np.asarray(X, dtype=float))
    if logit_clip is not None:
        Z = clip_logits(Z, logit_clip)
    ce, _ = cross_entropy_batch(Z, y)
    reward_term = -lam * float(np.mean(phi(spec, margins(Z, y)))) if lam != 0 else 0.0
    return GenBoundTerms(
        empirical_ce=ce,
        reward_term=reward_term,
        margin_complexity=float(G) / (gamma * np.sqrt(n)),
        reward_complexity=abs(lam) * spec.lipschitz / np.sqrt(n),
    )
