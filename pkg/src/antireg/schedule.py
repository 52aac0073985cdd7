"""Reward-strength schedules and the runtime safety policy."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spectral import DEFAULT_EPS

TASKS = ("regression", "classification")
REWARDS = ("negative_l2", "weighted", "bounded_margin", "l2", "none")
STOP_ACTIONS = ("accelerate_alpha", "disable_reward")

_ALPHA = {
    ("regression", "default"): 1.0,
    ("regression", "conservative"): 1.5,
    ("classification", "default"): 0.5,
    ("classification", "conservative"): 0.75,
}


def alpha_recommendation(task, conservatism="default"):
    """Decay exponent for ``task``: 1 (regression) or 1/2 (classification), x1.5 if conservative."""
    try:
        return _ALPHA[(task, conservatism)]
    except KeyError:
        raise ValueError(f"unknown task/conservatism pair ({task!r}, {conservatism!r})") from None


@dataclass
class ARConfig:
    """Everything that defines how the reward term is applied during a run.

    Parameters
    ----------
    lam0 : float
        Reward strength at the reference size ``n0``.
    alpha : float, optional
        Decay exponent; the task default when omitted.
    reward : str
        ``negative_l2`` (reward ``+(lam/2) sum ||W||^2``), ``weighted``,
        ``bounded_margin``, ``l2`` (penalty, the sign-flipped ablation) or
        ``none``.
    trust_radii : list of float or None
        Frobenius radius per weight matrix; ``None`` disables projection.
    clip_tau : float or None
        Global gradient-norm threshold; ``None`` disables clipping.
    logit_clip : float or None
        Symmetric clamp on classification logits.
    schedule_mode : {"dataset", "cumulative", "constant"}
        ``dataset`` uses the training-set size, ``cumulative`` the number of
        samples processed so far (floored at ``n0``), ``constant`` ignores n.
    """

    lam0: float = 0.0
    n0: int = 1
    alpha: Optional[float] = None
    eps: float = DEFAULT_EPS
    task: str = "regression"
    reward: str = "negative_l2"
    W: Optional[np.ndarray] = None
    margin_spec: Optional[object] = None
    trust_radii: Optional[list] = None
    clip_tau: Optional[float] = 1.0
    logit_clip: Optional[float] = 30.0
    schedule_mode: str = "dataset"
    trigger_enabled: bool = False
    stop_rule_enabled: bool = False
    stop_action: str = "accelerate_alpha"
    zone: Optional["SafetyZone"] = None
    allow_unbounded: bool = False  # set only by the no_trust_region ablation

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.reward not in REWARDS:
            raise ValueError(f"reward must be one of {REWARDS}, got {self.reward!r}")
        if self.alpha is None:
            self.alpha = alpha_recommendation(self.task)
        if self.alpha < 0 or self.lam0 < 0:
            raise ValueError("alpha and lam0 must be non-negative")
        if self.n0 < 1:
            raise ValueError(f"n0 must be at least 1, got {self.n0}")
        if self.trust_radii is not None and any(b <= 0 for b in self.trust_radii):
            raise ValueError("trust radii must be positive")
        if self.clip_tau is not None and self.clip_tau <= 0:
            raise ValueError("clip_tau must be positive")
        if self.logit_clip is not None and self.logit_clip <= 0:
            raise ValueError("logit_clip must be positive")
        if self.schedule_mode not in ("dataset", "cumulative", "constant"):
            raise ValueError(f"unknown schedule_mode {self.schedule_mode!r}")
        if self.stop_action not in STOP_ACTIONS:
            raise ValueError(f"stop_action must be one of {STOP_ACTIONS}")
        if self.zone is None:
            self.zone = SafetyZone.for_task(self.task)
        if (
            self.task == "classification"
            and self.reward == "negative_l2"
            and self.lam0 > 0
            and self.trust_radii is None
            and not self.allow_unbounded
        ):
            raise ValueError("classification with a negative L2 reward needs trust-region projection")


@dataclass(frozen=True)
class SafetyZone:
    """Operating bands for the clip rate and output scale ratio."""

    r_clip_band: tuple = (0.05, 0.40)
    rho_band: tuple = (0.9, 1.3)
    trigger_count: int = 2
    ece_threshold: float = 0.02
    increase_below: float = 0.10
    stop_rho: float = 1.3
    stop_r_clip: float = 0.6

    def __post_init__(self):
        for lo, hi in (self.r_clip_band, self.rho_band):
            if not lo <= hi:
                raise ValueError("bands must satisfy low <= high")
        if self.trigger_count < 1:
            raise ValueError("trigger_count must be at least 1")

    @classmethod
    def for_task(cls, task, **overrides):
        if task == "regression":
            base = dict(r_clip_band=(0.05, 0.40), rho_band=(0.9, 1.3))
        elif task == "classification":
            base = dict(r_clip_band=(0.10, 0.50), rho_band=(0.8, 1.1))
        else:
            raise ValueError(f"unknown task {task!r}")
        base.update(overrides)
        return cls(**base)


def power_decay(config, n):
    """``lam0 * (n0 / n) ** alpha``; equals ``lam0`` at ``n = n0``."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if config.schedule_mode == "constant":
        return float(config.lam0)
    return float(config.lam0) * (config.n0 / n) ** config.alpha


def _outside(value, band):
    if value is None or not np.isfinite(value):
        return False
    return value < band[0] or value > band[1]


def trigger_update(zone, history, validation_improving):
    """Multiplier for the scheduled strength after an epoch.

    Parameters
    ----------
    history : sequence of (r_clip, rho)
        Per-epoch diagnostics, oldest first. ``rho`` may be ``None`` or
        ``nan`` when no baseline reference exists; it then counts as in band.

    Returns
    -------
    float
        0.5 when either metric stayed outside its band for the last
        ``trigger_count`` epochs, 1.5 when the latest clip rate is below
        ``increase_below`` and validation improved, 1.0 otherwise.
    """
    if len(history) == 0:
        raise ValueError("history must contain at least one epoch")
    k = zone.trigger_count
    if len(history) >= k:
        recent = history[-k:]
        if all(_outside(r, zone.r_clip_band) for r, _ in recent) or all(
            _outside(p, zone.rho_band) for _, p in recent
        ):
            return 0.5
    if history[-1][0] < zone.increase_below and validation_improving:
        return 1.5
    return 1.0


def stop_rule(rho, r_clip, delta_ece=None, task="regression", action="accelerate_alpha", zone=None):
    """Decide whether a finished configuration should keep its reward.

    Returns ``continue`` or ``action`` when ``rho`` or ``r_clip`` exceed the
    stop thresholds, or when validation ECE rose by more than the zone
    threshold on a classification task.
    """
    if action not in STOP_ACTIONS:
        raise ValueError(f"action must be one of {STOP_ACTIONS}")
    zone = SafetyZone.for_task(task) if zone is None else zone
    violated = (rho is not None and rho > zone.stop_rho) or (
        r_clip is not None and r_clip > zone.stop_r_clip
    )
    if task == "classification" and delta_ece is not None and delta_ece > zone.ece_threshold:
        violated = True
    return action if violated else "continue"


def stability_gate(mu, alpha_R, lam, eta_mu=0.25):
    """``decay_now`` when the effective curvature ``mu - lam alpha_R`` drops below ``eta_mu mu``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    return "decay_now" if mu - lam * alpha_R < eta_mu * mu else "ok"


@dataclass
class LambdaSchedule:
    """Mutable per-run schedule state: power decay times cumulative trigger multipliers."""

    config: ARConfig
    multiplier: float = 1.0
    history: list = field(default_factory=list)
    multipliers: list = field(default_factory=list)
    best_val: float = float("inf")
    _since: int = 0
    disabled: bool = False

    def value(self, n):
        if self.disabled:
            return 0.0
        return max(0.0, power_decay(self.config, n) * self.multiplier)

    def n_for(self, n_train, processed):
        if self.config.schedule_mode == "cumulative":
            return max(self.config.n0, processed)
        return n_train

    def record_epoch(self, r_clip, rho, val_metric):
        """Log one epoch and update the multiplier when the trigger rule is on.

        ``val_metric`` is lower-is-better. Returns the applied multiplier.
        """
        improving = val_metric < self.best_val
        self.best_val = min(self.best_val, val_metric)
        self.history.append((r_clip, rho))
        m = 1.0
        if self.config.trigger_enabled:
            m = trigger_update(self.config.zone, self.history[self._since :], improving)
            if m != 1.0:
                self._since = len(self.history)
        self.multiplier *= m
        self.multipliers.append(m)
        return m

    def decay_now(self, factor=0.5):
        """Immediate cut requested by the stability gate."""
        self.multiplier *= factor

    def apply_stop(self, action):
        if action == "disable_reward":
            self.disabled = True
        elif action == "accelerate_alpha":
            self.config.alpha *= 1.5
