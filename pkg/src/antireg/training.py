"""Minibatch training loop with reward scheduling, clipping and trust-region projection."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import ar_objective, clip_gradient, clip_logits, project_trust_region, softmax
from .diagnostics import RunDiagnostics, ece
from .errors import NonFiniteLossError
from .schedule import LambdaSchedule, stability_gate, stop_rule

OPTIMIZERS = ("sgdm", "adam")


@dataclass(frozen=True)
class OptimizerSpec:
    """Optimizer kind and hyper-parameters.

    SGDM follows the heavy-ball form ``v <- m v + g``, ``theta <- theta - lr v``.
    """

    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    @classmethod
    def default(cls, kind, task, batch_size=32):
        """Default step sizes: Adam 1e-3; SGDM 0.02 (regression) or 0.05 (classification)."""
        if kind == "adam":
            return cls("adam", 1e-3, batch_size=batch_size)
        if kind == "sgdm":
            lr = 0.02 if task == "regression" else 0.05
            return cls("sgdm", lr, momentum=0.9, batch_size=batch_size)
        raise ValueError(f"unknown optimizer {kind!r}")


class _Optimizer:
    def __init__(self, spec, net):
        self.spec = spec
        self.t = 0
        self.state = [
            (np.zeros_like(lay.W), np.zeros_like(lay.b), np.zeros_like(lay.W), np.zeros_like(lay.b))
            for lay in net.layers
        ]

    def step(self, net, grads):
        s = self.spec
        self.t += 1
        new_state = []
        for lay, (dW, db), (mW, mb, vW, vb) in zip(net.layers, grads, self.state):
            if s.kind == "sgdm":
                mW = s.momentum * mW + dW
                mb = s.momentum * mb + db
                lay.W = lay.W - s.lr * mW
                if net.use_bias:
                    lay.b = lay.b - s.lr * mb
            else:
                b1, b2 = s.betas
                mW = b1 * mW + (1 - b1) * dW
                mb = b1 * mb + (1 - b1) * db
                vW = b2 * vW + (1 - b2) * dW * dW
                vb = b2 * vb + (1 - b2) * db * db
                c1, c2 = 1 - b1**self.t, 1 - b2**self.t
                lay.W = lay.W - s.lr * (mW / c1) / (np.sqrt(vW / c2) + s.eps)
                if net.use_bias:
                    lay.b = lay.b - s.lr * (mb / c1) / (np.sqrt(vb / c2) + s.eps)
            new_state.append((mW, mb, vW, vb))
        self.state = new_state


@dataclass
class EpochRecord:
    epoch: int
    lam: float
    train_loss: float
    val_metric: float
    r_clip: float
    r_proj: float
    z_norm: float
    rho: float
    layer_norms: list
    multiplier: float
    grad_norm_max: float


@dataclass
class TrainResult:
    net: object
    diagnostics: RunDiagnostics
    trace: list = field(default_factory=list)
    z_val: np.ndarray = None
    clip_flags: list = field(default_factory=list)
    proj_flags: list = field(default_factory=list)


def evaluate(net, X, y, task, logit_clip=None):
    """Task metrics and raw outputs on ``(X, y)``.

    Regression returns rmse, mae and r2; classification returns accuracy,
    cross-entropy and ECE with confidence = max softmax probability.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        Z = net.forward(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(Z)):
        nan = float("nan")
        keys = ("rmse", "mae", "r2") if task == "regression" else ("accuracy", "cross_entropy", "ece")
        return {k: nan for k in keys}, Z
    if task == "regression":
        pred = Z[:, 0]
        t = np.asarray(y, dtype=float).ravel()
        r = pred - t
        ss_tot = float(np.sum((t - t.mean()) ** 2))
        with np.errstate(over="ignore"):
            sse = float(r @ r)
        r2 = 1.0 - sse / ss_tot if ss_tot > 0 else float("nan")
        return {"rmse": float(np.sqrt(sse / r.size)), "mae": float(np.mean(np.abs(r))), "r2": r2}, Z
    if logit_clip is not None:
        Z = clip_logits(Z, logit_clip)
    y = np.asarray(y, dtype=int)
    P = softmax(Z)
    pred = np.argmax(P, axis=1)
    ce = float(np.mean(-np.log(np.maximum(P[np.arange(y.size), y], 1e-300))))
    return {
        "accuracy": float(np.mean(pred == y)),
        "cross_entropy": ce,
        "ece": ece(P.max(axis=1), pred, y),
    }, Z


def primary_loss(metrics, task):
    """Lower-is-better selection score: RMSE, or negative accuracy."""
    return metrics["rmse"] if task == "regression" else -metrics["accuracy"]


def _finite(value, grads):
    if not np.isfinite(value):
        return False
    return all(np.all(np.isfinite(dW)) and np.all(np.isfinite(db)) for dW, db in grads)


def train(net, X, y, config, optimizer, epochs=100, X_val=None, y_val=None, patience=10, seed=0,
          baseline_z_norms=None, baseline_ece=None, restore_best=False, gate_eta_mu=None, mu_ref=None,
          raise_on_diverge=False):
    """Train ``net`` in place on ``(X, y)`` under the reward policy ``config``.

    Every step draws a minibatch, evaluates the reward strength from the
    schedule, computes the combined objective and gradient, clips the
    global gradient norm, takes an optimizer step and projects each weight
    matrix onto its trust region. Diagnostics cover the final epoch.

    Parameters
    ----------
    baseline_z_norms : sequence of float, optional
        Per-epoch validation output norms of the matched baseline run, used
        for the in-training output scale ratio seen by the trigger rule.
    baseline_ece : sequence of float, optional
        Per-epoch validation ECE of the baseline, used by the stop rule.
    gate_eta_mu : float, optional
        When set, cut the multiplier in half whenever the stability gate
        reports ``decay_now``.
    mu_ref : float, optional
        Curvature used for the ``mu_eff`` trace and the gate; defaults to
        the smallest eigenvalue of the input covariance.
    raise_on_diverge : bool
        Re-raise :class:`NonFiniteLossError` rather than recording it.

    Returns
    -------
    TrainResult
    """
    t_start = time.perf_counter()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("training data is empty")
    if X_val is None:
        X_val, y_val = X, y
    task = config.task
    n = X.shape[0]
    rng = np.random.default_rng([seed, 1])
    opt = _Optimizer(optimizer, net)
    # the stop rule may change alpha, so the schedule owns a private copy
    sched = LambdaSchedule(replace(config))
    reward = config.reward
    processed = 0
    if mu_ref is None:
        # curvature of the linear surrogate; the reward has alpha_R = 1
        mu_ref = float(max(np.linalg.eigvalsh(X.T @ X / n)[0], 0.0))

    trace, mu_eff = [], []
    clip_flags, proj_flags = [], []
    best, best_params, stale = float("inf"), None, 0
    diverged, message = False, ""
    max_excess = float("-inf")
    lam = sched.value(sched.n_for(n, max(processed, 1)))
    stopped = False
    z_val = None
    epoch = 0

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(1, epochs + 1):
            order = rng.permutation(n)
            clip_flags, proj_flags, losses = [], [], []
            gmax = 0.0
            try:
                for start in range(0, n, optimizer.batch_size):
                    idx = order[start : start + optimizer.batch_size]
                    processed += idx.size
                    lam = sched.value(sched.n_for(n, processed))
                    res = ar_objective(
                        net, X[idx], y[idx], lam, reward=reward, task=task,
                        margin_spec=config.margin_spec, logit_clip=config.logit_clip, W=config.W,
                    )
                    if not _finite(res.value, res.grads):
                        raise NonFiniteLossError(f"non-finite objective at epoch {epoch}")
                    grads = res.grads
                    clipped = False
                    if config.clip_tau is not None:
                        grads, clipped, gnorm = clip_gradient(grads, config.clip_tau)
                    else:
                        gnorm = float(np.sqrt(sum(np.sum(a * a) + np.sum(b * b) for a, b in grads)))
                    gmax = max(gmax, gnorm)
                    opt.step(net, grads)
                    projected = False
                    if config.trust_radii is not None:
                        projected = any(project_trust_region(net, config.trust_radii))
                    if not all(np.all(np.isfinite(lay.W)) for lay in net.layers):
                        raise NonFiniteLossError(f"non-finite parameters at epoch {epoch}")
                    clip_flags.append(clipped)
                    proj_flags.append(projected)
                    losses.append(res.value)
            except NonFiniteLossError as exc:
                if raise_on_diverge:
                    raise
                diverged, message = True, str(exc)
                break

            metrics, z_val = evaluate(net, X_val, y_val, task, config.logit_clip)
            val = primary_loss(metrics, task)
            if not np.isfinite(val):
                diverged, message = True, f"non-finite validation outputs at epoch {epoch}"
                if raise_on_diverge:
                    raise NonFiniteLossError(message)
                break
            norms = [float(v) for v in net.weight_norms()]
            if config.trust_radii is not None:
                max_excess = max(max_excess, max(a - b for a, b in zip(norms, config.trust_radii)))
            z_norm = float(np.linalg.norm(z_val))
            rho = float("nan")
            if baseline_z_norms is not None and len(baseline_z_norms) > 0:
                ref = baseline_z_norms[min(epoch, len(baseline_z_norms)) - 1]
                if ref > 0:
                    rho = z_norm / ref
            r_clip = float(np.mean(clip_flags)) if clip_flags else 0.0
            r_proj = float(np.mean(proj_flags)) if proj_flags else 0.0
            mult = sched.record_epoch(r_clip, rho, val)
            if config.stop_rule_enabled and not stopped:
                delta_ece = None
                if task == "classification" and baseline_ece is not None and len(baseline_ece):
                    delta_ece = metrics["ece"] - baseline_ece[min(epoch, len(baseline_ece)) - 1]
                action = stop_rule(rho if np.isfinite(rho) else None, r_clip, delta_ece, task,
                                   config.stop_action, config.zone)
                if action != "continue":
                    sched.apply_stop(action)
                    stopped = True
            mu_eff.append(mu_ref - lam)
            if gate_eta_mu is not None and lam > 0 and mu_ref > 0:
                if stability_gate(mu_ref, 1.0, lam, gate_eta_mu) == "decay_now":
                    sched.decay_now()
            trace.append(EpochRecord(epoch, lam, float(np.mean(losses)), val, r_clip, r_proj,
                                     z_norm, rho, norms, mult, gmax))

            if val < best:
                best, stale = val, 0
                if restore_best:
                    best_params = [(lay.W.copy(), lay.b.copy()) for lay in net.layers]
            else:
                stale += 1
                if patience is not None and stale >= patience:
                    break

    if restore_best and best_params is not None and not diverged:
        for lay, (W, b) in zip(net.layers, best_params):
            lay.W, lay.b = W, b
        _, z_val = evaluate(net, X_val, y_val, task, config.logit_clip)

    r_clip = float(np.mean(clip_flags)) if clip_flags else 0.0
    r_proj = float(np.mean(proj_flags)) if proj_flags else 0.0
    diag = RunDiagnostics(
        r_clip=r_clip,
        r_proj=r_proj,
        epochs=len(trace),
        runtime_s=time.perf_counter() - t_start,
        final_lambda=float(lam),
        mu_eff_trace=mu_eff,
        diverged=diverged,
        z_norm=float(np.linalg.norm(z_val)) if z_val is not None and not diverged else float("nan"),
        max_norm_excess=max_excess,
        message=message,
    )
    return TrainResult(net, diag, trace, z_val, clip_flags, proj_flags)
