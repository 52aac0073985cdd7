import numpy as np
import pytest

from antireg.data import gaussian_mixture, linear_gaussian
from antireg.errors import NonFiniteLossError
from antireg.nets import ShallowNet
from antireg.schedule import ARConfig
from antireg.training import OptimizerSpec, evaluate, train


def test_init_bounds_and_determinism():
    a = ShallowNet.init([5, 16, 3], seed=4)
    b = ShallowNet.init([5, 16, 3], seed=4)
    assert np.array_equal(a.flatten(), b.flatten())
    assert np.all(np.abs(a.layers[0].W) <= 1 / np.sqrt(5))
    assert np.all(np.abs(a.layers[1].W) <= 1 / np.sqrt(16))
    assert a.n_params == 5 * 16 + 16 + 16 * 3 + 3
    with pytest.raises(ValueError):
        ShallowNet.init([3])
    with pytest.raises(ValueError):
        ShallowNet.init([3, 4, 4, 4, 1])


def test_flatten_roundtrip(rng):
    net = ShallowNet.init([3, 4, 2], seed=0)
    v = rng.standard_normal(net.n_params)
    net.set_flat(v)
    np.testing.assert_array_equal(net.flatten(), v)
    with pytest.raises(ValueError):
        net.unflatten(v[:-1])


def test_backward_matches_jacobian(rng):
    net = ShallowNet.init([3, 5, 4, 2], seed=1)
    X = rng.standard_normal((6, 3))
    dout = rng.standard_normal((6, 2))
    _, fc = net.forward(X, cache=True)
    g = net.flatten(net.backward(fc, dout))
    J = net.jacobian(X)
    np.testing.assert_allclose(g, np.einsum("nk,nkp->p", dout, J), atol=1e-12)


def plain_sgdm(net, X, y, lr, momentum, batch, epochs, seed):
    """Independent ERM loop: MSE/2 + heavy-ball SGD, no reward and no safeguards."""
    rng = np.random.default_rng([seed, 1])
    vel = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]
    for _ in range(epochs):
        order = rng.permutation(X.shape[0])
        for s in range(0, X.shape[0], batch):
            idx = order[s : s + batch]
            Z, fc = net.forward(X[idx], cache=True)
            grads = net.backward(fc, (Z - y[idx, None]) / idx.size)
            vel = [(momentum * vW + dW, momentum * vb + db) for (vW, vb), (dW, db) in zip(vel, grads)]
            for lay, (vW, vb) in zip(net.layers, vel):
                lay.W = lay.W - lr * vW
                lay.b = lay.b - lr * vb
    return net


def test_zero_lambda_equals_plain_erm():
    ds = linear_gaussian(120, 4, tau=0.5, seed=2)
    opt = OptimizerSpec("sgdm", 0.01, 0.9, batch_size=16)
    cfg = ARConfig(lam0=0.0, n0=120, clip_tau=1e6, trust_radii=[1e6, 1e6])
    res = train(ShallowNet.init([4, 8, 1], seed=0), ds.X, ds.y, cfg, opt, epochs=15, patience=None, seed=3)
    ref = plain_sgdm(ShallowNet.init([4, 8, 1], seed=0), ds.X, ds.y, 0.01, 0.9, 16, 15, 3)
    m_res, _ = evaluate(res.net, ds.X, ds.y, "regression")
    m_ref, _ = evaluate(ref, ds.X, ds.y, "regression")
    for k in m_res:
        assert m_res[k] == pytest.approx(m_ref[k], abs=1e-10)


def test_determinism_given_seed():
    ds = gaussian_mixture(200, 3, 3, seed=0)
    cfg = ARConfig(lam0=1e-2, n0=200, task="classification", trust_radii=[10.0, 10.0])
    opt = OptimizerSpec.default("adam", "classification")
    runs = [train(ShallowNet.init([3, 16, 3], seed=1), ds.X, ds.y, cfg, opt, epochs=5, seed=9) for _ in range(2)]
    np.testing.assert_array_equal(runs[0].net.flatten(), runs[1].net.flatten())
    assert runs[0].diagnostics.r_clip == runs[1].diagnostics.r_clip


def test_trust_region_invariant_and_diagnostics():
    ds = gaussian_mixture(300, 4, 3, seed=1)
    cfg = ARConfig(lam0=0.5, n0=300, task="classification", trust_radii=[2.0, 2.0], schedule_mode="constant")
    res = train(ShallowNet.init([4, 16, 3], seed=0), ds.X, ds.y, cfg, OptimizerSpec("sgdm", 0.05),
                epochs=10, patience=None)
    d = res.diagnostics
    assert d.max_norm_excess <= 1e-12
    assert all(max(t.layer_norms[i] - 2.0 for i in range(2)) <= 1e-12 for t in res.trace)
    assert d.r_proj == pytest.approx(np.mean(res.proj_flags)) and d.r_proj > 0.5
    assert d.epochs == 10 and d.final_lambda == 0.5
    assert len(d.mu_eff_trace) == 10


def test_l2_ablation_shrinks_weights():
    ds = linear_gaussian(200, 3, seed=0)
    opt = OptimizerSpec("sgdm", 0.02)
    norms = {}
    for reward in ("negative_l2", "l2"):
        cfg = ARConfig(lam0=0.3, n0=200, reward=reward, trust_radii=None, schedule_mode="constant")
        res = train(ShallowNet.init([3, 8, 1], seed=0), ds.X, ds.y, cfg, opt, epochs=20, patience=None)
        norms[reward] = res.net.weight_sq_sum()
    assert norms["l2"] < norms["negative_l2"]


def test_divergence_detected_and_optionally_raised():
    ds = linear_gaussian(64, 3, seed=0)
    ds.X *= 30.0
    cfg = ARConfig(lam0=0.0, n0=64, clip_tau=None, trust_radii=None)
    opt = OptimizerSpec("sgdm", 0.5, 0.9)
    res = train(ShallowNet.init([3, 8, 1], seed=0), ds.X, ds.y, cfg, opt, epochs=50, patience=None)
    assert res.diagnostics.diverged
    with pytest.raises(NonFiniteLossError):
        train(ShallowNet.init([3, 8, 1], seed=0), ds.X, ds.y, cfg, opt, epochs=50, patience=None,
              raise_on_diverge=True)


def test_caller_config_is_not_mutated():
    ds = linear_gaussian(50, 2, seed=0)
    cfg = ARConfig(lam0=1e-2, n0=10, stop_rule_enabled=True,
                   zone=None, trust_radii=[5.0, 5.0])
    train(ShallowNet.init([2, 4, 1], seed=0), ds.X, ds.y, cfg, OptimizerSpec("sgdm", 0.02), epochs=3,
          baseline_z_norms=[1e-6] * 3)
    assert cfg.alpha == 1.0


def test_schedule_decays_with_training_size():
    ds = linear_gaussian(400, 2, seed=0)
    cfg = ARConfig(lam0=1e-2, n0=100, trust_radii=[5.0, 5.0])
    res = train(ShallowNet.init([2, 4, 1], seed=0), ds.X, ds.y, cfg, OptimizerSpec("adam"), epochs=2)
    assert res.diagnostics.final_lambda == pytest.approx(1e-2 * 100 / 400)


def test_stability_gate_cuts_lambda():
    ds = linear_gaussian(200, 2, seed=0)
    mu = float(np.linalg.eigvalsh(ds.X.T @ ds.X / 200)[0])
    cfg = ARConfig(lam0=0.95 * mu, n0=200, trust_radii=[5.0, 5.0], schedule_mode="constant")
    res = train(ShallowNet.init([2, 4, 1], seed=0), ds.X, ds.y, cfg, OptimizerSpec("adam"), epochs=3,
                patience=None, gate_eta_mu=0.25)
    lams = [t.lam for t in res.trace]
    assert lams[1] == pytest.approx(lams[0] / 2)


def test_restore_best():
    ds = linear_gaussian(100, 2, seed=0)
    cfg = ARConfig(lam0=0.0, n0=100)
    res = train(ShallowNet.init([2, 8, 1], seed=0), ds.X[:80], ds.y[:80], cfg, OptimizerSpec("sgdm", 0.05),
                epochs=40, X_val=ds.X[80:], y_val=ds.y[80:], patience=None, restore_best=True)
    best = min(t.val_metric for t in res.trace)
    assert evaluate(res.net, ds.X[80:], ds.y[80:], "regression")[0]["rmse"] == pytest.approx(best)
