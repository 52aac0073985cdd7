import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from antireg.errors import UnsafeLambdaError
from antireg.nets import ShallowNet, linear_net
from antireg.regression import RegressionProblem, closed_form_solve
from antireg.smoother import (
    KernelMatrix,
    NoiseModel,
    dof,
    dof_derivative,
    empirical_ntk,
    fit_predictions,
    kernel_ar_solve,
    optimism_gap,
    optimism_monte_carlo,
    smoother_matrix,
    smoother_report,
    underfit_improvement_check,
    variance_trace,
    whitened_dof,
)

from conftest import spiked_design


def constructed_trace(sigma, lam, weights, n=40, seed=3, power=1):
    """Trace of ``S`` (or ``S^2``) from an explicit design with eigenbasis-aligned ``W``."""
    sigma = np.asarray(sigma, float)
    r = np.random.default_rng(seed)
    U, _ = np.linalg.qr(r.standard_normal((n, sigma.size)))
    V, _ = np.linalg.qr(r.standard_normal((sigma.size, sigma.size)))
    X = (U * np.sqrt(n * sigma)) @ V.T
    W = (V * np.asarray(weights, float)) @ V.T
    S = smoother_matrix(X, lam, W)
    return float(np.trace(np.linalg.matrix_power(S, power)))


def test_dof_examples():
    assert dof([1.0, 0.5], 0.25) == pytest.approx(1 / 0.75 + 0.5 / 0.25, abs=1e-12)
    assert dof([1.0, 0.5, 0.1], 0.0) == pytest.approx(3.0)


def test_weighted_dof_matches_constructed_trace():
    # sigma = (1, d), w = (1, 1/d) with d = 0.25, lam = 0.03
    s, w = [1.0, 0.25], [1.0, 4.0]
    expected = 1 / 0.97 + 0.25 / 0.13
    assert dof(s, 0.03, w) == pytest.approx(expected, abs=1e-12)
    assert constructed_trace(s, 0.03, w) == pytest.approx(expected, abs=1e-8)
    assert round(expected, 4) == 2.9540


def test_weighted_variance_trace_matches_constructed():
    s, w = [1.0, 0.25], [1.0, 4.0]
    assert variance_trace(s, 0.03, w) == pytest.approx(constructed_trace(s, 0.03, w, power=2), abs=1e-8)


def test_derivative_and_variance_examples():
    assert dof_derivative([1.0, 0.5], 0.25) == pytest.approx(1 / 0.5625 + 0.5 / 0.0625, abs=1e-12)
    assert dof_derivative([1.0] * 4, 0.0) == pytest.approx(4.0)
    assert variance_trace([1.0, 0.5], 0.25) == pytest.approx((4 / 3) ** 2 + 4, abs=1e-12)
    assert variance_trace([2.0, 1.0, 0.3], 0.0) == pytest.approx(3.0)


def test_derivative_matches_finite_difference():
    s = [2.0, 1.0, 0.4]
    h = 1e-6
    fd = (dof(s, 0.2 + h) - dof(s, 0.2 - h)) / (2 * h)
    assert dof_derivative(s, 0.2) == pytest.approx(fd, rel=1e-7)


def test_small_modes_are_cut():
    assert dof([1.0, 1e-12], 0.5) == pytest.approx(2.0)


def test_dof_unsafe_raises():
    with pytest.raises(UnsafeLambdaError):
        dof([1.0, 0.5], 0.5)


def spectra(min_size=1, max_size=8):
    return st.lists(st.floats(0.01, 10.0), min_size=min_size, max_size=max_size)


@given(spectra(), st.floats(0.0, 0.999))
@settings(max_examples=60, deadline=None)
def test_derivative_lower_bound(s, frac):
    s = np.array(s)
    lam = frac * s.min()
    bound = s.size * s.min() / (s.max() - lam) ** 2
    assert dof_derivative(s, lam) >= bound * (1 - 1e-12)


@given(spectra(2), st.floats(0.01, 0.9), st.floats(0.01, 0.95))
@settings(max_examples=60, deadline=None)
def test_term_sensitivity_sign(s, frac, j_frac):
    s = np.array(s)
    lam = frac * s.min()
    if lam == 0:
        return
    j = int(j_frac * (s.size - 1))
    h = 1e-5 * (s[j] - lam)
    term = lambda x: x / (x - lam)  # noqa: E731
    fd = (term(s[j] + h) - term(s[j] - h)) / (2 * h)
    assert fd < 0 and fd == pytest.approx(-lam / (s[j] - lam) ** 2, rel=1e-3)


def test_smoother_matrix_examples(rng):
    X = rng.standard_normal((20, 4))
    S0 = smoother_matrix(X, 0.0)
    np.testing.assert_allclose(S0 @ S0, S0, atol=1e-10)
    assert np.trace(S0) == pytest.approx(4.0)
    np.testing.assert_allclose(smoother_matrix(np.array([[1.0]]), 0.5), [[2.0]])


def test_smoother_matches_closed_form_prediction(rng):
    X = rng.standard_normal((30, 5))
    y = rng.standard_normal(30)
    lam = 0.3 * np.linalg.eigvalsh(X.T @ X / 30)[0]
    np.testing.assert_allclose(smoother_matrix(X, lam) @ y, fit_predictions(X, y, lam), atol=1e-8)
    theta = closed_form_solve(RegressionProblem(X, y, lam))
    np.testing.assert_allclose(X @ theta, fit_predictions(X, y, lam), atol=1e-12)


@given(st.integers(0, 10_000), st.floats(0.0, 0.95))
@settings(max_examples=30, deadline=None)
def test_trace_matrix_consistency(seed, frac):
    sigma = np.sort(np.random.default_rng(seed).uniform(0.1, 3.0, 4))[::-1]
    X = spiked_design(30, sigma, seed)
    lam = frac * sigma.min()
    assert np.trace(smoother_matrix(X, lam)) == pytest.approx(dof(sigma, lam), abs=1e-8)


def test_whitened_matches_commuting_case():
    sigma, w = np.array([1.0, 0.25]), np.array([1.0, 4.0])
    assert whitened_dof(np.diag(sigma), np.diag(w), 0.03) == pytest.approx(dof(sigma, 0.03, w))


def test_whitened_noncommuting_matches_matrix_trace(rng):
    X = rng.standard_normal((50, 3))
    A = rng.standard_normal((3, 3))
    W = A @ A.T / 3 + 0.1 * np.eye(3)
    Sigma = X.T @ X / 50
    lam = 0.5 * float(np.linalg.eigvalsh(np.linalg.solve(W, Sigma)).min().real)
    assert whitened_dof(Sigma, W, lam) == pytest.approx(np.trace(smoother_matrix(X, lam, W)), abs=1e-8)


def test_optimism_gap_examples():
    assert optimism_gap(NoiseModel(1.0), 100, np.diag([1.0] * 5 + [0.0] * 95)) == pytest.approx(0.1)
    S = np.random.default_rng(0).standard_normal((10, 10))
    assert optimism_gap(NoiseModel(np.ones(10)), 10, S) == pytest.approx(optimism_gap(NoiseModel(1.0), 10, S))


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(0.0)
    with pytest.raises(ValueError):
        NoiseModel(np.ones(3)).variances(4)


@pytest.mark.parametrize("n,p,frac,tau", [(60, 3, 0.2, 0.5), (80, 5, 0.5, 1.0), (120, 8, 0.3, 2.0),
                                          (50, 2, 0.8, 1.0), (100, 10, 0.0, 1.5)])
def test_optimism_identity_monte_carlo(n, p, frac, tau):
    r = np.random.default_rng(n + p)
    X = r.standard_normal((n, p))
    f = X @ r.standard_normal(p) + 0.5 * np.sin(X[:, 0])
    lam = frac * np.linalg.eigvalsh(X.T @ X / n)[0]
    res = optimism_monte_carlo(X, f, lam, tau, draws=2000, seed=1)
    assert abs(res.z_score) <= 3.0
    assert res.residual_term > 0


def test_heteroskedastic_gap_matches_simulation(rng):
    X = rng.standard_normal((40, 3))
    S = smoother_matrix(X, 0.2 * np.linalg.eigvalsh(X.T @ X / 40)[0])
    tau2 = rng.uniform(0.2, 2.0, 40)
    eps = rng.standard_normal((20000, 40)) * np.sqrt(tau2)
    # E[2/n eps' S eps] = (2/n) sum tau_i^2 S_ii
    sim = np.mean(2 * np.einsum("di,ij,dj->d", eps, S, eps) / 40)
    assert optimism_gap(NoiseModel(tau2), 40, S) == pytest.approx(sim, rel=0.05)


def test_underfit_check_examples():
    assert underfit_improvement_check(0.2, 5, 1.0, 100)
    assert not underfit_improvement_check(0.1, 5, 1.0, 100)
    assert underfit_improvement_check(0.01, 0, 1.0, 100)


def test_report_safe_and_unsafe():
    X = spiked_design(20, [1.0, 0.5])
    rep = smoother_report(X, 0.25)
    assert rep.safe and rep.dof == pytest.approx(1 / 0.75 + 2.0)
    assert rep.optimism_gap == pytest.approx(2 * rep.dof / 20)
    bad = smoother_report(X, 0.6)
    assert not bad.safe and np.isnan(bad.dof)


def test_kernel_solve_examples():
    y = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(kernel_ar_solve(np.eye(3), y, 0.0), y)
    np.testing.assert_allclose(kernel_ar_solve(np.eye(3), y, 0.5), 2 * y)
    K = np.diag([1.0, 0.2])
    np.testing.assert_allclose(kernel_ar_solve(K, [0.0, 1.0], 0.1), [0.0, 10.0])
    np.testing.assert_allclose(kernel_ar_solve(K, [0.0, 1.0], 0.0), [0.0, 5.0])
    with pytest.raises(UnsafeLambdaError):
        kernel_ar_solve(K, [0.0, 1.0], 0.2)


def test_kernel_validation():
    with pytest.raises(ValueError):
        KernelMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        KernelMatrix(np.diag([1.0, -1.0]))


def test_ntk_linear_model(rng):
    X = rng.standard_normal((6, 3))
    K = empirical_ntk(linear_net(rng.standard_normal((3, 1))), X).K
    np.testing.assert_allclose(K, X @ X.T, atol=1e-12)


def test_ntk_duplicate_inputs(rng):
    net = ShallowNet.init([3, 8, 1], seed=1)
    X = rng.standard_normal((4, 3))
    X[2] = X[0]
    K = empirical_ntk(net, X).K
    assert K[0, 0] == pytest.approx(K[0, 2]) == pytest.approx(K[2, 2])


def fd_jacobian(net, X, h=1e-6):
    theta = net.flatten()
    cols = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        net.set_flat(theta + e)
        up = net.forward(X)
        net.set_flat(theta - e)
        dn = net.forward(X)
        cols.append((up - dn) / (2 * h))
    net.set_flat(theta)
    return np.stack(cols, axis=-1)


def test_ntk_matches_finite_difference(rng):
    net = ShallowNet.init([3, 6, 1], seed=2)
    X = rng.standard_normal((5, 3))
    J = fd_jacobian(net, X)
    K_fd = np.einsum("iko,jko->ij", J, J)
    np.testing.assert_allclose(empirical_ntk(net, X).K, K_fd, rtol=1e-5, atol=1e-8)
