"""End-to-end acceptance criteria, one test per criterion.

Each test tags itself with ``record_property("criterion", ...)``; the
conftest prints one PASS/FAIL line per criterion after the run.
"""

import time

import numpy as np
import pytest

from antireg.classifier import MarginRewardSpec, ar_objective
from antireg.data import separable_blobs
from antireg.diagnostics import stability_bound
from antireg.dof_target import DofTarget, solve_dof_target
from antireg.errors import UnsafeLambdaError
from antireg.harness import (
    DatasetSpec,
    default_grid,
    paired_report,
    rows_to_csv,
    run_cell,
    run_grid,
)
from antireg.nets import ShallowNet, linear_net
from antireg.regression import (
    RegressionProblem,
    closed_form_solve,
    divergence_probe,
    gd_certificate,
    gd_solve,
    hessian_min_eig,
)
from antireg.schedule import ARConfig, LambdaSchedule, SafetyZone, power_decay, trigger_update
from antireg.smoother import dof, empirical_ntk, optimism_monte_carlo
from antireg.spectral import sample_covariance

# max layer-norm excess of every trust-region run in this module
NORM_EXCESS = []


def _collect(cells):
    for c in cells:
        d = c.diagnostics
        if d is not None and np.isfinite(d.max_norm_excess):
            NORM_EXCESS.append(d.max_norm_excess)


def _random_problem(r):
    n = int(r.integers(20, 201))
    p = int(r.integers(2, min(20, n // 2) + 1))
    X = r.standard_normal((n, p)) * r.uniform(0.3, 3.0, p)
    y = X @ r.standard_normal(p) + r.standard_normal(n)
    return X, y


def test_ac01_closed_form_gd_equivalence(record_property):
    record_property("criterion", "1 closed-form/GD equivalence")
    r = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        X, y = _random_problem(r)
        smin = np.linalg.eigvalsh(sample_covariance(X))[0]
        pr = RegressionProblem(X, y, 0.5 * smin)
        cert = gd_certificate(pr.covariance(), pr.lam)
        res = gd_solve(pr, eta=cert.eta_star, tol=1e-10)
        worst = max(worst, float(np.linalg.norm(res.theta - closed_form_solve(pr))))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-8, worst
    assert elapsed < 30, elapsed


def test_ac02_spectral_safety_gate(record_property):
    record_property("criterion", "2 spectral safety gate")
    r = np.random.default_rng(2)
    for _ in range(50):
        X, y = _random_problem(r)
        smin = np.linalg.eigvalsh(sample_covariance(X))[0]
        theta = closed_form_solve(RegressionProblem(X, y, 0.99 * smin))
        assert np.all(np.isfinite(theta))
        with pytest.raises(UnsafeLambdaError):
            closed_form_solve(RegressionProblem(X, y, 1.01 * smin))
    Sigma = np.diag([1.0, 0.5])
    assert abs(hessian_min_eig(Sigma, 0.75) - (-0.25)) <= 1e-12
    X = np.array([[np.sqrt(2.0), 0.0], [0.0, 1.0]])  # X'X / 2 = diag(1, 0.5)
    pr = RegressionProblem(X, np.zeros(2), 0.75)
    np.testing.assert_allclose(pr.covariance(), Sigma, atol=1e-15)
    tail = divergence_probe(pr, [10.0, 100.0, 1000.0, 1e4])
    assert np.all(np.diff(tail) < 0)


def test_ac03_optimism_identity(record_property):
    record_property("criterion", "3 optimism identity")
    r = np.random.default_rng(3)
    X = r.standard_normal((200, 10))
    f = X @ r.standard_normal(10)
    smin = np.linalg.eigvalsh(sample_covariance(X))[0]
    t0 = time.perf_counter()
    res = optimism_monte_carlo(X, f, 0.3 * smin, tau=1.0, draws=2000, seed=0)
    elapsed = time.perf_counter() - t0
    print(f"optimism: discrepancy {res.discrepancy:.3e}, SE {res.standard_error:.3e}, "
          f"residual term {res.residual_term:.4f}")
    assert abs(res.discrepancy) <= 3 * res.standard_error
    assert elapsed < 60


def test_ac04_dof_targeting(record_property):
    record_property("criterion", "4 dof targeting")
    r = np.random.default_rng(4)
    for _ in range(100):
        p = int(r.integers(2, 15))
        sigma = np.sort(r.uniform(0.05, 10.0, p))[::-1]
        n = int(r.integers(p + 1, 10 * p))
        probe = DofTarget(1.0, n, sigma)
        hi = dof(probe.sigma, probe.upper)
        kappa = (p + r.uniform(0.02, 0.98) * (hi - p)) / n
        target = DofTarget(kappa, n, sigma)
        sols = {m: solve_dof_target(target, method=m) for m in ("hybrid", "bisection", "newton")}
        for s in sols.values():
            assert abs(dof(target.sigma, s.lam) / n - kappa) <= 1e-10
        lams = [s.lam for s in sols.values()]
        assert max(lams) - min(lams) <= 1e-8
    sol = solve_dof_target(DofTarget(0.25, 10, [1.0, 0.5]))
    assert abs(sol.lam - 0.12988) <= 1e-4


def test_ac05_dof_monotone_and_lipschitz(record_property):
    record_property("criterion", "5 dof monotonicity and Lipschitz bound")
    r = np.random.default_rng(5)
    violations = 0
    for _ in range(100):
        sigma = r.uniform(0.05, 10.0, int(r.integers(1, 12)))
        smin, smax, rank = sigma.min(), sigma.max(), sigma.size
        grid = np.linspace(0, 0.95 * smin, 200)
        vals = np.array([dof(sigma, lam) for lam in grid])
        violations += int(np.sum(np.diff(vals) <= 0))
        for _ in range(50):
            l1, l2 = np.sort(r.uniform(0, 0.95 * smin, 2))
            gap = dof(sigma, l2) - dof(sigma, l1)
            bound = (l2 - l1) * rank * smax / (smin - l2) ** 2
            violations += int(not (0 <= gap <= bound * (1 + 1e-12)))
    assert violations == 0


def test_ac06_classification_boundedness(record_property):
    record_property("criterion", "6 classification boundedness")
    ds = separable_blobs(200, 2, margin=1.0, seed=6)
    u = ds.meta["direction"]
    W = np.stack([-u, u], axis=1)
    lam = 1e-3
    obj = lambda t: ar_objective(linear_net(W * t), ds.X, ds.y, lam, need_grad=False).value  # noqa: E731
    assert obj(1000.0) <= obj(10.0) - 1e3 * lam
    spec = MarginRewardSpec("capped_hinge", 1.0)
    r = np.random.default_rng(6)
    net = ShallowNet.init([2, 8, 2], seed=0)
    worst = np.inf
    for _ in range(1000):
        net.set_flat(r.standard_normal(net.n_params) * r.uniform(0.1, 100.0))
        v = ar_objective(net, ds.X, ds.y, lam, "bounded_margin", margin_spec=spec,
                         need_grad=False).value
        worst = min(worst, v)
    assert worst >= -lam * spec.phi_max


SPIKE = DatasetSpec("spike", "regression", "synthetic", generator="spiked_spectrum",
                    params={"n": 1000, "sigma": [25.0, 4.0, 1.0, 0.25, 0.04], "tau": 0.5},
                    standardize=False)


def test_ac07_safety_ablation_direction(record_property):
    record_property("criterion", "7 safety ablation direction")
    pool, test = SPIKE.prepare()
    blown, within = 0, 0
    for seed in range(8):
        grid = default_grid("regression", seeds=[seed], epochs=100, patience=None)
        base = run_cell(SPIKE, pool, test, grid, 1.0, seed, "sgdm", 0.0)
        on = run_cell(SPIKE, pool, test, grid, 1.0, seed, "sgdm", 1e-2, ("constant_lambda",))
        off = run_cell(SPIKE, pool, test, grid, 1.0, seed, "sgdm", 1e-2,
                       ("constant_lambda", "no_grad_clip", "no_trust_region"))
        _collect([base, on, off])
        assert not on.row.diverged and on.row.rmse is not None
        if off.row.diverged or off.row.rmse is None or off.row.rmse > 10 * on.row.rmse:
            blown += 1
        if on.row.rmse <= 2 * base.row.rmse:
            within += 1
        print(f"seed {seed}: baseline {base.row.rmse:.4f} safety-on {on.row.rmse:.4f} "
              f"safety-off {'diverged' if off.row.diverged else off.row.rmse}")
    assert blown >= 6, blown
    assert within == 8, within


def test_ac08_benefit_direction(record_property):
    record_property("criterion", "8 AR benefit direction at small fractions")
    theta = np.random.default_rng(0).standard_normal(5)
    tau = float(np.linalg.norm(theta))  # signal and noise variance match: R^2 = 0.5
    spec = DatasetSpec("lingauss", "regression", "synthetic", generator="linear_gaussian",
                       params={"n": 1500, "p": 5, "tau": tau, "theta": theta.tolist()})
    grid = default_grid("regression", seeds=list(range(8)), epochs=100)
    t0 = time.perf_counter()
    out = run_grid(grid, spec, output_dir=False)
    elapsed = time.perf_counter() - t0
    _collect(out.cells)
    best = {(s["fraction"], s["optimizer"]): s["best_lambda0"] for s in out.summary}
    lines = {(ln.fraction, ln.optimizer, ln.lambda0): ln
             for ln in paired_report(out.rows, metrics=["rmse"])}
    fr = sorted(grid.fractions)
    failures = []
    for opt in grid.optimizers:
        for f in fr:
            lam = best[(f, opt)]
            ln = lines.get((f, opt, lam))
            delta, se = (ln.delta, ln.delta_se) if ln else (0.0, 0.0)
            print(f"{opt} fraction {f}: best lambda0 {lam:g}, dRMSE {delta:+.3e} (SE {se:.3e})")
            if f in fr[:2] and not delta < 0:
                failures.append(f"{opt}@{f}: dRMSE {delta:+.4f} not negative")
            if f == fr[-1] and abs(delta) > 2 * se:
                failures.append(f"{opt}@{f}: |dRMSE| {abs(delta):.4f} > 2 SE")
    assert elapsed < 600
    assert not failures, "; ".join(failures)


def test_ac09_schedule_exactness(record_property):
    record_property("criterion", "9 schedule exactness")
    for alpha in (0.25, 0.5, 0.75, 1.0, 1.5):
        cfg = ARConfig(lam0=0.01, n0=50, alpha=alpha)
        ratio = power_decay(cfg, 200) / power_decay(cfg, 50)
        assert abs(ratio - 4.0 ** -alpha) <= 1e-14
    zone = SafetyZone.for_task("regression")
    assert trigger_update(zone, [(0.50, 1.0), (0.55, 1.0)], False) == 0.5
    assert trigger_update(zone, [(0.20, 1.0), (0.20, 1.0)], False) == 1.0
    assert trigger_update(zone, [(0.20, 1.0), (0.05, 1.0)], True) == 1.5
    sched = LambdaSchedule(ARConfig(lam0=0.01, n0=50, trigger_enabled=True))
    for rc, val in ((0.5, 1.0), (0.5, 0.9)):
        sched.record_epoch(rc, 1.0, val)
    assert sched.value(50) == pytest.approx(0.005, rel=1e-14)


def test_ac11_statistics(record_property):
    record_property("criterion", "11 statistics correctness")
    from test_diagnostics import enumerate_wilcoxon, t_two_sided

    from antireg.diagnostics import PairedSample, holm_bonferroni, paired_t_test, wilcoxon_signed_rank

    r = np.random.default_rng(11)
    for n in range(1, 9):
        for _ in range(25):
            d = np.round(r.standard_normal(n), 1)
            if np.all(d == 0):
                continue
            assert wilcoxon_signed_rank(d).p_value == pytest.approx(enumerate_wilcoxon(d), abs=1e-12)
    np.testing.assert_allclose(holm_bonferroni([0.01, 0.04]), [0.02, 0.04], rtol=1e-15)
    res = paired_t_test(PairedSample.from_differences([1, 2, 3, 4, 5]))
    oracle = t_two_sided(res.statistic, 4)
    assert abs(res.p_value - oracle) <= 1e-10
    assert abs(res.p_value - 0.0132) <= 5e-4


def _fd_grad(net, f, h=1e-6):
    theta = net.flatten()
    out = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        net.set_flat(theta + e)
        up = f()
        net.set_flat(theta - e)
        out[k] = (up - f()) / (2 * h)
    net.set_flat(theta)
    return out


def test_ac12_gradient_checks(record_property):
    record_property("criterion", "12 gradient checks")
    r = np.random.default_rng(12)
    worst = 0.0
    for k in range(20):
        p, h, c = int(r.integers(2, 5)), int(r.integers(3, 7)), int(r.integers(2, 4))
        task = "classification" if k % 2 == 0 else "regression"
        net = ShallowNet.init([p, h, c if task == "classification" else 1], seed=k)
        X = r.standard_normal((8, p))
        y = r.integers(0, c, 8) if task == "classification" else r.standard_normal(8)
        reward = ("negative_l2", "l2", "bounded_margin", "none")[k % 4] if task == "classification" \
            else ("negative_l2", "l2")[k % 2]
        spec = MarginRewardSpec("sigmoid", 1.0, 0.8)
        analytic = net.flatten(ar_objective(net, X, y, 0.05, reward, task, spec).grads)
        fd = _fd_grad(net, lambda: ar_objective(net, X, y, 0.05, reward, task, spec,  # noqa: B023
                                                need_grad=False).value)
        worst = max(worst, np.linalg.norm(analytic - fd) / max(1.0, np.linalg.norm(fd)))
        # the kernel is the Gram matrix of the Jacobian; check the Jacobian entries and K
        J = net.jacobian(X)
        for o in range(J.shape[1]):
            fdJ = np.stack([_fd_grad(net, lambda i=i: net.forward(X)[i, o]) for i in range(X.shape[0])])
            worst = max(worst, np.linalg.norm(J[:, o] - fdJ) / max(1.0, np.linalg.norm(fdJ)))
        K = empirical_ntk(net, X).K
        np.testing.assert_allclose(K, np.einsum("iko,jko->ij", J, J), rtol=1e-12, atol=1e-12)
    assert worst <= 1e-5, worst


def test_ac13_stability_scaling(record_property):
    record_property("criterion", "13 stability-bound scaling")
    L, G, mu, alpha_R, n0 = 1.0, 2.0, 0.5, 1.0, 100
    cfg = ARConfig(lam0=0.4, n0=n0, alpha=1.0)
    n = 10_000 * n0
    beta = stability_bound(L, G, n, mu, alpha_R, power_decay(cfg, n))
    assert abs(beta * n * mu / (2 * L * G) - 1.0) <= 0.01


def _metric_csv(rows):
    lines = rows_to_csv(rows).splitlines()
    header = lines[0].split(",")
    drop = header.index("runtime_s")
    return [",".join(v for j, v in enumerate(ln.split(",")) if j != drop) for ln in lines]


def test_ac14_csv_determinism(record_property, tmp_path):
    record_property("criterion", "14 CSV determinism")
    spec = DatasetSpec("mix", "classification", "synthetic", generator="gaussian_mixture",
                       params={"n": 600, "p": 4, "n_classes": 3, "seed": 1})
    grid = default_grid("classification", fractions=[0.25, 0.5], seeds=[0, 1], lambda0=[1e-2],
                        optimizers=["adam", "sgdm"], epochs=5, hidden=[16])
    a = run_grid(grid, spec, output_dir=tmp_path / "a")
    b = run_grid(grid, spec, output_dir=tmp_path / "b")
    _collect(a.cells + b.cells)
    assert len(a.rows) == 16
    assert _metric_csv(a.rows) == _metric_csv(b.rows)
    text_a, text_b = (p.read_text() for p in (a.csv_path, b.csv_path))
    assert [ln.split(",")[:18] for ln in text_a.splitlines()] == \
        [ln.split(",")[:18] for ln in text_b.splitlines()]


def test_ac10_trust_region_invariant(record_property):
    """Runs last so the module's other training runs are included."""
    record_property("criterion", "10 trust-region invariant")
    spec = DatasetSpec("mix", "classification", "synthetic", generator="gaussian_mixture",
                       params={"n": 400, "p": 3, "n_classes": 3, "separation": 4.0})
    grid = default_grid("classification", fractions=[1.0], seeds=[0], lambda0=[0.3],
                        optimizers=["adam"], epochs=30, hidden=[16], trust_radii=[2.0, 2.0],
                        patience=None)
    out = run_grid(grid, spec, output_dir=False)
    _collect(out.cells)
    ar = [c for c in out.cells if c.row.lambda0 > 0]
    assert ar and ar[0].row.r_proj > 0  # the radius binds, so the check is not vacuous
    print(f"{len(NORM_EXCESS)} trust-region runs, max excess {max(NORM_EXCESS):.3e}")
    assert max(NORM_EXCESS) <= 1e-12
