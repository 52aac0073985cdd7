import numpy as np
import pytest

ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for name, value in report.user_properties:
        if name == "criterion":
            ok = report.passed and ACCEPTANCE.get(value, "PASS") == "PASS"
            ACCEPTANCE[value] = "PASS" if ok else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(f"{ACCEPTANCE[key]}  AC{key}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def spiked_design(n, sigma, seed=0):
    """``X`` whose uncentered covariance ``X'X/n`` has eigenvalues ``sigma`` exactly."""
    sigma = np.asarray(sigma, dtype=float)
    r = np.random.default_rng(seed)
    U, _ = np.linalg.qr(r.standard_normal((n, sigma.size)))
    V, _ = np.linalg.qr(r.standard_normal((sigma.size, sigma.size)))
    return (U * np.sqrt(n * sigma)) @ V.T
