"""Shared fixtures: small single-user and multiuser instances."""

import numpy as np
import pytest

from irs_outage.channels import PropagationParams, ScenarioGeometry, synthesize_scenario
from irs_outage.estimation import build_training_pattern, error_covariance
from irs_outage.outage import OutageSpec
from irs_outage.units import db2lin, dbm2watt

SIGMA2 = float(dbm2watt(-80.0))


def su_instance(N=8, M=4, Q=1, p_u_dbm=6.0, eta_db=15.0, epsilon=0.1, seed=0):
    """Single-user instance ``(H_bar, error_model, spec)`` with posterior-mode CSI."""
    geo = ScenarioGeometry(M=M, N=N, K=1)
    pp = PropagationParams(sigma2=SIGMA2)
    H = synthesize_scenario(geo, pp, seed).H_tilde[0]
    em = error_covariance(build_training_pattern(N, N + 1, Q=Q), float(dbm2watt(p_u_dbm)), SIGMA2)
    spec = OutageSpec(eta=float(db2lin(eta_db)), epsilon=epsilon, sigma2=SIGMA2)
    return H, em, spec


def mu_instance(K=2, N=8, M=6, p_u_dbm=18.0, eta_db=5.0, epsilon=0.1, seed=0):
    geo = ScenarioGeometry(M=M, N=N, K=K)
    pp = PropagationParams(sigma2=SIGMA2)
    H = np.array(synthesize_scenario(geo, pp, seed).H_tilde)
    em = error_covariance(build_training_pattern(N, N + 1, Q=1), float(dbm2watt(p_u_dbm)), SIGMA2)
    spec = OutageSpec(eta=float(db2lin(eta_db)), epsilon=epsilon, sigma2=SIGMA2)
    return H, [em] * K, [spec] * K


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ----------------------------------------------------------------------------
# acceptance summary: one line per criterion, printed after the test session

ACCEPTANCE: dict = {}


def record_criterion(number: int, part: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(number, []).append((part, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {'pass' if ok else 'FAIL'} ({d})" for p, ok, d in parts)
        terminalreporter.write_line(f"criterion {number:2d}: {verdict} | {detail}")
