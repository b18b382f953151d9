"""Deterministic SINR power minimisation and the multiuser baselines."""

import numpy as np
import pytest
from conftest import mu_instance

from irs_outage import multiuser as mu
from irs_outage.outage import OutageSpec, mc_outage


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def test_sinr_power_min_meets_targets_with_equality(rng):
    K, N, M = 3, 4, 4
    H = crandn(rng, K, N + 1, M)
    v = np.exp(2j * np.pi * rng.uniform(size=N))
    specs = [OutageSpec(eta=e, epsilon=0.1, sigma2=0.1) for e in (1.0, 2.0, 0.5)]
    sol = mu.sinr_power_min(H, v, specs)
    s = mu.sinr(H, v, sol.W, specs)
    np.testing.assert_allclose(s, [1.0, 2.0, 0.5], rtol=1e-6)
    assert sol.power == pytest.approx(np.sum(np.abs(sol.W) ** 2))


def test_sinr_power_min_strong_duality(rng):
    """Downlink power equals the sum of the optimal uplink (dual) powers.

    The channels are noise-normalised inside the solver, so the uplink has
    unit noise and the identity carries no noise factor.
    """
    K, N, M = 2, 3, 3
    H = crandn(rng, K, N + 1, M)
    v = np.exp(2j * np.pi * rng.uniform(size=N))
    sigma2 = 0.2
    specs = [OutageSpec(eta=1.5, epsilon=0.1, sigma2=sigma2)] * K
    sol = mu.sinr_power_min(H, v, specs)
    assert sol.power == pytest.approx(sol.dual.sum(), rel=1e-6)


def test_sinr_power_min_not_beaten_by_random_feasible_designs(rng):
    K, N, M = 2, 3, 3
    H = crandn(rng, K, N + 1, M)
    v = np.exp(2j * np.pi * rng.uniform(size=N))
    specs = [OutageSpec(eta=1.0, epsilon=0.1, sigma2=0.1)] * K
    best = mu.sinr_power_min(H, v, specs).power
    h = mu.effective_rows(H, v)
    for _ in range(300):
        U = crandn(rng, K, M)
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        C = np.abs(h @ U.T) ** 2
        F = -C.copy()
        F[np.diag_indices(K)] = np.diag(C) / 1.0
        p = np.linalg.solve(F, 0.1 * np.ones(K))
        if np.all(p > 0):
            assert p.sum() >= best * (1 - 1e-9)


def test_single_user_reduces_to_mrt(rng):
    N, M = 4, 3
    H = crandn(rng, 1, N + 1, M)
    v = np.exp(2j * np.pi * rng.uniform(size=N))
    spec = OutageSpec(eta=3.0, epsilon=0.1, sigma2=0.05)
    sol = mu.sinr_power_min(H, v, [spec])
    h = mu.effective_rows(H, v)[0]
    assert sol.power == pytest.approx(3.0 * 0.05 / np.linalg.norm(h) ** 2, rel=1e-10)
    w = sol.W[0]
    assert abs(np.vdot(h.conj(), w)) == pytest.approx(np.linalg.norm(h) * np.linalg.norm(w), rel=1e-10)


def test_infeasible_targets_raise():
    H = np.zeros((2, 3, 1), complex)
    H[:, 0, 0] = 1.0
    specs = [OutageSpec(eta=2.0, epsilon=0.1, sigma2=1.0)] * 2
    with pytest.raises(mu.InfeasibleSINR):
        mu.sinr_power_min(H, np.zeros(2), specs)


def test_non_robust_baseline_violates_outage():
    """Designing on the estimates as if exact misses the 10% outage target."""
    H, ems, specs = mu_instance(K=2, N=8)
    sol = mu.non_robust_baseline(H, specs)
    mc = mc_outage(sol.W, sol.v, H, ems, specs, 20_000, np.random.default_rng(0))
    assert np.all(mc.outage > 0.1 + 3 * mc.stderr)
    np.testing.assert_allclose(mu.sinr(H, sol.v, sol.W, specs), specs[0].eta, rtol=1e-6)


def test_progressive_thresholding_contract():
    H, ems, specs = mu_instance(K=2, N=8)
    sol = mu.progressive_thresholding_mu(H, ems, specs, rng=0)
    assert not sol.flagged
    seed = np.random.default_rng(0).integers(2 ** 63)     # the search's common random numbers
    mc = mc_outage(sol.W, sol.v, H, ems, specs, 10_000, np.random.default_rng(seed))
    assert np.all(mc.outage <= 0.1)
    nr = mu.non_robust_baseline(H, specs)
    assert sol.power >= nr.power
    assert sol.eta_margin_db > 0


def test_progressive_thresholding_finds_first_passing_step():
    """Doubling plus bisection returns the same step as a linear scan."""
    H, ems, specs = mu_instance(K=2, N=6, seed=1)
    delta = 0.25
    sol = mu.progressive_thresholding_mu(H, ems, specs, delta_eta_db=delta, rng=4)
    m_star = round(sol.eta_margin_db / delta)
    seed = np.random.default_rng(4).integers(2 ** 63)
    eta = np.array([s.eta for s in specs])
    v0 = mu.msp_multiuser(H, specs)
    for m in range(m_star + 1):
        v, W, _ = mu.alternating_design(H, v0, specs, eta * 10 ** (m * delta / 10), 1)
        mc = mc_outage(W, v, H, ems, specs, 10_000, np.random.default_rng(seed))
        assert np.all(mc.outage <= 0.1) == (m == m_star)


def test_msp_multiuser_is_discrete_and_beats_random(rng):
    H, _, specs = mu_instance(K=2, N=8)
    v = mu.msp_multiuser(H, specs)
    assert np.allclose(np.abs(v), 1) and np.allclose(v.imag, 0, atol=1e-12)

    def total(x):
        return np.sum(np.abs(mu.effective_rows(H, x)) ** 2)

    rand = [total(np.sign(rng.standard_normal(8)) + 0j) for _ in range(200)]
    assert total(v) >= max(rand) * (1 - 1e-12)
