import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import i0e

from irs_outage.channels import augment
from irs_outage.estimation import error_covariance, build_training_pattern
from irs_outage.outage import (OutageSpec, marcum_q1, mc_outage, mrt_precoder, noncentral_chi2_cdf_2dof,
                               outage_from_stats, required_power, signal_stats, single_user_outage)
from irs_outage.single_user import sweep_msp_variance_region

from conftest import su_instance


def marcum_quad(a, b):
    """Q_1(a, b) from its defining integral (scaled Bessel for stability)."""
    f = lambda x: x * np.exp(-0.5 * (x - a) ** 2) * i0e(a * x)
    upper = max(a, b) + 40.0
    val, _ = integrate.quad(f, b, upper, epsabs=1e-13, epsrel=1e-12, limit=500, points=[a] if b < a < upper else None)
    return val


def test_marcum_closed_forms():
    assert marcum_q1(0.0, 1.0) == pytest.approx(np.exp(-0.5), abs=1e-14)
    grid = np.linspace(0, 10, 41)
    assert np.max(np.abs(marcum_q1(0.0, grid) - np.exp(-grid ** 2 / 2))) < 1e-12
    assert np.max(np.abs(marcum_q1(grid, 0.0) - 1.0)) < 1e-12
    with pytest.raises(ValueError):
        marcum_q1(-1.0, 1.0)


def test_marcum_against_quadrature(rng):
    a = rng.uniform(0, 10, 50)
    b = rng.uniform(0, 10, 50)
    got = marcum_q1(a, b)
    ref = np.array([marcum_quad(x, y) for x, y in zip(a, b)])
    assert np.max(np.abs(got - ref)) < 1e-9
    assert marcum_q1(1.0, 2.0) == pytest.approx(marcum_quad(1.0, 2.0), abs=1e-9)


def test_marcum_increasing_in_a():
    a = np.linspace(0, 8, 200)
    for b in (0.5, 2.0, 5.0):
        q = marcum_q1(a, b)
        d = np.diff(q)
        assert np.all(d >= -1e-14)
        assert np.all(d[(q[1:] < 1 - 1e-10) & (q[:-1] > 1e-12)] > 0)


def test_ncx2_cdf_values_and_oracle(rng):
    assert noncentral_chi2_cdf_2dof(2.0, 0.0) == pytest.approx(1 - np.exp(-1), abs=1e-14)
    assert noncentral_chi2_cdf_2dof(0.0, 3.0) == 0.0
    x = rng.uniform(0, 40, 100)
    lam = rng.uniform(0, 40, 100)
    assert np.max(np.abs(noncentral_chi2_cdf_2dof(x, lam) - stats.ncx2.cdf(x, 2, lam))) < 1e-10


def test_ncx2_monte_carlo():
    rng = np.random.default_rng(0)
    n = 1_000_000
    mu = np.sqrt(4.0 / 2)
    s = (rng.standard_normal(n) + mu) ** 2 + (rng.standard_normal(n) + mu) ** 2
    p_hat = np.mean(s <= 3.0)
    assert abs(noncentral_chi2_cdf_2dof(3.0, 4.0) - p_hat) < 3 * np.sqrt(p_hat * (1 - p_hat) / n)


def test_ncx2_monotone_grid():
    x = np.linspace(0, 30, 61)
    lam = np.linspace(0, 30, 61)
    F = noncentral_chi2_cdf_2dof(x[:, None], lam[None, :])
    assert np.all((F >= 0) & (F <= 1))
    assert np.all(np.diff(F, axis=0) >= -1e-15)
    assert np.all(np.diff(F, axis=1) <= 1e-15)


def test_signal_stats_examples(rng):
    em = error_covariance(build_training_pattern(5, 6, Q=None), 2.0, 0.6)
    H = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    v = 0.7 * np.exp(2j * np.pi * rng.uniform(size=5))
    st = signal_stats(v, H, em, 1.0)
    c = em.V_bar[0, 0].real
    assert st.variance_term == pytest.approx(c * (1 + np.sum(np.abs(v) ** 2)), rel=1e-12)
    vt = augment(v)
    assert st.msp == pytest.approx(float(np.real(vt.conj() @ H @ H.conj().T @ vt)), rel=1e-12)
    # scalar case by hand
    em1 = error_covariance(build_training_pattern(1, 2, Q=None), 1.0, 1.0)
    H1 = np.array([[0.3 + 0.1j], [-0.2 + 0.5j]])
    v1 = np.array([np.exp(0.4j)])
    expected = abs(H1[0, 0] + np.conj(v1[0]) * H1[1, 0]) ** 2
    assert signal_stats(v1, H1, em1, 1.0).msp == pytest.approx(expected, rel=1e-12)


def test_outage_special_cases():
    em = error_covariance(build_training_pattern(4, 5, Q=1), 1e-3, 1e-11)
    spec = OutageSpec(eta=10.0, epsilon=0.1, sigma2=1e-11)
    v = np.ones(4)
    H0 = np.zeros((5, 2), dtype=complex)
    s1 = signal_stats(v, H0, em, 1.0).variance_term
    for p in (1e-9, 1e-8, 1e-7):
        ref = 1 - np.exp(-spec.eta * spec.sigma2 / (p * s1))
        assert outage_from_stats(s1, 0.0, p, spec) == pytest.approx(ref, rel=1e-10)
    # degenerate variance: indicator
    assert outage_from_stats(0.0, 1.0, 2 * spec.eta * spec.sigma2, spec) == 0.0
    assert outage_from_stats(0.0, 1.0, 0.5 * spec.eta * spec.sigma2, spec) == 1.0


def test_outage_decreasing_in_power():
    H, em, spec = su_instance()
    v = np.ones(em.N)
    p = np.logspace(-6, -1, 40)
    out = np.array([single_user_outage(v, H, em, x, spec) for x in p])
    assert np.all(np.diff(out) <= 1e-15)


def test_mrt_beats_random_precoders():
    H, em, spec = su_instance(seed=3)
    rng = np.random.default_rng(1)
    v = np.exp(1j * np.pi * rng.integers(0, 2, em.N))
    s1, s2 = signal_stats(v, H, em, 1.0).variance_term, signal_stats(v, H, em, 1.0).msp
    p = float(required_power(s1, s2, spec)[0])
    mrt = single_user_outage(v, H, em, p, spec)
    eff = augment(v).conj() @ H
    for _ in range(100):
        w = rng.standard_normal(H.shape[1]) + 1j * rng.standard_normal(H.shape[1])
        w *= np.sqrt(p) / np.linalg.norm(w)
        # h^H w is complex Gaussian with mean eff.w and variance s1 ||w||^2
        lam = 2 * abs(eff @ w) ** 2 / (s1 * p)
        x = 2 * spec.eta * spec.sigma2 / (s1 * p)
        assert mrt <= stats.ncx2.cdf(x, 2, lam) + 1e-12
    assert np.linalg.norm(mrt_precoder(v, H, p)) ** 2 == pytest.approx(p, rel=1e-12)


def test_single_user_vs_monte_carlo():
    H, em, spec = su_instance(seed=5)
    v = np.exp(1j * np.pi * np.random.default_rng(2).integers(0, 2, em.N))
    st = signal_stats(v, H, em, 1.0)
    p = float(required_power(st.variance_term, st.msp, spec)[0])
    ana = single_user_outage(v, H, em, p, spec)
    mc = mc_outage(mrt_precoder(v, H, p), v, H, em, spec, 100_000, 7)
    assert abs(mc.outage[0] - ana) <= 3 * np.sqrt(ana * (1 - ana) / 100_000)


def test_mc_outage_zero_error_and_scaling():
    H, em, spec = su_instance(seed=2)
    zero = error_covariance(build_training_pattern(em.N, em.N + 1, Q=1), 1.0, 0.0)
    v = np.ones(em.N)
    eff = augment(v).conj() @ H
    w = eff.conj() / np.linalg.norm(eff)
    p_det = spec.eta * spec.sigma2 / np.linalg.norm(eff) ** 2
    assert mc_outage(np.sqrt(1.01 * p_det) * w, v, H, zero, spec, 1000, 0).outage[0] == 0.0
    assert mc_outage(np.sqrt(0.99 * p_det) * w, v, H, zero, spec, 1000, 0).outage[0] == 1.0
    W = np.sqrt(2 * p_det) * w
    a = mc_outage(W, v, H, em, spec, 20_000, 3).outage[0]
    b = mc_outage(np.sqrt(10) * W, v, H, em, spec, 20_000, 3).outage[0]
    assert b <= a


def test_required_power_contract_and_scaling():
    H, em, spec = su_instance(seed=4)
    v = np.ones(em.N)
    st = signal_stats(v, H, em, 1.0)
    p = float(required_power(st.variance_term, st.msp, spec)[0])
    assert single_user_outage(v, H, em, p, spec) <= spec.epsilon + 1e-3
    half = OutageSpec(eta=spec.eta, epsilon=spec.epsilon, sigma2=spec.sigma2 / 2)
    p_half = float(required_power(st.variance_term, st.msp, half)[0])
    assert p_half == pytest.approx(p / 2, rel=1e-3)
    loose = OutageSpec(eta=spec.eta, epsilon=0.2, sigma2=spec.sigma2)
    tight = OutageSpec(eta=spec.eta, epsilon=0.05, sigma2=spec.sigma2)
    assert required_power(st.variance_term, st.msp, loose)[0] <= required_power(st.variance_term, st.msp, tight)[0]


def test_region_sweep_enumeration():
    H, em, spec = su_instance(N=6, seed=1)
    cloud = sweep_msp_variance_region(H, em, spec, Q=1)
    assert cloud.V.shape == (64, 6)
    assert np.all(cloud.s1 >= 0) and np.all(cloud.s2 >= 0)
    b = cloud.best
    # the minimum-power point is not dominated (no point with s1 <= and s2 >=, one strictly)
    dom = (cloud.s1 <= cloud.s1[b]) & (cloud.s2 >= cloud.s2[b]) & \
          ((cloud.s1 < cloud.s1[b]) | (cloud.s2 > cloud.s2[b]))
    assert not dom.any()


def test_region_sweep_continuous_grid():
    H, em, spec = su_instance(N=2, seed=1)
    cloud = sweep_msp_variance_region(H, em, spec, Q=None, grid=16)
    assert cloud.V.shape == (256, 2)
    assert np.allclose(np.abs(cloud.V), 1.0)
    with pytest.raises(ValueError):
        sweep_msp_variance_region(*su_instance(N=4), Q=None)
