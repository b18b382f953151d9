"""Outage analytics: Marcum Q_1, the 2-dof non-central chi-square CDF,
single-user closed-form outage and Monte-Carlo outage estimation.

Single-user outage with an MRT precoder of power ``p`` and reflection vector
``v`` is ``P(eta*sigma2 / (p*s1/2) | 2, s2 / (s1/2))`` with
``s1 = v~^H V_bar v~`` (error variance term) and ``s2 = v~^H H_bar H_bar^H v~``
(mean signal power).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, gammainc, gammaincc, gammaln, xlogy

from .channels import augment
from .estimation import ErrorModel, sample_csi_errors

# Poisson-mixture window: +-(WINDOW_SIGMAS * sd + WINDOW_PAD) terms around the mode
WINDOW_SIGMAS = 10.0
WINDOW_PAD = 25
# beyond this Poisson mean the Gaussian (Rice -> normal) limit is used
LARGE_MEAN = 1e6
DEGENERATE_RATIO = 1e-14
_MAX_CELLS = 4_000_000


def _check_nonneg(*xs):
    for x in xs:
        if np.any(np.asarray(x) < 0):
            raise ValueError("arguments must be non-negative")


class _PoissonMixture:
    """Weights of the Poisson representation of a 2-dof non-central chi-square.

    Every entry gets its own summation window (``+-`` a fixed number of
    standard deviations around the Poisson mode). Entries are grouped by
    window width so a value never depends on which other entries share the
    batch.
    """

    def __init__(self, lam):
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        self.shape = lam.shape
        mu = lam.ravel() / 2.0
        self.mu = mu
        self.large = mu > LARGE_MEAN
        mu_w = np.where(self.large, 0.0, mu)
        half = np.ceil(WINDOW_SIGMAS * np.sqrt(mu_w) + WINDOW_PAD).astype(int)
        self.groups = []
        for h in np.unique(half[~self.large]):
            idx = np.flatnonzero((half == h) & ~self.large)
            start = np.maximum(np.floor(mu_w[idx]) - h, 0.0)
            j = start[:, None] + np.arange(2 * h + 1)[None, :]
            w = np.exp(xlogy(j, mu_w[idx, None]) - mu_w[idx, None] - gammaln(j + 1.0))
            self.groups.append((idx, j, w))

    def _eval(self, x, fn, tail):
        x = np.broadcast_to(np.asarray(x, dtype=float).ravel(), self.mu.shape)
        out = np.empty(self.mu.shape)
        for idx, j, w in self.groups:
            step = max(1, _MAX_CELLS // j.shape[1])
            for lo in range(0, idx.size, step):
                sl = slice(lo, lo + step)
                out[idx[sl]] = np.sum(w[sl] * fn(j[sl] + 1.0, x[idx[sl], None] / 2.0), axis=1)
        if np.any(self.large):
            a = np.sqrt(2.0 * self.mu[self.large])
            b = np.sqrt(x[self.large])
            out[self.large] = tail(a, b)
        return np.clip(out, 0.0, 1.0).reshape(self.shape)

    def cdf(self, x):
        return self._eval(x, gammainc, lambda a, b: 0.5 * erfc((a - b) / np.sqrt(2.0)))

    def sf(self, x):
        return self._eval(x, gammaincc, lambda a, b: 0.5 * erfc((b - a) / np.sqrt(2.0)))


def marcum_q1(a, b):
    """First-order Marcum Q-function ``Q_1(a, b)``.

    Uses ``Q_1(a, b) = sum_j Pois(j; a^2/2) * Gamma_upper(j + 1, b^2/2)``
    truncated to a window around the Poisson mode. Accurate to ~1e-14 for
    ``a^2/2 <= 1e6``; beyond that the Gaussian limit of the Rice
    distribution is returned.
    """
    _check_nonneg(a, b)
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = _PoissonMixture(a ** 2).sf(b ** 2)
    return out.reshape(a.shape)[()] if a.ndim else float(out.ravel()[0])


def noncentral_chi2_cdf_2dof(x, lam):
    """CDF of a 2-dof non-central chi-square, ``1 - Q_1(sqrt(lam), sqrt(x))``."""
    _check_nonneg(x, lam)
    x, lam = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(lam, dtype=float))
    out = _PoissonMixture(lam).cdf(x)
    return out.reshape(x.shape)[()] if x.ndim else float(out.ravel()[0])


@dataclass(frozen=True)
class OutageSpec:
    eta: float
    epsilon: float
    sigma2: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("SINR target must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("outage target must lie in (0, 1)")
        if self.sigma2 <= 0:
            raise ValueError("noise power must be positive")


@dataclass(frozen=True)
class SignalStats:
    msp: float
    variance_term: float
    p: float

    @property
    def mvr(self) -> float:
        return self.msp / self.variance_term


def quadratic_stats(V_tilde, H_bar, V_bar):
    """``(s1, s2)`` for a batch of augmented vectors (rows of ``V_tilde``)."""
    V_tilde = np.atleast_2d(np.asarray(V_tilde, dtype=complex))
    eff = V_tilde.conj() @ H_bar
    s2 = np.sum(np.abs(eff) ** 2, axis=-1)
    s1 = np.real(np.einsum("bi,ij,bj->b", V_tilde.conj(), V_bar, V_tilde))
    return np.maximum(s1, 0.0), s2


def signal_stats(v, H_bar, error_model: ErrorModel, p: float) -> SignalStats:
    """MSP ``s2(v)`` and variance term ``s1(v)`` for reflection vector ``v``."""
    s1, s2 = quadratic_stats(augment(v), np.asarray(H_bar), error_model.V_bar)
    return SignalStats(msp=float(s2[0]), variance_term=float(s1[0]), p=float(p))


def _degenerate(s1, s2):
    return s1 <= DEGENERATE_RATIO * s2


def outage_from_stats(s1, s2, p, spec: OutageSpec):
    """Closed-form outage for arrays of ``(s1, s2, p)`` (MRT precoding)."""
    s1, s2, p = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s1, s2, p)))
    deg = _degenerate(s1, s2)
    s1_safe = np.where(deg, 1.0, s1)
    lam = np.where(deg, 0.0, 2.0 * s2 / s1_safe)
    with np.errstate(divide="ignore"):
        x = np.where(deg, 0.0, 2.0 * spec.eta * spec.sigma2 / (p * s1_safe))
    out = _PoissonMixture(lam).cdf(np.minimum(x, 1e300)).reshape(s1.shape)
    out = np.where(deg, (p * s2 < spec.eta * spec.sigma2).astype(float), out)
    return out[()] if out.ndim else float(out)


def single_user_outage(v, H_bar, error_model: ErrorModel, p: float, spec: OutageSpec) -> float:
    """Outage probability of the MRT link at power ``p``."""
    if p <= 0:
        raise ValueError("transmit power must be positive")
    st = signal_stats(v, H_bar, error_model, p)
    return float(outage_from_stats(st.variance_term, st.msp, p, spec))


def required_power(s1, s2, spec: OutageSpec, p_delta_rel: float = 1e-4, eps_delta: float = 1e-3,
                   growth: float = 10.0, max_iter: int = 200):
    """Bisection for the minimum MRT power meeting the outage target.

    Vectorised over ``(s1, s2)``; each entry runs its own bisection: start at
    ``p_l = 0`` and ``p_u`` grown geometrically from the noiseless power
    until the outage is below epsilon, then halve until
    ``p_u - p_l <= p_delta_rel * p_u`` and ``|C(p_mid) - eps| < eps_delta``.
    Returns ``p_u`` (always feasible).
    """
    s1 = np.atleast_1d(np.asarray(s1, dtype=float))
    s2 = np.atleast_1d(np.asarray(s2, dtype=float))
    if np.any(s2 <= 0):
        raise ValueError("zero mean signal power: outage target unreachable at any power")
    deg = _degenerate(s1, s2)
    target = spec.eta * spec.sigma2
    lam = np.where(deg, 0.0, 2.0 * s2 / np.where(deg, 1.0, s1))
    mix = _PoissonMixture(lam)
    s1_safe = np.where(deg, 1.0, s1)

    def outage(p):
        return mix.cdf(2.0 * target / (p * s1_safe))

    p_u = target / s2
    active = ~deg
    for _ in range(400):
        c = outage(p_u)
        grow = active & (c >= spec.epsilon)
        if not grow.any():
            break
        p_u = np.where(grow, p_u * growth, p_u)
    else:
        raise RuntimeError("outage floor above target even at very large power")

    p_l = np.zeros_like(p_u)
    done = deg.copy()
    for _ in range(max_iter):
        if done.all():
            break
        p_mid = 0.5 * (p_l + p_u)
        c = outage(p_mid)
        feas = c < spec.epsilon
        upd = ~done
        p_u = np.where(upd & feas, p_mid, p_u)
        p_l = np.where(upd & ~feas, p_mid, p_l)
        done = done | ((p_u - p_l <= p_delta_rel * p_u) & (np.abs(c - spec.epsilon) < eps_delta))
    return np.where(deg, target / s2, p_u)


def mrt_precoder(v, H_bar, p: float) -> np.ndarray:
    """``sqrt(p) * (v~^H H_bar)^H / ||v~^H H_bar||``."""
    eff = augment(v).conj() @ np.asarray(H_bar)
    return np.sqrt(p) * eff.conj() / np.linalg.norm(eff)


def sinr_samples(W, v, H_tilde_samples, sigma2) -> np.ndarray:
    """SINR of every user on every channel sample.

    ``H_tilde_samples``: (n, K, N+1, M); ``W``: (K, M) with row j = w_j.
    """
    eff = np.einsum("i,nkim->nkm", augment(v).conj(), H_tilde_samples)
    g = np.abs(eff @ np.asarray(W).T) ** 2  # (n, k, j): |h_k^H w_j|^2
    sig = np.einsum("nkk->nk", g)
    interf = g.sum(axis=-1) - sig
    return sig / (interf + np.asarray(sigma2, dtype=float))


@dataclass(frozen=True)
class MCOutage:
    outage: np.ndarray
    stderr: np.ndarray
    n_samples: int


def _as_specs(specs, K):
    if isinstance(specs, OutageSpec):
        return [specs] * K
    specs = list(specs)
    if len(specs) != K:
        raise ValueError("need one OutageSpec per user")
    return specs


def mc_outage(W, v, H_bar, error_models, specs, n_samples: int, rng, chunk: int = 20000) -> MCOutage:
    """Monte-Carlo outage ``Pr(SINR_k < eta_k)`` with true channels ``H_bar - dH``.

    ``H_bar`` is (K, N+1, M), ``W`` is (K, M), ``error_models`` one per user.
    Reports binomial standard errors.
    """
    if n_samples < 1000:
        raise ValueError("use at least 1e3 samples")
    H_bar = np.asarray(H_bar, dtype=complex)
    if H_bar.ndim == 2:
        H_bar = H_bar[None]
    K, _, M = H_bar.shape
    W = np.atleast_2d(np.asarray(W, dtype=complex))
    if isinstance(error_models, ErrorModel):
        error_models = [error_models] * K
    specs = _as_specs(specs, K)
    eta = np.array([s.eta for s in specs])
    sigma2 = np.array([s.sigma2 for s in specs])
    rng = np.random.default_rng(rng)
    counts = np.zeros(K)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        dH = np.stack([sample_csi_errors(error_models[k], M, n, rng) for k in range(K)], axis=1)
        sinr = sinr_samples(W, v, H_bar[None] - dH, sigma2)
        counts += np.sum(sinr < eta, axis=0)
        done += n
    p_hat = counts / n_samples
    return MCOutage(outage=p_hat, stderr=np.sqrt(p_hat * (1 - p_hat) / n_samples), n_samples=n_samples)
