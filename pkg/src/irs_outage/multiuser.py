"""Deterministic multiuser beamforming and the multiuser baselines.

``sinr_power_min`` solves ``min sum ||w_k||^2`` subject to deterministic
SINR targets at a fixed reflection vector through uplink-downlink duality
(fixed-point iteration on the dual uplink powers). The baselines built on it
are the non-robust design, which treats the estimates as the truth, and the
progressive thresholding scheme, which inflates the SINR targets until the
Monte-Carlo outage meets the requirement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import phases
from .channels import augment
from .estimation import ErrorModel
from .outage import _as_specs, mc_outage
from .single_user import WSMaxConfig, pdd_weighted_sum


class InfeasibleSINR(ValueError):
    """Deterministic SINR targets cannot be met at the given reflection vector."""


@dataclass
class PowerMinSolution:
    W: np.ndarray          # (K, M), row k = w_k
    power: float
    dual: np.ndarray       # uplink powers; power = sum(dual) at the optimum
    iterations: int


@dataclass
class MultiuserSolution:
    v: np.ndarray
    W: np.ndarray
    power: float
    iterations: int
    eta_margin_db: float = 0.0
    flagged: bool = False


def effective_rows(H_bar, v) -> np.ndarray:
    """Rows ``v~^H H~_k`` (K, M)."""
    return np.einsum("i,kim->km", augment(v).conj(), np.asarray(H_bar, dtype=complex))


def _stack(H_bar):
    H_bar = np.asarray(H_bar, dtype=complex)
    return H_bar[None] if H_bar.ndim == 2 else H_bar


def sinr_power_min(H_bar, v, specs, eta=None, tol: float = 1e-12, max_iter: int = 100_000) -> PowerMinSolution:
    """Minimum-power precoders meeting ``SINR_k >= eta_k`` on the channels ``H_bar`` at ``v``.

    Uses the fixed point ``lam_k = 1 / ((1 + 1/eta_k) g_k^H (I + sum_j lam_j g_j g_j^H)^{-1} g_k)``
    on noise-normalised channels ``g_k``, receive-filter directions as the
    downlink beam directions, and the linear system that meets every target
    with equality.
    """
    H_bar = _stack(H_bar)
    K, _, M = H_bar.shape
    specs = _as_specs(specs, K)
    eta = np.array([s.eta for s in specs]) if eta is None else np.broadcast_to(np.asarray(eta, float), (K,))
    sigma2 = np.array([s.sigma2 for s in specs])
    G = effective_rows(H_bar, v).conj() / np.sqrt(sigma2)[:, None]   # column k = g_k
    lam = np.zeros(K)
    I = np.eye(M)
    for it in range(1, max_iter + 1):
        S = I + (G.T * lam) @ G.conj()
        X = np.linalg.solve(S, G.T)                                  # columns S^{-1} g_k
        q = np.real(np.einsum("km,mk->k", G.conj(), X))
        new = 1.0 / ((1.0 + 1.0 / eta) * q)
        if not np.all(np.isfinite(new)) or new.sum() > 1e15:
            raise InfeasibleSINR("dual fixed point diverged")
        done = np.max(np.abs(new - lam)) <= tol * max(new.max(), 1e-300)
        lam = new
        if done:
            break
    S = I + (G.T * lam) @ G.conj()
    U = np.linalg.solve(S, G.T)
    U = U / np.linalg.norm(U, axis=0)                                # unit directions
    C = np.abs(G.conj() @ U) ** 2                                    # C[k, j] = |g_k^H u_j|^2
    F = -C.copy()
    F[np.diag_indices(K)] = np.diag(C) / eta
    p = np.linalg.solve(F, np.ones(K))
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise InfeasibleSINR("targets not achievable")
    W = (U * np.sqrt(p)).T
    return PowerMinSolution(W=W, power=float(p.sum()), dual=lam, iterations=it)


def sinr(H_bar, v, W, specs) -> np.ndarray:
    """Deterministic SINR of every user on the channels ``H_bar``."""
    H_bar = _stack(H_bar)
    specs = _as_specs(specs, H_bar.shape[0])
    sigma2 = np.array([s.sigma2 for s in specs])
    P = np.abs(effective_rows(H_bar, v) @ np.asarray(W).T) ** 2
    sig = np.diag(P)
    return sig / (P.sum(axis=1) - sig + sigma2)


def _null_error_model(N: int) -> ErrorModel:
    Z = np.zeros((N + 1, N + 1), dtype=complex)
    return ErrorModel(V_bar=Z, p_u=1.0, eps2=0.0, sampling_matrix=Z)


def msp_multiuser(H_bar, specs, config: WSMaxConfig = WSMaxConfig()) -> np.ndarray:
    """Reflection vector maximising ``sum_k ||v~^H H_bar_k||^2 / sigma_k^2`` over the phase set."""
    H_bar = _stack(H_bar)
    K, N1, M = H_bar.shape
    specs = _as_specs(specs, K)
    sigma = np.sqrt([s.sigma2 for s in specs])
    stacked = np.concatenate([H_bar[k] / sigma[k] for k in range(K)], axis=1)
    return pdd_weighted_sum(stacked, _null_error_model(N1 - 1), 0.0, config).v


def non_robust_baseline(H_bar, specs, config: WSMaxConfig = WSMaxConfig()) -> MultiuserSolution:
    """Design on the estimates as if they were exact (raises ``InfeasibleSINR``)."""
    v = msp_multiuser(H_bar, specs, config)
    sol = sinr_power_min(H_bar, v, specs)
    return MultiuserSolution(v=v, W=sol.W, power=sol.power, iterations=sol.iterations)


def _min_ratio(H_bar, v, W, eta, sigma2):
    P = np.abs(effective_rows(H_bar, v) @ W.T) ** 2
    sig = np.diag(P)
    return float(np.min(sig / (P.sum(axis=1) - sig + sigma2) / eta))


def _bcd_phases(H_bar, v, W, eta, sigma2, Q, max_sweeps=20):
    """Per-element sweeps maximising ``min_k SINR_k / eta_k`` at fixed precoders."""
    alph = phases.alphabet(Q)
    v = v.copy()
    best = _min_ratio(H_bar, v, W, eta, sigma2)
    for _ in range(max_sweeps):
        changed = False
        for n in range(v.size):
            cur = v[n]
            for c in alph:
                if np.isclose(c, cur):
                    continue
                v[n] = c
                val = _min_ratio(H_bar, v, W, eta, sigma2)
                if val > best * (1 + 1e-12):
                    best, cur, changed = val, c, True
            v[n] = cur
        if not changed:
            break
    return v


def alternating_design(H_bar, v0, specs, eta, Q: int, rounds: int = 5):
    """Alternate SINR power minimisation (fixed v) and phase BCD (fixed w); keep the best."""
    specs = _as_specs(specs, _stack(H_bar).shape[0])
    sigma2 = np.array([s.sigma2 for s in specs])
    v = v0.copy()
    best = None
    for _ in range(rounds):
        try:
            sol = sinr_power_min(H_bar, v, specs, eta=eta)
        except InfeasibleSINR:
            break
        if best is not None and sol.power >= best[2] * (1 - 1e-9):
            break
        best = (v.copy(), sol.W, sol.power)
        v = _bcd_phases(H_bar, v, sol.W, eta, sigma2, Q)
    if best is None:
        raise InfeasibleSINR("no feasible design")
    return best


def progressive_thresholding_mu(H_bar, error_models, specs, delta_eta_db: float = 0.01, Q: int = 1,
                                n_check: int = 10_000, rng=None, max_steps: int = 3000,
                                config: WSMaxConfig = WSMaxConfig()) -> MultiuserSolution:
    """Smallest common SINR-target inflation (multiple of ``delta_eta_db``) whose design meets every outage target.

    The design for a given inflation is deterministic and the outage check
    uses common random numbers, so the first passing step is located by
    doubling and bisection over the step index instead of a linear scan.
    When no inflation up to ``max_steps`` steps passes, the design at the
    largest feasible inflation tried is returned with ``flagged=True``.
    """
    if delta_eta_db <= 0:
        raise ValueError("delta_eta_db must be positive")
    H_bar = _stack(H_bar)
    K = H_bar.shape[0]
    specs = _as_specs(specs, K)
    eta = np.array([s.eta for s in specs])
    eps = np.array([s.epsilon for s in specs])
    seed = np.random.default_rng(rng).integers(2 ** 63)
    v_init = msp_multiuser(H_bar, specs, config)
    cache = {}

    def attempt(m):
        if m not in cache:
            try:
                v, W, p = alternating_design(H_bar, v_init, specs, eta * 10 ** (m * delta_eta_db / 10), Q)
            except InfeasibleSINR:
                cache[m] = None
                return None
            mc = mc_outage(W, v, H_bar, error_models, specs, n_check, np.random.default_rng(seed))
            cache[m] = (v, W, p, bool(np.all(mc.outage <= eps)))
        return cache[m]

    def passes(m):
        r = attempt(m)
        return r is not None and r[3]

    lo, hi = -1, 0
    while not passes(hi):
        lo = hi
        hi = 1 if hi == 0 else 2 * hi
        if hi > max_steps:
            tried = [m for m in sorted(cache) if cache[m] is not None]
            if not tried:
                raise InfeasibleSINR("no feasible deterministic design")
            v, W, p, _ = cache[tried[-1]]
            return MultiuserSolution(v=v, W=W, power=p, iterations=len(cache),
                                     eta_margin_db=tried[-1] * delta_eta_db, flagged=True)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid):
            hi = mid
        else:
            lo = mid
    v, W, p, _ = cache[hi]
    return MultiuserSolution(v=v, W=W, power=p, iterations=len(cache), eta_margin_db=hi * delta_eta_db)
