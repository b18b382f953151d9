"""Two-stage constrained stochastic SCA for the multiuser outage problem.

The composite variable stacks the precoders and the relaxed reflection
vector, ``varpi = [w_1; ...; w_K; v]``. Stage one optimises both with
``|v_n| <= 1``; the reflection vector is then quantised onto the phase
alphabet and stage two refines the precoders alone.

Internally the per-user channel samples are scaled by
``sqrt(p_ref / (kappa_k sigma_k^2))``: the precoders are then of order one
(``p_ref`` is the power of the initial point) and the QoS margin is measured
in a unit ``kappa_k sigma_k^2`` chosen so that the smooth part of the step
approximation covers the spread of the initial margins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ballqcqp import (complete_to_ball, solve_min_quadratic_over_balls,
                       solve_minmax_feasibility, surrogate_value)
from .channels import augment
from .estimation import ErrorModel
from .outage import _as_specs, mc_outage
from .phases import quantize_phases, random_unit_modulus


# ----------------------------------------------------------------------------
# smooth step
# ----------------------------------------------------------------------------

def sigmoid(x, vartheta: float):
    """Smooth step ``1 / (1 + exp(-vartheta x))``, evaluated without overflow."""
    t = vartheta * np.asarray(x, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def clip_slope(vartheta: float, zeta: float) -> float:
    """Slope of the linear extensions, ``vartheta e^{-zeta} / (1 + e^{-zeta})^2``."""
    return vartheta * np.exp(-zeta) / (1.0 + np.exp(-zeta)) ** 2


def smooth_step(x, vartheta: float = 100.0, zeta: float = 8.0):
    """Piecewise step approximation: sigmoid inside ``|vartheta x| < zeta``, linear outside.

    The linear pieces pass through the origin with the sigmoid slope at the
    clip point, so the derivative is continuous while the value jumps at
    ``|vartheta x| = zeta``. Only the derivative enters the algorithm.
    """
    x = np.asarray(x, dtype=float)
    t = vartheta * x
    lin = clip_slope(vartheta, zeta) * x
    return np.where(np.abs(t) < zeta, sigmoid(x, vartheta), lin)


def smooth_step_deriv(x, vartheta: float = 100.0, zeta: float = 8.0):
    """``vartheta e^{-zbar} / (1 + e^{-zbar})^2`` with ``zbar = clip(vartheta x, -zeta, zeta)``."""
    zbar = np.clip(vartheta * np.asarray(x, dtype=float), -zeta, zeta)
    e = np.exp(-np.abs(zbar))  # symmetric in zbar
    return vartheta * e / (1.0 + e) ** 2


# ----------------------------------------------------------------------------
# variables and configuration
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositeVariable:
    """Index layout of ``varpi = [w_1; ...; w_K; v]`` (length ``K M + N``)."""

    K: int
    M: int
    N: int

    @property
    def size(self) -> int:
        return self.K * self.M + self.N

    def B(self, k: int) -> slice:
        return slice(k * self.M, (k + 1) * self.M)

    @property
    def A(self) -> slice:
        return slice(self.K * self.M, self.size)

    @property
    def w_idx(self) -> np.ndarray:
        return np.arange(self.K * self.M)

    @property
    def v_idx(self) -> np.ndarray:
        return np.arange(self.K * self.M, self.size)

    def pack(self, W, v) -> np.ndarray:
        W = np.asarray(W, dtype=complex).reshape(self.K, self.M)
        return np.concatenate([W.ravel(), np.asarray(v, dtype=complex)])

    def unpack(self, varpi):
        varpi = np.asarray(varpi)
        return varpi[: self.K * self.M].reshape(self.K, self.M), varpi[self.A]


@dataclass(frozen=True)
class CsscaConfig:
    """Algorithm parameters. ``L`` and ``T_H`` default to desk scale (full scale: ``L = 1e5``)."""

    rho_exp: float = 0.5
    gamma_exp: float = 0.6
    vartheta: float = 100.0
    zeta: float = 8.0
    tau: float = 0.1
    L: int = 1000
    T_H: int = 200
    xi_o: float = 1e-3
    window: int = 5
    min_iters: int = 10
    max_iters_stage1: int = 100
    max_iters_stage2: int = 100
    feas_tol: float = 0.02
    stop_tol: float = 0.005
    n_calibrate: int = 20_000
    n_verify: int = 100_000
    Q: int = 1
    z_spread: float | None = 1.0

    def __post_init__(self):
        if self.vartheta <= 0 or self.zeta <= 0 or self.tau <= 0:
            raise ValueError("vartheta, zeta and tau must be positive")
        if self.L < 1 or self.T_H < 1:
            raise ValueError("L and T_H must be at least 1")
        if not (0 < self.rho_exp <= 1 and 0.5 < self.gamma_exp <= 1):
            raise ValueError("step exponents must give admissible sequences")

    def rho(self, t: int) -> float:
        return (1.0 + t) ** -self.rho_exp

    def gamma(self, t: int) -> float:
        return (1.0 + t) ** -self.gamma_exp


@dataclass
class SurrogateState:
    """Running surrogate data for every user (in the active coordinates)."""

    f: np.ndarray          # (K,) sample means of g_k
    fvec: np.ndarray       # (K, d) averaged conjugate gradients
    tau: float
    t: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def surrogate(self, k: int, x0, x) -> float:
        return surrogate_value(self.f[k], self.fvec[k], self.tau, x0, x)


# ----------------------------------------------------------------------------
# QoS margin, smoothed outage and its gradient
# ----------------------------------------------------------------------------

def _margins(W, v, H, eta, noise=1.0):
    """``z`` (n, K) and the inner products needed by the gradient.

    ``H``: (n, K, N+1, M) channel samples in the margin unit, ``noise`` the
    per-user noise power in the same unit.
    """
    a = np.einsum("i,nkim->nkm", augment(v).conj(), H)  # rows v~^H H~_k
    s = a @ W.T                                           # s[n,k,j] = a_k w_j
    P = np.abs(s) ** 2
    sig = np.einsum("nkk->nk", P)
    z = eta * (P.sum(axis=-1) - sig + noise) - sig
    return z, a, s


def eval_qos_margin(W, v, H, eta, sigma2=1.0, vartheta: float = 100.0):
    """QoS margins ``z_k`` and smoothed outage indicators ``g_k`` on channel samples.

    ``H`` is (n, K, N+1, M) (or a single (K, N+1, M) sample) of true channels,
    ``W`` (K, M). The margin is ``eta_k (sum_{j != k} |h_k^H w_j|^2 + sigma_k^2)
    - |h_k^H w_k|^2``; ``g`` uses the plain sigmoid of ``vartheta z``. Both
    are returned in the units of ``sigma2`` (pass ``sigma2=1`` for
    pre-normalised samples).
    """
    H = np.asarray(H, dtype=complex)
    single = H.ndim == 3
    if single:
        H = H[None]
    sig2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (H.shape[1],))
    Hn = H / np.sqrt(sig2)[None, :, None, None]
    z, _, _ = _margins(np.asarray(W, dtype=complex), v, Hn, np.asarray(eta, dtype=float))
    g = sigmoid(z, vartheta)
    return (z[0], g[0]) if single else (z, g)


def grad_g(W, v, H, eta, vartheta: float = 100.0, zeta: float = 8.0, with_v: bool = True,
           noise=1.0):
    """Per-sample conjugate gradients of the clipped smooth step of ``z_k``.

    Returns (n, K, d) with ``d = K M + N`` (``K M`` when ``with_v`` is false).
    ``H`` must already be noise-normalised. For ``s_kj = h_k^H w_j``:
    ``d|s_kj|^2 / dw_j^* = h_k s_kj`` and ``d|s_kj|^2 / dv^* = (H_k w_j) s_kj^*``
    where ``H_k`` drops the direct-link row.
    """
    W = np.asarray(W, dtype=complex)
    eta = np.asarray(eta, dtype=float)
    n, K, _, M = H.shape
    z, a, s = _margins(W, v, H, eta, noise)
    coef = np.broadcast_to(eta[:, None], (K, K)).copy()
    np.fill_diagonal(coef, -1.0)
    cs = coef[None] * s                                    # (n, k, j)
    gw = np.conj(a)[:, :, None, :] * cs[..., None]         # (n, k, j, M)
    parts = [gw.reshape(n, K, K * M)]
    if with_v:
        Hw = np.einsum("nkim,jm->nkij", H[:, :, 1:, :], W)  # (n, k, N, j)
        gv = np.einsum("nkij,nkj->nki", Hw, np.conj(cs))
        parts.append(gv)
    zp = np.concatenate(parts, axis=-1)
    return smooth_step_deriv(z, vartheta, zeta)[..., None] * zp


# ----------------------------------------------------------------------------
# problem data and sampling
# ----------------------------------------------------------------------------

@dataclass
class _Problem:
    H_bar: np.ndarray            # (K, N+1, M), normalised
    T: list                      # per-user sampling matrices, normalised
    eta: np.ndarray
    eps: np.ndarray
    scale: np.ndarray            # sqrt(p_ref / (sigma_k^2 kappa_k))
    p_ref: float
    layout: CompositeVariable
    kappa: np.ndarray            # margin unit, in noise powers

    def sample(self, n: int, rng) -> np.ndarray:
        K, N1, M = self.H_bar.shape
        out = np.empty((n, K, N1, M), dtype=complex)
        for k in range(K):
            Z = (rng.standard_normal((n, N1, M)) + 1j * rng.standard_normal((n, N1, M))) / np.sqrt(2)
            out[:, k] = self.H_bar[k][None] - self.T[k] @ Z
        return out


def _make_problem(H_bar, error_models, specs, p_ref, kappa=None):
    H_bar = np.asarray(H_bar, dtype=complex)
    if H_bar.ndim == 2:
        H_bar = H_bar[None]
    K, N1, M = H_bar.shape
    if isinstance(error_models, ErrorModel):
        error_models = [error_models] * K
    specs = _as_specs(specs, K)
    sigma2 = np.array([s.sigma2 for s in specs])
    kappa = np.ones(K) if kappa is None else np.broadcast_to(np.asarray(kappa, float), (K,))
    scale = np.sqrt(p_ref / (sigma2 * kappa))
    return _Problem(
        H_bar=H_bar * scale[:, None, None],
        T=[error_models[k].sampling_matrix * scale[k] for k in range(K)],
        eta=np.array([s.eta for s in specs]),
        eps=np.array([s.epsilon for s in specs]),
        scale=scale,
        p_ref=float(p_ref),
        layout=CompositeVariable(K, M, N1 - 1),
        kappa=kappa,
    )


def update_surrogate(state: SurrogateState | None, W, v, H_value, H_grad, eta, config: CsscaConfig,
                     with_v: bool = True, noise=1.0) -> SurrogateState:
    """One recursive surrogate update from two independent sample batches."""
    z, _, _ = _margins(W, v, H_value, eta, noise)
    f = sigmoid(z, config.vartheta).mean(axis=0)
    grad = grad_g(W, v, H_grad, eta, config.vartheta, config.zeta, with_v, noise).mean(axis=0)
    if state is None:
        t, fvec = 0, grad
    else:
        t = state.t + 1
        rho = config.rho(t)
        fvec = (1.0 - rho) * state.fvec + rho * grad
    return SurrogateState(f=f, fvec=fvec, tau=config.tau, t=t)


@dataclass
class SubproblemResult:
    x: np.ndarray
    branch: str            # "power" for the power-minimising subproblem, "gap" for the fallback
    alpha: float
    kkt_residual: float


def solve_subproblems(state: SurrogateState, x0, eps, n_w: int, disc_idx) -> SubproblemResult:
    """Solve the power-minimising subproblem, or the min-max gap problem when it is infeasible."""
    dim = x0.size
    balls = [complete_to_ball(state.f[k], state.fvec[k], state.tau, x0, eps[k])
             for k in range(len(eps))]
    gap = solve_minmax_feasibility(balls, state.tau, disc_idx, dim)
    if gap.alpha < -1e-9 and not any(b.empty for b in balls):
        sol = solve_min_quadratic_over_balls(balls, np.arange(n_w), disc_idx, dim, anchor=x0)
        if sol.feasible:
            return SubproblemResult(sol.x, "power", gap.alpha, sol.kkt_residual)
    return SubproblemResult(gap.x, "gap", gap.alpha, np.nan)


# ----------------------------------------------------------------------------
# the stages
# ----------------------------------------------------------------------------

@dataclass
class StageResult:
    W: np.ndarray          # normalised precoders (K, M)
    v: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)
    max_violation: float = np.nan


def _fractional_change(series, w):
    prev = np.mean(series[-2 * w:-w])
    cur = np.mean(series[-w:])
    return (prev - cur) / max(abs(prev), 1e-12)


def _stopped(history, powers, violations, config):
    """Stop when window averages of ``max_k f_k`` and of the power both decrease by less than ``xi_o``.

    Also requires the window-averaged violation to be at most ``stop_tol``,
    so a stage never stops while its surrogate estimate is infeasible.
    """
    w = config.window
    if len(history) < max(config.min_iters, 2 * w):
        return False
    return (_fractional_change(history, w) < config.xi_o
            and abs(_fractional_change(powers, w)) < config.xi_o
            and np.mean(violations[-w:]) <= config.stop_tol)


def cssca_stage(prob: _Problem, W0, v0, config: CsscaConfig, rng, optimize_v: bool,
                stage: int = 1) -> StageResult:
    """Run one CSSCA stage from ``(W0, v0)`` (normalised precoders)."""
    lay = prob.layout
    n_w = lay.K * lay.M
    W, v = np.array(W0, dtype=complex), np.array(v0, dtype=complex)
    x = lay.pack(W, v) if optimize_v else W.ravel().copy()
    disc_idx = lay.v_idx if optimize_v else None
    cap = config.max_iters_stage1 if optimize_v else config.max_iters_stage2
    state, history, powers, violations, trace = None, [], [], [], []
    for t in range(cap):
        Hv = prob.sample(config.L, rng)
        Hg = prob.sample(config.T_H, rng)
        state = update_surrogate(state, W, v, Hv, Hg, prob.eta, config, optimize_v, 1.0 / prob.kappa)
        viol = float(np.max(state.f - prob.eps))
        history.append(float(np.max(state.f)))
        violations.append(viol)
        powers.append(float(np.sum(np.abs(W) ** 2)))
        trace.append({"stage": stage, "t": t, "power": prob.p_ref * float(np.sum(np.abs(W) ** 2)),
                      "max_f": history[-1], "max_violation": viol})
        sub = solve_subproblems(state, x, prob.eps, n_w, disc_idx)
        trace[-1]["branch"] = sub.branch
        x = (1.0 - config.gamma(t)) * x + config.gamma(t) * sub.x
        W = x[:n_w].reshape(lay.K, lay.M)
        if optimize_v:
            v = x[n_w:]
        if _stopped(history, powers, violations, config):
            break
    return StageResult(W=W, v=v, iterations=len(trace), trace=trace,
                       max_violation=float(np.mean([r["max_violation"] for r in trace[-config.window:]])))


@dataclass
class CsscaResult:
    v: np.ndarray
    W: np.ndarray
    power: float
    outage: np.ndarray
    outage_stderr: np.ndarray
    iterations: int
    flagged: bool
    trace: list
    scale: float | None = 1.0


def calibrate_scale(W, v, H_bar, error_models, specs, n_samples: int, rng,
                    lo_db: float = -3.0, hi_db: float = 10.0, tol_db: float = 0.01) -> float:
    """Common amplitude factor ``c`` for the precoders so the MC outage just meets every target.

    Every SINR increases with ``c``, so on one batch of samples (common
    random numbers) the outage is non-increasing in ``c`` and a bisection on
    ``c`` in dB applies. Returns the smallest passing factor, or
    ``None`` when even ``10^(hi_db/20)`` fails (the design is then limited
    by the CSI error rather than the noise, so scaling cannot help).
    """
    specs = _as_specs(specs, np.asarray(H_bar).shape[0] if np.ndim(H_bar) == 3 else 1)
    eps = np.array([s.epsilon for s in specs])
    seed = np.random.default_rng(rng).integers(2 ** 63)

    def ok(db):
        c = 10 ** (db / 20)
        mc = mc_outage(W * c, v, H_bar, error_models, specs, n_samples, np.random.default_rng(seed))
        return bool(np.all(mc.outage <= eps))

    lo, hi = lo_db, hi_db
    if ok(lo):
        return 10 ** (lo / 20)
    if not ok(hi):
        return None
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return 10 ** (hi / 20)


def two_stage_cssca(H_bar, error_models, specs, config: CsscaConfig | None = None,
                    rng=None, v0=None, W0=None, verify_rng=None, init: str = "msp") -> CsscaResult:
    """Full two-stage algorithm with final Monte-Carlo verification.

    ``v0`` defaults to the phase vector maximising the summed mean signal
    power of all users (``init="msp"``) or a random unit-modulus vector
    (``init="random"``); ``W0`` defaults to the deterministic SINR power
    minimiser at ``v0``.
    """
    from .multiuser import msp_multiuser, sinr_power_min

    config = config or CsscaConfig()
    rng = np.random.default_rng(rng)
    H_bar = np.asarray(H_bar, dtype=complex)
    if H_bar.ndim == 2:
        H_bar = H_bar[None]
    K, N1, M = H_bar.shape
    specs_l = _as_specs(specs, K)
    if v0 is None:
        if init == "msp":
            v0 = msp_multiuser(H_bar, specs_l)
        elif init == "random":
            v0 = random_unit_modulus(N1 - 1, rng)
        else:
            raise ValueError(f"unknown init {init!r}")
    if W0 is None:
        W0 = sinr_power_min(H_bar, v0, specs_l).W
    p_ref = float(np.sum(np.abs(W0) ** 2))
    prob = _make_problem(H_bar, error_models, specs_l, p_ref)
    Wn = np.asarray(W0) / np.sqrt(p_ref)
    if config.z_spread is not None:
        # margin unit: the smooth window of vartheta * z covers z_spread
        # standard deviations of the initial margin distribution
        z, _, _ = _margins(Wn, v0, prob.sample(config.L, rng), prob.eta)
        kappa = config.vartheta * z.std(axis=0) / (config.zeta * config.z_spread)
        prob = _make_problem(H_bar, error_models, specs_l, p_ref, np.maximum(kappa, 1e-12))

    s1 = cssca_stage(prob, Wn, v0, config, rng, optimize_v=True, stage=1)
    vq = quantize_phases(s1.v, config.Q)
    s2 = cssca_stage(prob, s1.W, vq, config, rng, optimize_v=False, stage=2)
    W = s2.W * np.sqrt(p_ref)
    scale = 1.0
    if config.n_calibrate:
        scale = calibrate_scale(W, vq, H_bar, error_models, specs_l, config.n_calibrate, rng)
        W = W * (scale if scale is not None else 1.0)
    power = float(np.sum(np.abs(W) ** 2))
    verify_rng = np.random.default_rng(verify_rng if verify_rng is not None else rng.integers(2 ** 63))
    mc = mc_outage(W, vq, H_bar, error_models, specs_l, config.n_verify, verify_rng)
    eps = np.array([s.epsilon for s in specs_l])
    flagged = bool(np.any(mc.outage > eps + config.feas_tol))
    return CsscaResult(v=vq, W=W, power=power, outage=mc.outage, outage_stderr=mc.stderr,
                       iterations=s1.iterations + s2.iterations, flagged=flagged,
                       trace=s1.trace + s2.trace, scale=scale)
