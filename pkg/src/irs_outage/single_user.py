"""Single-user passive/active beamforming under an outage constraint.

The reflection vector is designed by maximising the weighted sum
``s2(v) + omega * s1(v)`` of the mean signal power and the error-variance term
with a penalty dual decomposition (PDD) over the discrete phase alphabet; the
MRT power then follows from a one-dimensional bisection. Sweeping ``omega``
and keeping the lowest power gives WSMax. The MVR, MPV and MSP baselines are
special cases (Dinkelbach parameter ``-omega``, ``omega = 1`` and
``omega = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import itertools

import numpy as np
import scipy.linalg

from . import phases
from .channels import augment
from .estimation import ErrorModel
from .outage import OutageSpec, mrt_precoder, outage_from_stats, quadratic_stats, required_power

NEWTON_TOL = 1e-8
MAX_BRACKET_DOUBLINGS = 60


@dataclass(frozen=True)
class WSMaxConfig:
    omega_lo: float = -40.0
    omega_hi: float = 10.0
    omega_step: float = 1.0
    Q: int = 1
    rho: float = 10.0
    rho_shrink: float = 0.8
    outer_iters: int = 50
    inner_iters: int = 30
    violation_tol: float = 1e-6
    inner_tol: float = 1e-7
    stall_outer: int = 5
    p_delta: float = 1e-4
    eps_delta: float = 1e-3
    p_upper_growth: float = 10.0
    diagonal_shift: str = "center"
    polish: str = "pair"
    seed: int = 0

    def __post_init__(self):
        if self.diagonal_shift not in ("center", "psd", "none"):
            raise ValueError("diagonal_shift must be 'center', 'psd' or 'none'")
        if self.polish not in ("pair", "single", "none"):
            raise ValueError("polish must be 'pair', 'single' or 'none'")
        if self.omega_lo > self.omega_hi:
            raise ValueError("omega_lo must not exceed omega_hi")
        if self.omega_step <= 0:
            raise ValueError("omega_step must be positive")
        if min(self.rho, self.violation_tol, self.p_delta, self.eps_delta) <= 0:
            raise ValueError("penalty and tolerances must be positive")
        if not 0 < self.rho_shrink < 1:
            raise ValueError("rho_shrink must lie in (0, 1)")

    @property
    def omegas(self) -> np.ndarray:
        n = int(np.floor((self.omega_hi - self.omega_lo) / self.omega_step + 1e-9)) + 1
        return self.omega_lo + self.omega_step * np.arange(n)

    def initial_v(self, N: int) -> np.ndarray:
        return phases.random_discrete(N, self.Q, np.random.default_rng(self.seed))


@dataclass
class PDDResult:
    v: np.ndarray
    objective: float
    converged: bool
    violation: float
    outer_iterations: int
    objective_trace: list = field(default_factory=list, repr=False)


@dataclass
class SingleUserSolution:
    v: np.ndarray
    w: np.ndarray
    p: float
    trace: list = field(default_factory=list, repr=False)


# --------------------------------------------------------------------------
# quadratic model of the weighted-sum objective

@dataclass(frozen=True)
class _Quadratic:
    """``v^H A v + 2 Re{v^H c}`` (normalised, constant dropped) and its eigen-split."""

    A: np.ndarray
    c: np.ndarray
    U: np.ndarray
    sig_pos: np.ndarray
    sig_neg: np.ndarray


def _partitions(H_bar, V_bar):
    H_bar = np.asarray(H_bar, dtype=complex)
    return H_bar[1:], H_bar[0].conj(), V_bar[1:, 0], V_bar[1:, 1:]


def _quadratic(H_bar, error_model: ErrorModel, omega: float, shift: str = "center") -> _Quadratic:
    H_bar = np.asarray(H_bar, dtype=complex)
    # the argmax is invariant to a positive rescaling, which keeps the penalty
    # parameter meaningful whatever the channel units are
    scale = np.linalg.norm(H_bar, 2) ** 2
    if not scale > 0:
        raise ValueError("all-zero channel estimate")
    H_hat, h_d_hat, r, R = _partitions(H_bar / np.sqrt(scale), error_model.V_bar / scale)
    A = H_hat @ H_hat.conj().T + omega * R
    A = 0.5 * (A + A.conj().T)
    # a multiple of the identity is constant on the unit-modulus set; centring
    # the diagonal makes the iterations invariant to it
    eye = np.eye(A.shape[0])
    if shift == "center":
        A = A - np.real(np.trace(A)) / A.shape[0] * eye
    c = H_hat @ h_d_hat + omega * r
    sig, U = np.linalg.eigh(A)
    if shift == "psd":
        sig = sig - sig[0]
        A = A - np.linalg.eigvalsh(A)[0] * eye
    return _Quadratic(A=A, c=c, U=U, sig_pos=np.maximum(sig, 0.0), sig_neg=np.minimum(sig, 0.0))


def weighted_objective(v, H_bar, error_model: ErrorModel, omega: float) -> float:
    """``s2(v) + omega * s1(v)`` in the channel's own units."""
    s1, s2 = quadratic_stats(augment(v), np.asarray(H_bar), error_model.V_bar)
    return float(s2[0] + omega * s1[0])


# --------------------------------------------------------------------------
# PDD building blocks

def _solve_ball(bt, d, N):
    """``v_i = bt_i / (d_i + mu)`` with ``mu >= 0`` so that ``||v||^2 <= N``."""
    b2 = np.abs(bt) ** 2
    if np.sum(b2 / d ** 2) <= N:
        return bt / d, 0.0
    if np.all(d == d[0]):
        mu = np.sqrt(b2.sum() / N) - d[0]
        return bt / (d + mu), mu
    # ||v(mu)||^2 <= ||b||^2 / (1 + mu)^2 since d >= 1, so this bracket holds
    lo, hi = 0.0, max(np.sqrt(b2.sum() / N) - 1.0, 0.0)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if np.sum(b2 / (d + hi) ** 2) <= N:
            break
        hi = 2.0 * hi + 1.0
    else:
        raise RuntimeError("could not bracket the ball multiplier")
    mu = lo
    for _ in range(200):
        g = np.sum(b2 / (d + mu) ** 2)
        if abs(g - N) <= NEWTON_TOL:
            break
        if g > N:
            lo = mu
        else:
            hi = mu
        # Newton on 1/||v(mu)|| - 1/sqrt(N), which is nearly linear in mu
        dg = -2.0 * np.sum(b2 / (d + mu) ** 3)
        phi = g ** -0.5 - N ** -0.5
        dphi = -0.5 * g ** -1.5 * dg
        step = mu - phi / dphi
        mu = step if lo < step < hi else 0.5 * (lo + hi)
    return bt / (d + mu), mu


def _v_step(q: _Quadratic, u, lam, rho, v_anchor):
    N = u.size
    Uh = q.U.conj().T
    bt = 2.0 * rho * q.sig_pos * (Uh @ v_anchor) + Uh @ (2.0 * rho * q.c + u - rho * lam)
    d = 1.0 - 2.0 * rho * q.sig_neg
    vt, mu = _solve_ball(bt, d, N)
    return q.U @ vt, mu


def v_step(u, lam, rho: float, omega: float, H_hat, h_d_hat, r, R, v_anchor):
    """Minimiser of the linearised augmented Lagrangian over ``||v||^2 <= N``.

    The convex part ``v^H U Sigma+ U^H v`` of the objective is linearised at
    ``v_anchor``; the concave part is kept exactly. Returns ``(v, mu)``
    with ``mu`` the multiplier of the ball constraint.
    """
    H_hat = np.asarray(H_hat, dtype=complex)
    A = H_hat @ H_hat.conj().T + omega * np.asarray(R)
    A = 0.5 * (A + A.conj().T)
    sig, U = np.linalg.eigh(A)
    q = _Quadratic(A=A, c=H_hat @ np.asarray(h_d_hat) + omega * np.asarray(r), U=U,
                   sig_pos=np.maximum(sig, 0.0), sig_neg=np.minimum(sig, 0.0))
    return _v_step(q, np.asarray(u, dtype=complex), np.asarray(lam, dtype=complex), rho,
                   np.asarray(v_anchor, dtype=complex))


def u_step(v, lam, rho: float, Q: int) -> np.ndarray:
    """Project ``v + rho * lam`` entrywise onto the phase alphabet."""
    return phases.project(np.asarray(v) + rho * np.asarray(lam), Q)


def _local_search(v, score, Q: int, pairs: bool, max_passes: int = 200):
    """Best-improvement search over changes of one or two phases.

    ``score`` maps a stack of candidate vectors to their objective values.
    Each pass evaluates every vector that differs from ``v`` in one element
    (and, with ``pairs``, in two elements) and moves to the best one while it
    strictly improves.
    """
    alph = phases.alphabet(Q)
    Z = alph.size
    v = np.asarray(v, dtype=complex).copy()
    N = v.size
    moves = [(n,) for n in range(N)]
    if pairs:
        moves += list(itertools.combinations(range(N), 2))
    cand_idx, cand_val = [], []
    for m in moves:
        for z in itertools.product(range(Z), repeat=len(m)):
            cand_idx.append(m)
            cand_val.append(z)
    current = float(score(v[None])[0])
    for _ in range(max_passes):
        C = np.repeat(v[None], len(cand_idx), axis=0)
        for row, (m, z) in enumerate(zip(cand_idx, cand_val)):
            C[row, list(m)] = alph[list(z)]
        f = score(C)
        k = int(np.argmax(f))
        if not f[k] > current + 1e-12 * abs(current):
            break
        v, current = C[k], float(f[k])
    return v


def pdd_weighted_sum(H_bar, error_model: ErrorModel, omega: float, config: WSMaxConfig = WSMaxConfig(),
                     init_v=None) -> PDDResult:
    """Maximise ``s2(v) + omega * s1(v)`` over the discrete phase set with PDD.

    Inner loop: alternate ``v_step`` and ``u_step`` (BSUM). Outer loop: if
    the constraint violation ``||v - u||_inf`` decreased enough, update the
    dual ``lam += (v - u) / rho``, otherwise shrink ``rho``. Stops on a
    violation below ``violation_tol``, on ``stall_outer`` outer iterations
    without a change in ``u``, or at the iteration cap. Returns the best
    discrete iterate seen, refined by a one- and two-element local search
    unless ``config.polish`` is ``"none"``.
    """
    if not np.isfinite(omega):
        raise ValueError("omega must be finite")
    N = error_model.N
    q = _quadratic(H_bar, error_model, omega, config.diagonal_shift)
    v = config.initial_v(N) if init_v is None else np.asarray(init_v, dtype=complex).copy()
    if not phases.is_discrete(v, config.Q, atol=1e-9):
        v = phases.project(v, config.Q)
    u = v.copy()
    lam = np.zeros(N, dtype=complex)
    rho = config.rho
    threshold = np.inf

    best_u = u.copy()
    best_obj = weighted_objective(u, H_bar, error_model, omega)
    trace = [best_obj]
    last_u, unchanged = u.copy(), 0
    violation = np.inf
    converged = False
    it = 0
    for it in range(1, config.outer_iters + 1):
        for _ in range(config.inner_iters):
            v_new, _ = _v_step(q, u, lam, rho, v)
            u_new = u_step(v_new, lam, rho, config.Q)
            small = np.linalg.norm(v_new - v) <= config.inner_tol * np.sqrt(N)
            same = np.array_equal(u_new, u)
            v, u = v_new, u_new
            if small and same:
                break
        violation = float(np.max(np.abs(v - u)))
        obj = weighted_objective(u, H_bar, error_model, omega)
        trace.append(obj)
        if obj > best_obj:
            best_obj, best_u = obj, u.copy()
        if violation <= config.violation_tol:
            converged = True
            break
        if violation <= threshold:
            lam = lam + (v - u) / rho
        else:
            rho *= config.rho_shrink
        threshold = 0.9 * violation
        if np.array_equal(u, last_u):
            unchanged += 1
            if unchanged >= config.stall_outer:
                break
        else:
            last_u, unchanged = u.copy(), 0
    if config.polish != "none":
        def score(C):
            s1, s2 = _stats(C, H_bar, error_model)
            return s2 + omega * s1

        best_u = _local_search(best_u, score, config.Q, config.polish == "pair")
        best_obj = weighted_objective(best_u, H_bar, error_model, omega)
    return PDDResult(v=best_u, objective=best_obj, converged=converged, violation=violation,
                     outer_iterations=it, objective_trace=trace)


# --------------------------------------------------------------------------
# power and the WSMax sweep

def _stats(V, H_bar, error_model):
    return quadratic_stats(augment(np.atleast_2d(V)), np.asarray(H_bar), error_model.V_bar)


def _required(V, H_bar, error_model, spec, config):
    s1, s2 = _stats(V, H_bar, error_model)
    return required_power(s1, s2, spec, p_delta_rel=config.p_delta, eps_delta=config.eps_delta,
                          growth=config.p_upper_growth)


def bisect_power(v, H_bar, error_model: ErrorModel, spec: OutageSpec,
                 config: WSMaxConfig = WSMaxConfig()) -> float:
    """Minimum MRT power with outage at most epsilon for a fixed ``v``."""
    return float(_required(v, H_bar, error_model, spec, config)[0])


def _solution(v, H_bar, p, trace=None) -> SingleUserSolution:
    return SingleUserSolution(v=v, w=mrt_precoder(v, H_bar, p), p=float(p), trace=trace or [])


def wsmax(H_bar, error_model: ErrorModel, spec: OutageSpec,
          config: WSMaxConfig = WSMaxConfig()) -> SingleUserSolution:
    """Sweep omega, solve the weighted-sum problem, keep the lowest power."""
    init_v = config.initial_v(error_model.N)
    omegas = config.omegas
    results = [pdd_weighted_sum(H_bar, error_model, om, config, init_v) for om in omegas]
    V = np.array([r.v for r in results])
    p = _required(V, H_bar, error_model, spec, config)
    trace = [{"omega": float(om), "p": float(pk), "objective": r.objective,
              "converged": r.converged, "outer_iterations": r.outer_iterations}
             for om, pk, r in zip(omegas, p, results)]
    best = int(np.argmin(p))
    return _solution(V[best], H_bar, p[best], trace)


# --------------------------------------------------------------------------
# baselines

def _ratio_coordinate_ascent(v, H_bar, error_model, Q, pairs=False):
    """Local search on the MSP/variance ratio."""

    def score(C):
        s1, s2 = _stats(C, H_bar, error_model)
        return s2 / s1

    return _local_search(v, score, Q, pairs)


def _eigen_starts(H_bar, error_model, Q, count=2):
    """Projections of the leading generalized eigenvectors of ``(H H^H, V_bar)``."""
    A = np.asarray(H_bar) @ np.asarray(H_bar).conj().T
    B = error_model.V_bar
    B = B + 1e-12 * max(float(np.trace(B).real), 1e-300) * np.eye(B.shape[0])
    _, U = scipy.linalg.eigh(A, B)
    starts = []
    for k in range(1, count + 1):
        x = U[:, -k]
        if abs(x[0]) > 1e-12:
            x = x / x[0]
        starts.append(phases.project(x[1:], Q))
    return starts


def mvr_maximize(H_bar, error_model: ErrorModel, config: WSMaxConfig = WSMaxConfig(),
                 tol: float = 1e-6, max_iter: int = 30) -> np.ndarray:
    """Maximise ``s2(v) / s1(v)``.

    Dinkelbach iterations (``omega = -ratio``) over PDD solves, each followed
    by a local search on the ratio, until the ratio stops increasing. The
    iterations are started from the configured initial vector, from the
    discrete projections of the two leading generalized eigenvectors of the
    ratio, and from the MSP and MPV solutions; the best result is returned.
    """

    def ratio(x):
        s1, s2 = _stats(x, H_bar, error_model)
        return float(s2[0] / s1[0])

    pairs = config.polish == "pair"
    starts = [config.initial_v(error_model.N), *_eigen_starts(H_bar, error_model, config.Q),
              msp_solve(H_bar, error_model, config), mpv_solve(H_bar, error_model, config)]
    overall_v, overall = None, -np.inf
    for start in starts:
        best_v = _ratio_coordinate_ascent(start, H_bar, error_model, config.Q, pairs)
        best_ratio = ratio(best_v)
        for _ in range(max_iter):
            v = pdd_weighted_sum(H_bar, error_model, -best_ratio, config, init_v=best_v).v
            v = _ratio_coordinate_ascent(v, H_bar, error_model, config.Q, pairs)
            new = ratio(v)
            if new <= best_ratio * (1 + tol):
                break
            best_v, best_ratio = v, new
        if best_ratio > overall:
            overall_v, overall = best_v, best_ratio
    return overall_v


def mpv_solve(H_bar, error_model: ErrorModel, config: WSMaxConfig = WSMaxConfig()) -> np.ndarray:
    """Maximise ``s2 + s1`` (Markov-bound surrogate)."""
    return pdd_weighted_sum(H_bar, error_model, 1.0, config).v


def msp_solve(H_bar, error_model: ErrorModel, config: WSMaxConfig = WSMaxConfig()) -> np.ndarray:
    """Maximise the mean signal power ``s2``."""
    return pdd_weighted_sum(H_bar, error_model, 0.0, config).v


def baseline_solution(v, H_bar, error_model, spec, config=WSMaxConfig()) -> SingleUserSolution:
    return _solution(v, H_bar, bisect_power(v, H_bar, error_model, spec, config))


def _coordinate_descent(v, p, H_bar, error_model, spec, Q, max_sweeps=100):
    """Per-element sweeps minimising the outage at fixed power (index order)."""
    alph = phases.alphabet(Q)
    v = v.copy()
    history = [float(outage_from_stats(*_stats(v, H_bar, error_model), p, spec)[0])]
    for _ in range(max_sweeps):
        changed = False
        for n in range(v.size):
            cand = np.repeat(v[None], alph.size, axis=0)
            cand[:, n] = alph
            s1, s2 = _stats(cand, H_bar, error_model)
            out = outage_from_stats(s1, s2, p, spec)
            cur = int(np.flatnonzero(np.isclose(alph, v[n]))[0])
            z = int(np.argmin(out))
            if out[z] < out[cur]:
                v[n] = alph[z]
                changed = True
        s1, s2 = _stats(v, H_bar, error_model)
        history.append(float(outage_from_stats(s1, s2, p, spec)[0]))
        if not changed:
            break
    return v, history


def bcd_baseline(H_bar, error_model: ErrorModel, spec: OutageSpec, config: WSMaxConfig = WSMaxConfig(),
                 init_v=None, max_bisections: int = 60) -> SingleUserSolution:
    """Bisection on power with per-element phase sweeps minimising the outage."""
    v_feas = config.initial_v(error_model.N) if init_v is None else np.asarray(init_v, dtype=complex)
    p_u = bisect_power(v_feas, H_bar, error_model, spec, config)
    p_l = 0.0
    v_warm = v_feas
    for _ in range(max_bisections):
        if p_u - p_l <= config.p_delta * p_u:
            break
        p = 0.5 * (p_l + p_u)
        v, hist = _coordinate_descent(v_warm, p, H_bar, error_model, spec, config.Q)
        if hist[-1] < spec.epsilon:
            p_u, v_feas, v_warm = p, v, v
        else:
            p_l = p
    return baseline_solution(v_feas, H_bar, error_model, spec, config)


def exhaustive_search(H_bar, error_model: ErrorModel, spec: OutageSpec, config: WSMaxConfig = WSMaxConfig(),
                      budget: int = 2 ** 20, chunk: int = 2 ** 14, order=None) -> SingleUserSolution:
    """Global minimum power over every configuration in ``F_d^N``.

    ``order`` optionally permutes the enumeration (a permutation of
    ``range(Z**N)``); the result does not depend on it.
    """
    N, Z = error_model.N, 2 ** config.Q
    total = Z ** N
    if total > budget:
        raise ValueError(f"{Z}^{N} configurations exceed the budget of {budget}")
    codes = np.arange(total) if order is None else np.asarray(order)
    alph = phases.alphabet(config.Q)
    weights = Z ** np.arange(N - 1, -1, -1)
    best_p, best_code = np.inf, -1
    for lo in range(0, total, chunk):
        cc = codes[lo:lo + chunk]
        V = alph[(cc[:, None] // weights) % Z]
        p = _required(V, H_bar, error_model, spec, config)
        i = int(np.argmin(p))
        if p[i] < best_p or (p[i] == best_p and cc[i] < best_code):
            best_p, best_code = float(p[i]), int(cc[i])
    v = alph[(best_code // weights) % Z]
    return _solution(v, H_bar, best_p)


def progressive_thresholding_su(H_bar, error_model: ErrorModel, spec: OutageSpec,
                                delta_eta_db: float = 0.01, config: WSMaxConfig = WSMaxConfig(),
                                max_steps: int = 20000, batch: int = 500) -> SingleUserSolution:
    """Deterministic SNR design on estimated CSI with a progressively raised target.

    ``v`` maximises the estimated signal power; the MRT power just meets the
    inflated target ``eta'`` on the estimate. ``eta'`` grows by
    ``delta_eta_db`` until the true outage is at most epsilon.
    """
    if delta_eta_db <= 0:
        raise ValueError("delta_eta must be positive")
    v = msp_solve(H_bar, error_model, config)
    s1, s2 = _stats(v, H_bar, error_model)
    for start in range(0, max_steps, batch):
        steps = np.arange(start, min(start + batch, max_steps))
        eta = spec.eta * 10.0 ** (steps * delta_eta_db / 10.0)
        p = eta * spec.sigma2 / s2[0]
        out = outage_from_stats(np.full(steps.size, s1[0]), np.full(steps.size, s2[0]), p, spec)
        ok = np.flatnonzero(out <= spec.epsilon)
        if ok.size:
            sol = _solution(v, H_bar, p[ok[0]])
            sol.trace = [{"eta_scale_db": float(steps[ok[0]] * delta_eta_db)}]
            return sol
    raise RuntimeError("progressive thresholding did not reach the outage target")


def no_irs_solution(H_bar, error_model: ErrorModel, spec: OutageSpec,
                    config: WSMaxConfig = WSMaxConfig()) -> SingleUserSolution:
    """Direct link only (``v_tilde = [1, 0]``) on the same estimates."""
    v = np.zeros(error_model.N, dtype=complex)
    return _solution(v, H_bar, bisect_power(v, H_bar, error_model, spec, config))


# --------------------------------------------------------------------------
# MSP-variance region

@dataclass
class RegionCloud:
    V: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    p: np.ndarray

    @property
    def best(self) -> int:
        return int(np.argmin(self.p))


def sweep_msp_variance_region(H_bar, error_model: ErrorModel, spec: OutageSpec, Q: int | None = 1,
                              n_samples: int | None = None, grid: int = 64, rng=None,
                              config: WSMaxConfig = WSMaxConfig()) -> RegionCloud:
    """Points ``(s1(v), s2(v), p(v))`` of the MSP-variance region.

    With a phase alphabet (``Q`` given) every configuration of ``F_d^N`` is
    enumerated unless ``n_samples`` asks for uniform sampling instead. For
    continuous phases (``Q=None``) a ``grid^N`` phase grid is used for
    ``N <= 2``, otherwise ``n_samples`` uniform draws.
    """
    N = error_model.N
    if Q is not None and n_samples is None:
        V = phases.all_configurations(N, Q)
    elif Q is not None:
        V = phases.alphabet(Q)[np.random.default_rng(rng).integers(0, 2 ** Q, size=(n_samples, N))]
    elif n_samples is None:
        if N > 2:
            raise ValueError("continuous phase grids are limited to N <= 2; pass n_samples")
        ang = 2 * np.pi * np.arange(grid) / grid
        V = np.exp(1j * np.stack(np.meshgrid(*([ang] * N), indexing="ij"), axis=-1).reshape(-1, N))
    else:
        V = np.exp(2j * np.pi * np.random.default_rng(rng).uniform(size=(n_samples, N)))
    s1, s2 = _stats(V, H_bar, error_model)
    p = required_power(s1, s2, spec, p_delta_rel=config.p_delta, eps_delta=config.eps_delta,
                       growth=config.p_upper_growth)
    return RegionCloud(V=V, s1=s1, s2=s2, p=np.asarray(p))
