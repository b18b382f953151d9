"""Convex subproblems of the stochastic SCA iterations.

Every surrogate constraint ``f + 2 Re{g^H (x - x0)} + tau ||x - x0||^2 <= eps``
is a Euclidean ball in ``x``. The two subproblems are then

* ``min ||P x||^2`` over an intersection of balls and unit discs on some
  coordinates (``P`` selects the precoder coordinates), and
* ``min_x max_k tau_k (||x - c_k||^2 - r_k^2)`` over the same discs.

Both are solved through their low-dimensional Lagrange duals, whose inner
minimisations are closed form (weighted means, then a projection onto the
unit disc on the constrained coordinates), followed by a Dykstra projection
that removes residual infeasibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

FEAS_TOL = 1e-8


@dataclass(frozen=True)
class BallConstraint:
    """``{x : ||x[idx] - center||^2 <= radius_sq}``; ``idx=None`` means all coordinates.

    A negative ``radius_sq`` encodes an empty ball.
    """

    center: np.ndarray
    radius_sq: float
    idx: np.ndarray | None = None

    def __post_init__(self):
        if not np.isfinite(self.radius_sq):
            raise ValueError("radius_sq must be finite")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=complex))

    @property
    def empty(self) -> bool:
        return self.radius_sq < 0

    def _part(self, x):
        return x if self.idx is None else x[self.idx]

    def violation(self, x) -> float:
        return float(np.sum(np.abs(self._part(x) - self.center) ** 2) - self.radius_sq)

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.violation(x) <= tol

    def project(self, x) -> np.ndarray:
        if self.empty:
            raise ValueError("cannot project onto an empty ball")
        x = np.array(x, dtype=complex)
        part = self._part(x)
        d = part - self.center
        nrm = np.linalg.norm(d)
        r = np.sqrt(self.radius_sq)
        if nrm > r:
            new = self.center + d * (r / nrm)
            if self.idx is None:
                x = new
            else:
                x[self.idx] = new
        return x


def complete_to_ball(f: float, grad, tau: float, x0, eps: float) -> BallConstraint:
    """Ball equivalent of ``f + 2 Re{grad^H (x - x0)} + tau ||x - x0||^2 <= eps``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    grad = np.asarray(grad, dtype=complex)
    center = np.asarray(x0, dtype=complex) - grad / tau
    radius_sq = (eps - f) / tau + np.sum(np.abs(grad) ** 2) / tau ** 2
    return BallConstraint(center=center, radius_sq=float(radius_sq))


def surrogate_value(f: float, grad, tau: float, x0, x) -> float:
    d = np.asarray(x) - np.asarray(x0)
    return float(f + 2.0 * np.real(np.vdot(grad, d)) + tau * np.sum(np.abs(d) ** 2))


def project_unit_disc(z):
    z = np.asarray(z, dtype=complex)
    mag = np.abs(z)
    return np.where(mag > 1.0, z / np.maximum(mag, 1e-300), z)


def project_intersection(x, balls, disc_idx, tol: float = FEAS_TOL, max_iter: int = 20000,
                         step_tol: float = 1e-10):
    """Dykstra's projection of ``x`` onto ``(cap balls) cap {|x_i| <= 1, i in disc_idx}``.

    Iterates until the point is feasible to ``tol`` and a full cycle moves it
    by at most ``step_tol`` (relative), or ``max_iter`` cycles.
    """
    sets = [b.project for b in balls]
    if disc_idx is not None and len(disc_idx):
        def disc(y):
            y = y.copy()
            y[disc_idx] = project_unit_disc(y[disc_idx])
            return y
        sets.append(disc)
    y = np.array(x, dtype=complex)
    incr = [np.zeros_like(y) for _ in sets]
    for _ in range(max_iter):
        y_prev = y
        for i, proj in enumerate(sets):
            z = proj(y + incr[i])
            incr[i] = y + incr[i] - z
            y = z
        step = np.linalg.norm(y - y_prev)
        if _max_violation(y, balls, disc_idx) <= tol and step <= step_tol * (1.0 + np.linalg.norm(y)):
            break
    return y


def _max_violation(x, balls, disc_idx):
    worst = max((b.violation(x) for b in balls), default=-np.inf)
    if disc_idx is not None and len(disc_idx):
        worst = max(worst, float(np.max(np.abs(x[disc_idx]) ** 2 - 1.0)))
    return worst


@dataclass
class QcqpSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    multipliers: np.ndarray
    feasible: bool


@dataclass
class MinMaxSolution:
    x: np.ndarray
    alpha: float
    weights: np.ndarray


def _stack(balls):
    C = np.array([b.center for b in balls])
    r2 = np.array([b.radius_sq for b in balls])
    return C, r2


def _check_full(balls, dim):
    for b in balls:
        if b.idx is not None or b.center.size != dim:
            raise ValueError("subproblem solvers expect full-vector balls")


def solve_minmax_feasibility(balls, taus, disc_idx, dim: int) -> MinMaxSolution:
    """``min_x max_k tau_k (||x - c_k||^2 - r_k^2)`` s.t. ``|x_i| <= 1`` on ``disc_idx``.

    Dual over the probability simplex: for weights ``lam`` the inner
    minimiser is the ``lam*tau``-weighted centre, projected onto the disc
    on the constrained coordinates. Weights are parametrised by a softmax.
    """
    _check_full(balls, dim)
    C, r2 = _stack(balls)
    taus = np.broadcast_to(np.asarray(taus, dtype=float), r2.shape)
    K = len(balls)
    disc_idx = np.asarray([] if disc_idx is None else disc_idx, dtype=int)

    def inner(lam):
        wts = lam * taus
        x = wts @ C / wts.sum()
        if disc_idx.size:
            x[disc_idx] = project_unit_disc(x[disc_idx])
        return x

    def values(x):
        return taus * (np.sum(np.abs(x[None] - C) ** 2, axis=1) - r2)

    if K == 1:
        x = inner(np.ones(1))
        return MinMaxSolution(x=x, alpha=float(values(x)[0]), weights=np.ones(1))

    def neg_dual(lam):
        lam = np.maximum(lam, 0.0)
        x = inner(lam)
        val = values(x)
        # Danskin: the dual gradient is the vector of constraint values
        return -(lam @ val), -val

    res = minimize(neg_dual, np.full(K, 1.0 / K), jac=True, method="SLSQP",
                   bounds=[(0.0, 1.0)] * K,
                   constraints=[{"type": "eq", "fun": lambda l: l.sum() - 1.0,
                                 "jac": lambda l: np.ones_like(l)}],
                   options={"maxiter": 500, "ftol": 1e-15})
    lam = np.maximum(res.x, 0.0)
    lam /= lam.sum()
    x = inner(lam)
    # primal value at the recovered point; an upper bound on the dual value
    alpha = float(values(x).max())
    return MinMaxSolution(x=x, alpha=alpha, weights=lam)


def solve_min_quadratic_over_balls(balls, w_idx, disc_idx, dim: int, anchor=None,
                                   reg: float = 1e-9, tol: float = 1e-6) -> QcqpSolution:
    """``min ||x[w_idx]||^2`` s.t. ``x`` in every ball and ``|x_i| <= 1`` on ``disc_idx``.

    Coordinates outside ``w_idx`` carry a tiny proximal term
    ``reg * |x_i - anchor_i|^2`` so the minimiser is unique. Solved via the
    dual over the ball multipliers (L-BFGS-B on ``mu >= 0``), then polished
    with a Dykstra projection. Returns ``feasible=False`` when the constraint
    set is empty or the polish cannot reach ``FEAS_TOL``.
    """
    _check_full(balls, dim)
    if any(b.empty for b in balls):
        return QcqpSolution(x=np.zeros(dim, complex), objective=np.inf, kkt_residual=np.inf,
                            multipliers=np.full(len(balls), np.nan), feasible=False)
    C, r2 = _stack(balls)
    w_mask = np.zeros(dim, dtype=bool)
    w_mask[np.asarray(w_idx, dtype=int)] = True
    disc_idx = np.asarray([] if disc_idx is None else disc_idx, dtype=int)
    disc_mask = np.zeros(dim, dtype=bool)
    disc_mask[disc_idx] = True
    anchor = np.zeros(dim, complex) if anchor is None else np.asarray(anchor, dtype=complex)
    # per-coordinate weight of the objective / proximal term
    a = np.where(w_mask, 1.0, reg)
    prox = np.where(w_mask, 0.0, reg) * anchor

    def inner(mu):
        S = mu.sum()
        x = (prox + mu @ C) / (a + S)
        x[disc_mask] = project_unit_disc(x[disc_mask])
        return x

    def lagrangian_parts(x):
        obj = float(np.sum(np.abs(x[w_mask]) ** 2)
                    + reg * np.sum(np.abs(x[~w_mask] - anchor[~w_mask]) ** 2))
        cons = np.sum(np.abs(x[None] - C) ** 2, axis=1) - r2
        return obj, cons

    def neg_dual(mu):
        x = inner(mu)
        obj, cons = lagrangian_parts(x)
        return -(obj + mu @ cons), -cons

    K = len(balls)
    res = minimize(neg_dual, np.zeros(K), jac=True, method="L-BFGS-B", bounds=[(0, None)] * K,
                   options={"maxiter": 5000, "gtol": 1e-13, "ftol": 1e-16})
    mu = np.maximum(res.x, 0.0)
    x = inner(mu)
    if _max_violation(x, balls, disc_idx) > FEAS_TOL:
        x = project_intersection(x, balls, disc_idx)
    viol = _max_violation(x, balls, disc_idx)
    obj, cons = lagrangian_parts(x)
    scale = max(1.0, obj)
    kkt = max(max(viol, 0.0), float(np.max(np.abs(mu * cons)))) / scale
    return QcqpSolution(x=x, objective=float(np.sum(np.abs(x[w_mask]) ** 2)), kkt_residual=kkt,
                        multipliers=mu, feasible=viol <= FEAS_TOL)
