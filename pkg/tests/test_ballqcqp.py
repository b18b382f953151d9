"""Ball completion, projections and the two convex subproblem solvers."""

import cvxpy as cp
import numpy as np
import pytest

from irs_outage.ballqcqp import (BallConstraint, complete_to_ball, project_intersection,
                                 project_unit_disc, solve_min_quadratic_over_balls,
                                 solve_minmax_feasibility, surrogate_value)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def test_ball_completion_identity(rng):
    """surrogate - eps == tau (||x - c||^2 - r^2) and the two sets coincide."""
    dim, n_pts = 5, 10_000
    f, tau, eps = 0.7, 2.5, 0.3
    g = crandn(rng, dim)
    x0 = crandn(rng, dim)
    ball = complete_to_ball(f, g, tau, x0, eps)
    X = x0 + 1.5 * crandn(rng, n_pts, dim)
    sur = np.array([surrogate_value(f, g, tau, x0, x) for x in X])
    ball_form = tau * (np.sum(np.abs(X - ball.center) ** 2, axis=1) - ball.radius_sq)
    np.testing.assert_allclose(sur - eps, ball_form, rtol=0, atol=1e-10 * np.max(np.abs(sur)))
    inside = np.array([ball.contains(x) for x in X])
    margin = np.abs(sur - eps) > 1e-10 * np.max(np.abs(sur))
    assert np.array_equal(inside[margin], (sur <= eps)[margin])
    assert 0 < inside.mean() < 1


def test_ball_completion_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        complete_to_ball(0.0, np.zeros(2), 0.0, np.zeros(2), 1.0)


def test_empty_ball_when_surrogate_never_satisfied():
    ball = complete_to_ball(5.0, np.zeros(3), 1.0, np.zeros(3), 1.0)
    assert ball.empty
    with pytest.raises(ValueError):
        ball.project(np.zeros(3))


def test_ball_projection_nonexpansive_and_idempotent(rng):
    ball = BallConstraint(center=crandn(rng, 4), radius_sq=0.8)
    for _ in range(200):
        x, y = 2 * crandn(rng, 4), 2 * crandn(rng, 4)
        px, py = ball.project(x), ball.project(y)
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-12
        assert ball.contains(px, tol=1e-12)
        np.testing.assert_allclose(ball.project(px), px, atol=1e-14)


def test_unit_disc_projection():
    z = np.array([0.3 + 0.4j, 3 + 4j, 0.0, -2.0])
    np.testing.assert_allclose(project_unit_disc(z), [0.3 + 0.4j, 0.6 + 0.8j, 0.0, -1.0])


def test_dykstra_single_ball_is_exact_projection(rng):
    ball = BallConstraint(center=crandn(rng, 3), radius_sq=0.5)
    x = 3 * crandn(rng, 3)
    np.testing.assert_allclose(project_intersection(x, [ball], None), ball.project(x), atol=1e-12)


def test_dykstra_matches_convex_projection_oracle(rng):
    dim = 4
    x_star = 0.5 * crandn(rng, dim)
    balls = []
    for _ in range(3):
        c = x_star + crandn(rng, dim)
        balls.append(BallConstraint(center=c, radius_sq=float(np.sum(np.abs(x_star - c) ** 2)) + 0.2))
    disc = np.array([2, 3])
    x = 3 * crandn(rng, dim)
    y = project_intersection(x, balls, disc, tol=1e-12, max_iter=200_000)

    z = cp.Variable(dim, complex=True)
    cons = [cp.sum_squares(z - b.center) <= b.radius_sq for b in balls]
    cons += [cp.abs(z[i]) <= 1 for i in disc]
    cp.Problem(cp.Minimize(cp.sum_squares(z - x)), cons).solve(solver=cp.CLARABEL)
    assert np.linalg.norm(y - z.value) <= 1e-4 * max(1.0, np.linalg.norm(z.value))


def _random_feasible_balls(rng, dim, K, disc, slack=0.3):
    """Balls that all contain a common point which also satisfies the disc constraints."""
    x_star = crandn(rng, dim)
    x_star[disc] = project_unit_disc(x_star[disc]) * 0.9
    balls = []
    for _ in range(K):
        c = x_star + 1.5 * crandn(rng, dim)
        r2 = float(np.sum(np.abs(x_star - c) ** 2)) + slack * rng.uniform()
        balls.append(BallConstraint(center=c, radius_sq=r2))
    return balls


@pytest.mark.parametrize("seed", range(8))
def test_min_quadratic_matches_convex_oracle(seed):
    """dim <= 6: the dual solver agrees with a conic solver to 1e-3 in objective."""
    rng = np.random.default_rng(100 + seed)
    dim = int(rng.integers(2, 7))
    n_w = int(rng.integers(1, dim))
    w_idx = np.arange(n_w)
    disc = np.arange(n_w, dim)
    K = int(rng.integers(1, 5))
    balls = _random_feasible_balls(rng, dim, K, disc)
    sol = solve_min_quadratic_over_balls(balls, w_idx, disc, dim)
    assert sol.feasible

    z = cp.Variable(dim, complex=True)
    cons = [cp.sum_squares(z - b.center) <= b.radius_sq for b in balls]
    cons += [cp.abs(z[i]) <= 1 for i in disc]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(z[w_idx])), cons)
    prob.solve(solver=cp.CLARABEL)
    assert abs(sol.objective - prob.value) <= 1e-3 * max(1.0, prob.value)


def _circle_grid_min(balls, n=100_000):
    """Literal grid oracle for ``min |x|^2`` over discs in the complex plane.

    The minimiser is the origin, the nearest point of one disc, or a point on
    some boundary circle, so a dense sampling of every circle plus these
    closed-form candidates is exhaustive up to the grid step.
    """
    cands = [np.zeros(1, complex)]
    ang = np.exp(2j * np.pi * np.arange(n) / n)
    for b in balls:
        r = np.sqrt(b.radius_sq)
        cands.append(b.center + r * ang)
        c = complex(b.center[0])
        if abs(c) > r:
            cands.append(np.array([c * (1 - r / abs(c))]))
    pts = np.concatenate(cands)
    ok = np.ones(pts.size, dtype=bool)
    for b in balls:
        ok &= np.abs(pts - b.center[0]) ** 2 <= b.radius_sq + 1e-9
    return float(np.min(np.abs(pts[ok]) ** 2))


@pytest.mark.parametrize("seed", range(10))
def test_min_quadratic_matches_literal_grid(seed):
    rng = np.random.default_rng(200 + seed)
    K = int(rng.integers(1, 4))
    balls = _random_feasible_balls(rng, 1, K, np.array([], dtype=int))
    sol = solve_min_quadratic_over_balls(balls, [0], None, 1)
    assert sol.feasible
    assert abs(sol.objective - _circle_grid_min(balls)) <= 1e-3 * max(1.0, sol.objective)


def test_min_quadratic_kkt_and_infeasible_detection(rng):
    balls = _random_feasible_balls(rng, 4, 3, np.array([3]))
    sol = solve_min_quadratic_over_balls(balls, [0, 1, 2], [3], 4)
    assert sol.feasible and sol.kkt_residual <= 1e-4
    far = [BallConstraint(center=np.zeros(2), radius_sq=1.0),
           BallConstraint(center=np.array([5.0, 0.0]), radius_sq=1.0)]
    assert not solve_min_quadratic_over_balls(far, [0], None, 2).feasible
    empty = [BallConstraint(center=np.zeros(2), radius_sq=-1.0)]
    assert not solve_min_quadratic_over_balls(empty, [0], None, 2).feasible


def _minmax_oracle(balls, taus, disc, dim):
    z = cp.Variable(dim, complex=True)
    t = cp.Variable()
    cons = [tk * (cp.sum_squares(z - b.center) - b.radius_sq) <= t for b, tk in zip(balls, taus)]
    cons += [cp.abs(z[i]) <= 1 for i in disc]
    prob = cp.Problem(cp.Minimize(t), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


@pytest.mark.parametrize("seed", range(8))
def test_minmax_matches_convex_oracle(seed):
    rng = np.random.default_rng(300 + seed)
    dim = int(rng.integers(2, 7))
    disc = np.arange(1, dim)
    K = int(rng.integers(1, 5))
    balls = [BallConstraint(center=crandn(rng, dim), radius_sq=float(rng.uniform(-0.5, 1.0)) + 0.0)
             for _ in range(K)]
    balls = [b if b.radius_sq >= 0 else BallConstraint(center=b.center, radius_sq=0.1) for b in balls]
    taus = rng.uniform(0.5, 2.0, K)
    sol = solve_minmax_feasibility(balls, taus, disc, dim)
    ref = _minmax_oracle(balls, taus, disc, dim)
    assert abs(sol.alpha - ref) <= 1e-3 * max(1.0, abs(ref))
    assert np.all(np.abs(sol.x[disc]) <= 1 + 1e-12)
    np.testing.assert_allclose(sol.weights.sum(), 1.0)


def test_minmax_sign_reports_feasibility(rng):
    """alpha < 0 exactly when the balls have a common interior point."""
    inter = _random_feasible_balls(rng, 3, 3, np.array([], dtype=int), slack=0.5)
    assert solve_minmax_feasibility(inter, np.ones(3), None, 3).alpha < 0
    apart = [BallConstraint(center=np.array([0.0, 0.0]), radius_sq=1.0),
             BallConstraint(center=np.array([4.0, 0.0]), radius_sq=1.0)]
    sol = solve_minmax_feasibility(apart, np.ones(2), None, 2)
    # symmetric case: the optimum is the midpoint with value 4 - 1 = 3
    np.testing.assert_allclose(sol.x, [2.0, 0.0], atol=1e-5)
    np.testing.assert_allclose(sol.alpha, 3.0, rtol=1e-6)
    np.testing.assert_allclose(sol.weights, [0.5, 0.5], atol=1e-5)
