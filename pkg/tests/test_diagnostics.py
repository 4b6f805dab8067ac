"""Diagnostics tests.

Oracles: the inner proximal solve is compared against the KKT closed form
(Q + rI) x = r z - c on interior quadratics and against hand-clipped 1-D
solutions on the box boundary; the merit value is compared against a fully
closed-form nested evaluation for quadratic saddles (d_r and p_r both admit
explicit formulas when the solutions stay interior).
"""

import math

import numpy as np
import pytest

from spidergda import (Box, FiniteSum, InnerSolveConfig, MaxItersError,
                       Online, ProblemInstance, RegimeError, SmoothnessMeta,
                       StochasticOracle, dz_norm, fd_check, gs_residuals,
                       lyapunov, mc_gs_residuals, solve_x_r)


def _bilinear_problem():
    oracle = StochasticOracle(
        regime=FiniteSum(1), dim_x=1, dim_y=1,
        eval_f=lambda x, y, i: float(x[0] * y[0]),
        grad_x=lambda x, y, i: np.array([y[0]]),
        grad_y=lambda x, y, i: np.array([x[0]]))
    return ProblemInstance(
        oracle=oracle, set_x=Box([-1.0], [1.0]), set_y=Box([-2.0], [2.0]),
        constants=SmoothnessMeta(L_x=0.0, L_y=1.0, rho=0.0, ell=2.0))


def _scalar_saddle(a=2.0, b=1.0, c=1.0, lim=10.0):
    """F(x, y) = a x^2/2 + b x y - c y^2/2 on wide boxes (1-D each side)."""
    oracle = StochasticOracle(
        regime=FiniteSum(1), dim_x=1, dim_y=1,
        eval_f=lambda x, y, i: float(0.5 * a * x[0] ** 2 + b * x[0] * y[0]
                                     - 0.5 * c * y[0] ** 2),
        grad_x=lambda x, y, i: np.array([a * x[0] + b * y[0]]),
        grad_y=lambda x, y, i: np.array([b * x[0] - c * y[0]]))
    return ProblemInstance(
        oracle=oracle, set_x=Box([-lim], [lim]), set_y=Box([-lim], [lim]),
        constants=SmoothnessMeta(L_x=a, L_y=max(b, c), rho=0.0, ell=10.0,
                                 mu=math.sqrt(2 * c), theta=0.5))


def _quadratic_x_problem(seed=0, d=3):
    """y-independent strongly convex F(x) = x'Qx/2 + c'x (for inner solves)."""
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(d, d))
    Q = M @ M.T + np.eye(d)
    c = rng.normal(size=d)
    oracle = StochasticOracle(
        regime=FiniteSum(1), dim_x=d, dim_y=1,
        eval_f=lambda x, y, i: float(0.5 * x @ Q @ x + c @ x),
        grad_x=lambda x, y, i: Q @ x + c,
        grad_y=lambda x, y, i: np.zeros(1))
    p = ProblemInstance(
        oracle=oracle, set_x=Box(-50 * np.ones(d), 50 * np.ones(d)),
        set_y=Box([-1.0], [1.0]),
        constants=SmoothnessMeta(L_x=float(np.linalg.norm(Q, 2)), L_y=0.0,
                                 rho=0.0, ell=1.0))
    return p, Q, c


# ----------------------------------------------------------------------------
# first-order residuals

def test_inner_solve_config_defaults():
    cfg = InnerSolveConfig()
    assert cfg.tol == 1e-8
    assert cfg.max_iters == 100_000
    assert cfg.step is None


def test_gs_residuals_hand_example():
    # F = x y at the corner (1, 1): gradient (1, 1) points out of the box on
    # the x side and into it on the y (ascent) side -> residuals (1, 1)
    p = _bilinear_problem()
    assert gs_residuals(p, np.array([1.0]), np.array([1.0])) == (1.0, 1.0)
    # the origin is an interior stationary point
    assert gs_residuals(p, np.zeros(1), np.zeros(1)) == (0.0, 0.0)


def test_gs_residuals_online_rejected():
    oracle = StochasticOracle(
        regime=Online(), dim_x=1, dim_y=1,
        eval_f=lambda x, y, i: 0.0,
        grad_x=lambda x, y, i: np.zeros(1),
        grad_y=lambda x, y, i: np.zeros(1))
    p = ProblemInstance(oracle=oracle, set_x=Box([-1], [1]),
                        set_y=Box([-1], [1]),
                        constants=SmoothnessMeta(L_x=0, L_y=0, rho=0, ell=1))
    with pytest.raises(RegimeError):
        gs_residuals(p, np.zeros(1), np.zeros(1))


def test_mc_residuals_track_exact_on_finite_sum():
    from spidergda import make_quadratic_saddle
    p = make_quadratic_saddle(3, 2, seed=1)
    rng = np.random.default_rng(2)
    x = p.set_x.project(rng.normal(size=3))
    y = p.set_y.project(rng.normal(size=2))
    ex_x, ex_y = gs_residuals(p, x, y)
    mc_x, mc_y, se_x, se_y = mc_gs_residuals(p, x, y, batch=4000,
                                             rng=np.random.default_rng(3))
    assert se_x > 0 and se_y > 0
    assert abs(mc_x - ex_x) <= 5 * se_x + 1e-9
    assert abs(mc_y - ex_y) <= 5 * se_y + 1e-9


def test_mc_residuals_online():
    # token-keyed noise around a deterministic gradient field
    def gx(x, y, i):
        return x + 0.1 * np.random.default_rng(i).normal(size=1)

    def gy(x, y, i):
        return -y + 0.1 * np.random.default_rng(i + 1).normal(size=1)

    oracle = StochasticOracle(regime=Online(), dim_x=1, dim_y=1,
                              eval_f=lambda x, y, i: 0.0,
                              grad_x=gx, grad_y=gy)
    p = ProblemInstance(oracle=oracle, set_x=Box([-5], [5]),
                        set_y=Box([-5], [5]),
                        constants=SmoothnessMeta(L_x=1, L_y=1, rho=0, ell=1,
                                                 sigma_x=0.1, sigma_y=0.1))
    res_x, res_y, se_x, se_y = mc_gs_residuals(
        p, np.array([2.0]), np.array([0.5]), batch=2000,
        rng=np.random.default_rng(4))
    assert res_x == pytest.approx(2.0, abs=5 * se_x + 1e-9)
    assert res_y == pytest.approx(0.5, abs=5 * se_y + 1e-9)


# ----------------------------------------------------------------------------
# inner proximal solve

def test_solve_x_r_clips_to_boundary():
    # min_x x + (1/2)(x + 2)^2 over [-1, 1] has unconstrained solution -3
    p = _bilinear_problem()
    x_r = solve_x_r(p, 1.0, np.array([1.0]), np.array([-2.0]))
    assert x_r[0] == -1.0


def test_solve_x_r_matches_kkt_closed_form():
    p, Q, c = _quadratic_x_problem(seed=5)
    rng = np.random.default_rng(6)
    for r in (0.5, 2.0):
        z = rng.normal(size=3)
        want = np.linalg.solve(Q + r * np.eye(3), r * z - c)
        got = solve_x_r(p, r, np.zeros(1), z)
        assert np.linalg.norm(got - want) <= 1e-7


def test_solve_x_r_large_r_pins_to_center():
    p, _, _ = _quadratic_x_problem(seed=7)
    z = np.array([0.3, -1.2, 2.5])
    got = solve_x_r(p, 1e6, np.zeros(1), z)
    assert np.linalg.norm(got - z) <= 1e-5


def test_solve_x_r_requires_strong_convexity():
    p = _scalar_saddle()
    p = ProblemInstance(oracle=p.oracle, set_x=p.set_x, set_y=p.set_y,
                        constants=p.constants.with_updates(rho=1.0))
    with pytest.raises(ValueError):
        solve_x_r(p, 1.0, np.zeros(1), np.zeros(1))


def test_solve_x_r_max_iters_carries_best():
    p, Q, c = _quadratic_x_problem(seed=8)
    cfg = InnerSolveConfig(max_iters=2, tol=1e-16)
    with pytest.raises(MaxItersError) as exc:
        solve_x_r(p, 1.0, np.zeros(1), 40 * np.ones(3), cfg=cfg)
    assert exc.value.best is not None
    assert exc.value.best.shape == (3,)
    assert exc.value.residual > 0


def test_solve_x_r_warm_start_returns_solution():
    p, Q, c = _quadratic_x_problem(seed=9)
    z = np.array([1.0, -0.5, 0.25])
    want = np.linalg.solve(Q + np.eye(3), z - c)
    got = solve_x_r(p, 1.0, np.zeros(1), z, x0=want)
    assert np.array_equal(got, want)  # residual already below tol


# ----------------------------------------------------------------------------
# proximal tracking norm

def test_dz_norm_zero_at_fixed_point():
    # z = -1: the prox map also returns -1 (clip), so the gap vanishes
    p = _bilinear_problem()
    assert dz_norm(p, 1.0, np.array([1.0]), np.array([-1.0])) == 0.0


def test_dz_norm_worked_example():
    # z = 0: x_r = argmin x + x^2/2 = -1 -> 1 * ||0 - (-1)|| = 1
    p = _bilinear_problem()
    assert dz_norm(p, 1.0, np.array([1.0]), np.array([0.0])) == 1.0


def test_dz_norm_scales_with_r_when_pinned():
    # x_r stays clipped at -1 for every r here, so the norm is r * 1
    p = _bilinear_problem()
    z = np.array([-2.0])
    for r in (1.0, 2.0, 4.0):
        assert dz_norm(p, r, np.array([1.0]), z) == pytest.approx(r, rel=1e-12)


# ----------------------------------------------------------------------------
# merit function

def _nested_closed_form(a, b, c, r, x, y, z):
    """Interior closed forms: d_r(y, z), p_r(z), and F_r(x, y, z)."""
    s = a + r
    f_r = 0.5 * a * x ** 2 + b * x * y - 0.5 * c * y ** 2 + 0.5 * r * (x - z) ** 2

    def d_r(yv):
        xs = (r * z - b * yv) / s
        return (0.5 * a * xs ** 2 + b * xs * yv - 0.5 * c * yv ** 2
                + 0.5 * r * (xs - z) ** 2)

    y_star = b * r * z / (c * s + b ** 2)
    return f_r, d_r(y), d_r(y_star)


def test_lyapunov_matches_closed_form_1d():
    a, b, c, r = 2.0, 1.0, 1.0, 1.0
    p = _scalar_saddle(a, b, c)
    x, y, z = 0.6, -0.8, 2.0
    f_r, d_r, p_r = _nested_closed_form(a, b, c, r, x, y, z)
    lv = lyapunov(p, r, np.array([x]), np.array([y]), np.array([z]))
    assert lv.certified
    assert lv.f_r == pytest.approx(f_r, abs=1e-8)
    assert lv.d_r == pytest.approx(d_r, abs=1e-6)
    assert lv.p_r == pytest.approx(p_r, abs=1e-6)
    want = (f_r - d_r) + (p_r - d_r) + p_r
    assert lv.value == pytest.approx(want, abs=1e-5)
    assert float(lv) == lv.value
    # p_r(z) = 3 z^2 / 8 for these constants
    assert p_r == pytest.approx(3.0 * z * z / 8.0, rel=1e-12)


def test_lyapunov_collapse_identity():
    # at x = x_r(y, z) and y = argmax, both gaps vanish and Phi = p_r;
    # for F = x y, r = 1, z = 0: p_r(0) = max_y min_x (xy + x^2/2) = 0 at
    # y = 0, d_r(1, 0) = -1/2, F_r(0, 1, 0) = 0 -> Phi = 1
    p = _bilinear_problem()
    lv = lyapunov(p, 1.0, np.zeros(1), np.array([1.0]), np.zeros(1))
    assert lv.certified
    assert lv.f_r == pytest.approx(0.0, abs=1e-10)
    assert lv.d_r == pytest.approx(-0.5, abs=1e-8)
    assert lv.p_r == pytest.approx(0.0, abs=1e-8)
    assert lv.value == pytest.approx(1.0, abs=1e-7)


def test_lyapunov_multistart_heuristic_2d():
    # 1-D x, 2-D y: the dual maximization is multi-start ascent (flagged),
    # but on this concave quadratic it still matches the closed form
    a, r = 2.0, 1.0
    bvec = np.array([1.0, 0.5])
    C = np.diag([1.0, 2.0])
    oracle = StochasticOracle(
        regime=FiniteSum(1), dim_x=1, dim_y=2,
        eval_f=lambda x, y, i: float(0.5 * a * x[0] ** 2
                                     + x[0] * (bvec @ y) - 0.5 * y @ C @ y),
        grad_x=lambda x, y, i: np.array([a * x[0] + bvec @ y]),
        grad_y=lambda x, y, i: x[0] * bvec - C @ y)
    p = ProblemInstance(
        oracle=oracle, set_x=Box([-10.0], [10.0]),
        set_y=Box([-10.0, -10.0], [10.0, 10.0]),
        constants=SmoothnessMeta(L_x=a, L_y=2.0, rho=0.0, ell=10.0))
    x, z = 0.5, 1.5
    y = np.array([0.3, -0.4])
    s = a + r
    y_star = np.linalg.solve(C + np.outer(bvec, bvec) / s,
                             (r * z / s) * bvec)

    def d_r(yv):
        xs = (r * z - bvec @ yv) / s
        return (0.5 * a * xs ** 2 + xs * (bvec @ yv) - 0.5 * yv @ C @ yv
                + 0.5 * r * (xs - z) ** 2)

    lv = lyapunov(p, r, np.array([x]), y, np.array([z]))
    assert not lv.certified
    assert lv.d_r == pytest.approx(d_r(y), abs=1e-6)
    assert lv.p_r == pytest.approx(d_r(y_star), abs=1e-5)
    assert lv.value >= lv.p_r - 1e-9


def test_lyapunov_online_rejected():
    oracle = StochasticOracle(
        regime=Online(), dim_x=1, dim_y=1,
        eval_f=lambda x, y, i: 0.0,
        grad_x=lambda x, y, i: np.zeros(1),
        grad_y=lambda x, y, i: np.zeros(1))
    p = ProblemInstance(oracle=oracle, set_x=Box([-1], [1]),
                        set_y=Box([-1], [1]),
                        constants=SmoothnessMeta(L_x=0, L_y=0, rho=0, ell=1))
    with pytest.raises(RegimeError):
        lyapunov(p, 1.0, np.zeros(1), np.zeros(1), np.zeros(1))


# ----------------------------------------------------------------------------
# finite-difference harness

def test_fd_check_tiers():
    c = np.array([1.5, -2.0, 0.25])
    lin = fd_check(lambda v: float(c @ v), lambda v: c,
                   np.array([0.3, 0.7, -1.1]))
    assert lin <= 1e-10
    quad = fd_check(lambda v: float(0.5 * v @ v), lambda v: v,
                    np.array([0.5, -0.25, 2.0]))
    assert quad <= 1e-9


def test_fd_check_flags_wrong_gradient():
    err = fd_check(lambda v: float(0.5 * v @ v), lambda v: 2.0 * v,
                   np.array([1.0, 2.0]))
    assert err > 1e-2
