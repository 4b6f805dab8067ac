"""Problem-builder tests.

Oracles: hand-computed values on tiny instances (one or two samples, d = 1,
dyadic numbers where possible), closed-form first-order conditions for the
quadratic saddle, least-squares fits per group for the two-group fixture,
and finite differences for every analytic gradient.
"""

import math

import numpy as np
import pytest

from spidergda import (Box, DomainError, EmptyGroupError, GroupDroSpec,
                       PhiDivDroSpec, Simplex, SingularityError,
                       full_grad_x, full_grad_y, full_value,
                       group_losses, kl_example_grad, kl_example_value,
                       load_dataset_csv, make_group_dro, make_kl_example,
                       make_phi_div_dro, make_quadratic_saddle,
                       make_two_group_regression, normal_cone_dist,
                       save_dataset_csv, smooth_value, spec_from_csv,
                       spot_check_composite, as_problem)
from spidergda.diagnostics import fd_check
from spidergda.problems import PSI_BUILTINS


# ----------------------------------------------------------------------------
# 1-D error-bound example

def test_kl_example_values():
    assert kl_example_value(0.0) == 2.0
    assert kl_example_value(1.0) == 1.0
    assert kl_example_value(-1.0) == 1.0
    assert kl_example_value(-2.0) == 2.0 * math.exp(-1.0) - 1.0
    assert kl_example_value(2.0) == 2.0 * math.exp(-1.0) - 1.0
    assert kl_example_grad(-2.0) == 0.7357588823428847  # 2 e^{-1}
    assert kl_example_grad(0.5) == -1.0


def test_kl_example_continuously_differentiable():
    for joint in (-1.0, 1.0):
        lo, hi = joint - 1e-9, joint + 1e-9
        assert kl_example_value(hi) == pytest.approx(kl_example_value(lo),
                                                     abs=1e-8)
        assert kl_example_grad(hi) == pytest.approx(kl_example_grad(lo),
                                                    abs=1e-8)


def test_kl_example_gradient_fd():
    for y in np.linspace(-1.9, 1.9, 37):  # grid avoids the +-1 kinks
        if min(abs(y - 1.0), abs(y + 1.0)) < 1e-3:
            continue
        fd = (kl_example_value(y + 1e-6) - kl_example_value(y - 1e-6)) / 2e-6
        assert fd == pytest.approx(kl_example_grad(y), abs=1e-8)


def test_kl_example_domain():
    with pytest.raises(DomainError):
        kl_example_value(2.0001)
    with pytest.raises(DomainError):
        kl_example_grad(-2.0001)


def test_kl_example_error_bound_on_grid():
    # dist(0, -g'(y) + N_{[-2,2]}(y)) >= (1/10) sqrt(2 - g(y)) everywhere
    box = Box([-2.0], [2.0])
    for y in np.linspace(-2.0, 2.0, 4001):
        res = normal_cone_dist(box, np.array([y]),
                               np.array([-kl_example_grad(y)]))
        assert res >= 0.1 * math.sqrt(max(0.0, 2.0 - kl_example_value(y))) - 1e-12


def test_make_kl_example_problem():
    p = make_kl_example()
    assert full_value(p, np.zeros(1), np.array([0.5])) == kl_example_value(0.5)
    assert full_grad_y(p, np.zeros(1), np.array([0.5]))[0] == -1.0
    assert p.constants.mu == 0.1
    assert p.constants.theta == 0.5
    assert p.constants.D_Y == 4.0


# ----------------------------------------------------------------------------
# group-DRO composite

def _tiny_spec():
    # two singleton groups in d = 1: losses at theta are (theta)^2 and
    # (2 theta - 2)^2
    return GroupDroSpec(groups=[(np.array([[1.0]]), np.array([0.0])),
                                (np.array([[2.0]]), np.array([2.0]))],
                        loss="squared", set_x=Box([-5.0], [5.0]))


def test_group_losses_by_hand():
    losses = group_losses(_tiny_spec(), np.array([1.0]))
    assert losses.tolist() == [1.0, 0.0]
    losses = group_losses(_tiny_spec(), np.array([3.0]))
    assert losses.tolist() == [9.0, 16.0]


def test_group_dro_mean_is_weighted_group_loss():
    # phi weights by N q_g / |G_g|, so the finite-sum mean of the *unsmoothed*
    # composite is exactly sum_g q_g loss_g; with the identity piece the
    # envelope is a rigid shift by lam/2, uniformly in (theta, q)
    spec = _tiny_spec()
    comp = make_group_dro(spec)
    lam = 0.25
    p = as_problem(comp, lam)
    rng = np.random.default_rng(0)
    for _ in range(10):
        theta = rng.uniform(-3, 3, size=1)
        q = comp.set_y.project(rng.uniform(0, 1, size=2))
        want = float(q @ group_losses(spec, theta)) - lam / 2.0
        assert full_value(p, theta, q) == pytest.approx(want, rel=1e-12)


def test_group_dro_inner_map_by_hand():
    comp = make_group_dro(_tiny_spec())
    theta = np.array([3.0])
    assert comp.c(theta, 0).tolist() == [9.0]       # (3 - 0)^2
    assert comp.c_jac(theta, 0).tolist() == [[6.0]]  # 2 * 3 * 1
    assert comp.c(theta, 1).tolist() == [16.0]      # (6 - 2)^2
    assert comp.c_jac(theta, 1).tolist() == [[16.0]]  # 2 * 4 * 2
    # phi routes sample i to its group's dual coordinate, weight N/|G_g| = 2
    q = np.array([0.75, 0.25])
    u = np.array([9.0])
    assert comp.phi(u, q, 0) == 2.0 * 0.75 * 9.0
    assert comp.phi_grad_y(u, q, 1).tolist() == [0.0, 2.0 * 9.0]


def test_group_dro_hinge_loss():
    spec = GroupDroSpec(groups=[(np.array([[2.0]]), np.array([1.0]))],
                        loss="hinge", set_x=Box([-5.0], [5.0]))
    comp = make_group_dro(spec)
    theta = np.array([0.25])
    assert comp.c(theta, 0).tolist() == [0.5]  # 1 - 1 * (2 * 0.25)
    assert comp.c_jac(theta, 0).tolist() == [[-2.0]]
    # hinge envelope at 0.5 with lam = 1/4: 0.5 - 0.125 = 0.375, weight 1
    assert smooth_value(comp, 0.25, theta, np.array([1.0]), 0) == 0.375
    assert group_losses(spec, theta)[0] == 0.5


def test_group_dro_contracts_hold():
    for loss in ("squared", "hinge"):
        spec = GroupDroSpec(groups=_tiny_spec().groups, loss=loss,
                            set_x=Box([-5.0], [5.0]))
        spot_check_composite(make_group_dro(spec), np.random.default_rng(1))


def test_group_dro_validation():
    with pytest.raises(EmptyGroupError):
        GroupDroSpec(groups=[])
    with pytest.raises(EmptyGroupError):
        GroupDroSpec(groups=[(np.zeros((0, 2)), np.zeros(0))])
    with pytest.raises(ValueError):
        GroupDroSpec(groups=[(np.zeros((2, 2)), np.zeros(3))])
    with pytest.raises(ValueError):
        GroupDroSpec(groups=[(np.zeros((2, 2)), np.zeros(2)),
                             (np.zeros((2, 3)), np.zeros(2))])
    with pytest.raises(ValueError):
        GroupDroSpec(groups=_tiny_spec().groups, loss="huber")


def test_two_group_regression_conflicting_slopes():
    spec = make_two_group_regression(n=200, d=3, minority_frac=0.1, seed=0)
    (X1, t1), (X2, t2) = spec.groups
    assert X1.shape == (180, 3)
    assert X2.shape == (20, 3)
    w1 = np.linalg.lstsq(X1, t1, rcond=None)[0]
    w2 = np.linalg.lstsq(X2, t2, rcond=None)[0]
    assert w1[0] > 0.5  # majority slope ~ +1
    assert w2[0] < -0.3  # minority slope ~ -1 (10x noisier)


# ----------------------------------------------------------------------------
# phi-divergence DRO

def test_phi_div_value_by_hand():
    # N = 3, losses (0.49, 0.36, 1.21) at theta = 0.3; Nq = (0.6, 1.5, 0.9);
    # chi2 penalties (0.08, 0.125, 0.005); mean of the three terms = 0.571
    spec = PhiDivDroSpec(features=np.array([[1.0], [2.0], [3.0]]),
                         targets=np.array([1.0, 0.0, 2.0]),
                         psi="chi2", lambda_pen=1.0)
    p = make_phi_div_dro(spec)
    theta = np.array([0.3])
    q = np.array([0.2, 0.5, 0.3])
    assert full_value(p, theta, q) == pytest.approx(0.571, rel=1e-12)
    assert isinstance(p.set_y, Simplex)


def test_phi_div_gradients_fd():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(4, 2))
    t = rng.normal(size=4)
    for psi in ("chi2", "kl"):
        p = make_phi_div_dro(PhiDivDroSpec(features=X, targets=t, psi=psi,
                                           lambda_pen=0.7))
        theta = np.array([0.4, -0.2])
        q = np.array([0.3, 0.2, 0.25, 0.25])  # interior keeps kl smooth
        ex = fd_check(lambda v: full_value(p, v, q),
                      lambda v: full_grad_x(p, v, q), theta)
        ey = fd_check(lambda v: full_value(p, theta, v),
                      lambda v: full_grad_y(p, theta, v), q)
        assert ex <= 1e-7
        assert ey <= 1e-7


def test_phi_div_two_sample_stationarity():
    # closed form: interior maximizer has equal dual gradient coordinates,
    # q0 = 1/2 + (l0 - l1)/(4 lam)
    X = np.array([[1.0], [1.0]])
    t = np.array([0.0, 1.0])
    lam = 2.0
    p = make_phi_div_dro(PhiDivDroSpec(features=X, targets=t, psi="chi2",
                                       lambda_pen=lam))
    theta = np.array([0.25])
    l0, l1 = (0.25 - 0.0) ** 2, (0.25 - 1.0) ** 2
    s = 0.5 + (l0 - l1) / (4.0 * lam)
    g = full_grad_y(p, theta, np.array([s, 1.0 - s]))
    assert g[0] == pytest.approx(g[1], abs=1e-12)


def test_phi_div_no_penalty_points_at_worst_sample():
    X = np.array([[1.0], [2.0], [3.0]])
    t = np.array([0.0, 0.0, 0.0])
    p = make_phi_div_dro(PhiDivDroSpec(features=X, targets=t, psi="chi2",
                                       lambda_pen=0.0))
    theta = np.array([1.0])  # losses 1, 4, 9
    g = full_grad_y(p, theta, np.full(3, 1 / 3))
    assert np.argmax(g) == 2
    assert g.tolist() == [1.0, 4.0, 9.0]


def test_phi_div_psi_validation():
    X, t = np.ones((2, 1)), np.zeros(2)
    with pytest.raises(ValueError):
        PhiDivDroSpec(features=X, targets=t, psi="hellinger")
    with pytest.raises(ValueError):
        # psi(1) != 0
        PhiDivDroSpec(features=X, targets=t,
                      psi=(lambda v: v, lambda v: 1.0))
    with pytest.raises(ValueError):
        PhiDivDroSpec(features=X, targets=t, lambda_pen=-1.0)
    with pytest.raises(ValueError):
        PhiDivDroSpec(features=np.ones((3, 1)), targets=np.zeros(2))
    # a valid custom pair is accepted
    PhiDivDroSpec(features=X, targets=t,
                  psi=(lambda v: (v - 1.0) ** 4, lambda v: 4 * (v - 1.0) ** 3))


def test_kl_psi_edge_cases():
    val, der = PSI_BUILTINS["kl"]
    assert val(1.0) == 0.0
    assert val(0.0) == 1.0  # limit t log t -> 0
    assert der(1.0) == 0.0
    assert math.isfinite(der(0.0))  # clamped log


# ----------------------------------------------------------------------------
# quadratic saddle fixture

def test_saddle_solves_first_order_system():
    p = make_quadratic_saddle(3, 2, seed=4)
    md = p.metadata
    A, B, C = md["A"], md["B"], md["C"]
    xs, ys = md["saddle_x"], md["saddle_y"]
    assert np.linalg.norm(A @ xs + B @ ys + md["a"]) <= 1e-10
    assert np.linalg.norm(B.T @ xs - C @ ys - md["b"]) <= 1e-10
    assert md["interior"]
    assert np.all(xs > p.set_x.lo) and np.all(xs < p.set_x.hi)


def test_saddle_per_sample_means_recover_population():
    p = make_quadratic_saddle(3, 2, seed=5, noise=0.4)
    md = p.metadata
    rng = np.random.default_rng(6)
    x = rng.normal(size=3)
    y = rng.normal(size=2)
    gx = full_grad_x(p, x, y)
    gy = full_grad_y(p, x, y)
    assert gx == pytest.approx(md["A"] @ x + md["B"] @ y + md["a"], abs=1e-12)
    assert gy == pytest.approx(md["B"].T @ x - md["C"] @ y - md["b"], abs=1e-12)


def test_saddle_batch_path_matches_loop():
    p = make_quadratic_saddle(2, 2, seed=7)
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=2), rng.normal(size=2)
    ids = np.array([3, 0, 3, 5])
    gx, gy = p.oracle.batch_grads(x, y, ids)
    for row, i in enumerate(ids):
        assert gx[row] == pytest.approx(p.oracle.grad_x(x, y, int(i)), abs=1e-12)
        assert gy[row] == pytest.approx(p.oracle.grad_y(x, y, int(i)), abs=1e-12)


def test_saddle_one_dimensional_spectra():
    p = make_quadratic_saddle(1, 1, a_range=(2.0, 2.0), c_range=(3.0, 3.0),
                              seed=9)
    assert p.metadata["A"].tolist() == [[2.0]]
    assert p.metadata["C"].tolist() == [[3.0]]
    assert p.constants.mu == math.sqrt(6.0)


def test_saddle_zero_noise_constants():
    p = make_quadratic_saddle(3, 2, seed=10, noise=0.0)
    A, C = p.metadata["A"], p.metadata["C"]
    assert p.constants.L_x == pytest.approx(np.linalg.norm(A, 2), rel=1e-12)
    assert p.constants.rho == 0.0  # spectrum (0.5, 2) is positive
    assert p.constants.mu == pytest.approx(math.sqrt(2.0), rel=1e-12)
    assert p.constants.theta == 0.5


def test_saddle_weakly_convex_spectrum_sets_rho():
    p = make_quadratic_saddle(2, 2, a_range=(-1.0, 2.0), seed=11, noise=0.0)
    assert p.constants.rho == pytest.approx(1.0, rel=1e-12)


def test_saddle_singular_system_raises():
    with pytest.raises(SingularityError):
        make_quadratic_saddle(2, 2, a_range=(0.0, 0.0), coupling=0.0, seed=12)
    with pytest.raises(ValueError):
        make_quadratic_saddle(2, 2, c_range=(0.0, 1.0))


# ----------------------------------------------------------------------------
# dataset CSV round trip

def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(13)
    X = np.concatenate([rng.normal(size=(5, 2)) * 1e-8,
                        rng.normal(size=(5, 2)) * 1e8])
    t = rng.normal(size=10)
    g = np.array([0] * 6 + [1] * 4)
    path = tmp_path / "data.csv"
    save_dataset_csv(path, X, t, g)
    raw = path.read_bytes()
    assert raw.startswith(b"feature_0,feature_1,target,group\n")
    assert b"\r" not in raw
    X2, t2, g2 = load_dataset_csv(path)
    assert np.array_equal(X, X2)
    assert np.array_equal(t, t2)
    assert np.array_equal(g, g2)


def test_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x0,x1,label,grp\n0,0,0,0\n")
    with pytest.raises(ValueError):
        load_dataset_csv(path)


def test_spec_from_csv(tmp_path):
    X = np.array([[1.0], [2.0], [3.0]])
    t = np.array([1.0, 0.0, 2.0])
    g = np.array([0, 1, 0])
    path = tmp_path / "groups.csv"
    save_dataset_csv(path, X, t, g)
    spec = spec_from_csv(path, loss="squared", set_x=Box([-1.0], [1.0]))
    assert spec.m_groups == 2
    assert spec.groups[0][0].shape == (2, 1)
    assert spec.groups[1][1].tolist() == [0.0]


def test_spec_from_csv_missing_group(tmp_path):
    X = np.ones((2, 1))
    t = np.zeros(2)
    g = np.array([0, 2])  # group 1 has no rows
    path = tmp_path / "gap.csv"
    save_dataset_csv(path, X, t, g)
    with pytest.raises(EmptyGroupError):
        spec_from_csv(path)
