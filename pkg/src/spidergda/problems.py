"""Built-in problem zoo: group-DRO and phi-divergence-DRO over the simplex,
a fixed 1-D dual-error-bound example, and synthetic quadratic saddle
instances with closed-form solutions for testing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import FiniteSum, ProblemInstance, SmoothnessMeta, StochasticOracle
from .projections import Box, ConstraintSet, Simplex
from .smoothing import Hinge, MoreauComposite, ScaledIdentity
from .tuner import CompositeConstants

__all__ = [
    "EmptyGroupError",
    "DomainError",
    "SingularityError",
    "GroupDroSpec",
    "PhiDivDroSpec",
    "make_group_dro",
    "group_losses",
    "make_two_group_regression",
    "make_phi_div_dro",
    "PSI_BUILTINS",
    "kl_example_value",
    "kl_example_grad",
    "make_kl_example",
    "make_quadratic_saddle",
    "save_dataset_csv",
    "load_dataset_csv",
]


class EmptyGroupError(Exception):
    """A group dataset has no samples."""


class DomainError(Exception):
    """Evaluation outside the function's domain."""


class SingularityError(Exception):
    """The saddle-defining linear system is singular."""


# ----------------------------------------------------------------------------
# group DRO
#
# min_theta max_{q in Simplex(M)}  sum_g q_g * (mean loss of group g)
# realized as a finite sum over all N samples with per-sample weight
# N * q_{g_i} / |G_{g_i}|.

@dataclass
class GroupDroSpec:
    """Synthetic/loaded group-DRO instance over a linear predictor.

    groups is a list of (features, targets) pairs; the dual variable lives
    on Simplex(M_groups).  loss is "squared" or "hinge" (the latter smoothed
    via the envelope machinery downstream).
    """

    groups: Sequence[tuple]
    loss: str = "squared"
    set_x: Optional[ConstraintSet] = None
    delta_tilde: float = 1.0

    def __post_init__(self):
        if len(self.groups) < 1:
            raise EmptyGroupError("need at least one group")
        dims = set()
        for gi, (X, t) in enumerate(self.groups):
            X = np.asarray(X, dtype=np.float64)
            t = np.asarray(t, dtype=np.float64)
            if X.shape[0] == 0:
                raise EmptyGroupError(f"group {gi} is empty")
            if X.shape[0] != t.shape[0]:
                raise ValueError(f"group {gi}: features/targets length mismatch")
            dims.add(X.shape[1])
        if len(dims) != 1:
            raise ValueError("all groups must share the feature dimension")
        if self.loss not in ("squared", "hinge"):
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def m_groups(self) -> int:
        return len(self.groups)

    @property
    def d_x(self) -> int:
        return np.asarray(self.groups[0][0]).shape[1]


def _flatten_groups(spec: GroupDroSpec):
    X = np.concatenate([np.asarray(g[0], dtype=np.float64) for g in spec.groups])
    t = np.concatenate([np.asarray(g[1], dtype=np.float64) for g in spec.groups])
    g = np.concatenate([np.full(len(gt[1]), gi, dtype=np.int64)
                        for gi, gt in enumerate(spec.groups)])
    return X, t, g


def _set_radius(cset: ConstraintSet) -> float:
    # sup_{v in set} ||v||, used for honest Lipschitz bounds
    if isinstance(cset, Box):
        return float(np.linalg.norm(np.maximum(np.abs(cset.lo), np.abs(cset.hi))))
    from .projections import Ball, FullSpace, Simplex as _Sx
    if isinstance(cset, Ball):
        return float(np.linalg.norm(cset.center) + cset.radius)
    if isinstance(cset, _Sx):
        return 1.0
    raise ValueError("group-DRO needs a bounded primal set")


def make_group_dro(spec: GroupDroSpec) -> MoreauComposite:
    """Composite realization of the group-DRO objective.

    Samples are the N pooled data points, drawn uniformly; the inner map c
    produces the scalar the loss acts on (squared residual for "squared",
    margin 1 - t * prediction for "hinge"), h applies the loss
    (identity / hinge), and phi weights it by N q_{g_i} / |G_{g_i}| so the
    finite-sum mean is exactly  sum_g q_g * (group-g mean loss).
    """
    X, t, g = _flatten_groups(spec)
    n, d = X.shape
    counts = np.bincount(g, minlength=spec.m_groups).astype(np.float64)
    w = n / counts[g]  # per-sample weight N / |G_{g_i}|
    set_x = spec.set_x if spec.set_x is not None else Box(-5.0 * np.ones(d),
                                                          5.0 * np.ones(d))
    set_y = Simplex(spec.m_groups)
    R_x = _set_radius(set_x)
    row_norms = np.linalg.norm(X, axis=1)

    if spec.loss == "squared":
        res_bound = row_norms * R_x + np.abs(t)

        def c(theta, i):
            return np.array([(X[i] @ theta - t[i]) ** 2])

        def c_jac(theta, i):
            return (2.0 * (X[i] @ theta - t[i]) * X[i]).reshape(d, 1)

        h = [ScaledIdentity(1.0)]
        ell_c = float(np.max(2.0 * res_bound * row_norms))
        L_c = float(np.max(2.0 * row_norms ** 2))
        u_max = float(np.max(res_bound ** 2))
    else:  # hinge
        def c(theta, i):
            return np.array([1.0 - t[i] * (X[i] @ theta)])

        def c_jac(theta, i):
            return (-t[i] * X[i]).reshape(d, 1)

        h = [Hinge()]
        ell_c = float(np.max(np.abs(t) * row_norms))
        L_c = 0.0
        u_max = float(1.0 + np.max(np.abs(t) * row_norms) * R_x)

    w_max = float(np.max(w))

    def phi(u, q, i):
        return w[i] * q[g[i]] * u[0]

    def phi_grad1(u, q, i):
        return np.array([w[i] * q[g[i]]])

    def phi_grad_y(u, q, i):
        out = np.zeros(spec.m_groups)
        out[g[i]] = w[i] * u[0]
        return out

    constants = CompositeConstants(
        ell_c=ell_c, ell_h=1.0,
        ell_phi=w_max * math.sqrt(1.0 + u_max ** 2),
        L_c=L_c, L_phi=w_max, d_h=1, delta_tilde=spec.delta_tilde)
    return MoreauComposite(
        c=c, c_jac=c_jac, h=h, phi=phi, phi_grad1=phi_grad1,
        phi_grad_y=phi_grad_y, constants=constants,
        regime=FiniteSum(n), set_x=set_x, set_y=set_y,
        metadata={"kind": "group_dro", "loss": spec.loss, "group_index": g,
                  "group_counts": counts, "features": X, "targets": t})


def group_losses(spec: GroupDroSpec, theta: np.ndarray) -> np.ndarray:
    """Per-group mean loss of the linear predictor theta (true nonsmooth
    loss, not the smoothed surrogate)."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty(spec.m_groups)
    for gi, (X, t) in enumerate(spec.groups):
        X = np.asarray(X, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        pred = X @ theta
        if spec.loss == "squared":
            out[gi] = float(np.mean((pred - t) ** 2))
        else:
            out[gi] = float(np.mean(np.maximum(0.0, 1.0 - t * pred)))
    return out


def make_two_group_regression(n: int = 200, d: int = 3,
                              minority_frac: float = 0.1,
                              noise: float = 0.1, noise_ratio: float = 10.0,
                              seed: int = 0,
                              set_x: Optional[ConstraintSet] = None
                              ) -> GroupDroSpec:
    """Two-group linear regression where the minority group (minority_frac
    of the data, noise_ratio x the noise) follows a different ground-truth
    slope, so pooled least squares sacrifices it."""
    rng = np.random.default_rng(seed)
    n_min = max(1, int(round(minority_frac * n)))
    n_maj = n - n_min
    w_maj = np.zeros(d)
    w_maj[0] = 1.0
    w_min = np.zeros(d)
    w_min[0] = -1.0
    X1 = rng.normal(size=(n_maj, d))
    t1 = X1 @ w_maj + noise * rng.normal(size=n_maj)
    X2 = rng.normal(size=(n_min, d))
    t2 = X2 @ w_min + noise_ratio * noise * rng.normal(size=n_min)
    if set_x is None:
        set_x = Box(-5.0 * np.ones(d), 5.0 * np.ones(d))
    return GroupDroSpec(groups=[(X1, t1), (X2, t2)], loss="squared",
                        set_x=set_x)


# ----------------------------------------------------------------------------
# phi-divergence DRO (penalty form)

def _psi_kl(tv: float) -> float:
    if tv <= 0.0:
        return 1.0
    return tv * math.log(tv) - tv + 1.0


def _psi_kl_prime(tv: float) -> float:
    return math.log(max(tv, 1e-12))


PSI_BUILTINS: dict = {
    "chi2": (lambda tv: 0.5 * (tv - 1.0) ** 2, lambda tv: tv - 1.0),
    "kl": (_psi_kl, _psi_kl_prime),
}


@dataclass
class PhiDivDroSpec:
    """Penalized distributionally-robust regression over Simplex(N):

        min_theta max_{q in Simplex(N)} (1/N) sum_i [ N q_i loss_i(theta)
                                                      - lambda_pen psi(N q_i) ]

    psi is "chi2", "kl", or a (value, derivative) callable pair with
    psi(1) = 0 (verified numerically at construction).
    """

    features: np.ndarray
    targets: np.ndarray
    psi: Union[str, tuple] = "chi2"
    lambda_pen: float = 1.0
    set_x: Optional[ConstraintSet] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("features/targets length mismatch")
        if self.lambda_pen < 0:
            raise ValueError("lambda_pen must be nonnegative")
        value, _ = self.psi_pair
        if abs(value(1.0)) > 1e-12:
            raise ValueError("psi(1) must be 0")

    @property
    def psi_pair(self) -> tuple:
        if isinstance(self.psi, str):
            if self.psi not in PSI_BUILTINS:
                raise ValueError(f"unknown psi {self.psi!r}")
            return PSI_BUILTINS[self.psi]
        return self.psi

    @property
    def n(self) -> int:
        return self.features.shape[0]


def make_phi_div_dro(spec: PhiDivDroSpec) -> ProblemInstance:
    """Smooth finite-sum instance of the penalized DRO objective (squared
    loss, smooth psi); per-sample functions average to the objective."""
    X, t = spec.features, spec.targets
    n, d = X.shape
    psi, psi_prime = spec.psi_pair
    lam_pen = spec.lambda_pen
    set_x = spec.set_x if spec.set_x is not None else Box(-5.0 * np.ones(d),
                                                          5.0 * np.ones(d))
    set_y = Simplex(n)

    def loss(theta, i):
        return (X[i] @ theta - t[i]) ** 2

    def eval_f(theta, q, i):
        return n * q[i] * loss(theta, i) - lam_pen * psi(n * q[i])

    def grad_x(theta, q, i):
        return n * q[i] * 2.0 * (X[i] @ theta - t[i]) * X[i]

    def grad_y(theta, q, i):
        out = np.zeros(n)
        out[i] = n * (loss(theta, i) - lam_pen * psi_prime(n * q[i]))
        return out

    R_x = _set_radius(set_x)
    row_norms = np.linalg.norm(X, axis=1)
    res_bound = row_norms * R_x + np.abs(t)
    L_x = float(2.0 * n * np.max(row_norms ** 2))
    cross = float(n * np.max(2.0 * res_bound * row_norms))
    # psi'' over (0, N]: chi2 -> 1; kl -> 1/t, clamped at the iterate floor
    psi_curv = 1.0 if spec.psi == "chi2" else 1e2
    L_y = max(cross, lam_pen * n ** 2 * psi_curv)
    ell = float(np.max(n * res_bound ** 2) + lam_pen * n * 10.0)
    meta = SmoothnessMeta(L_x=L_x, L_y=L_y, rho=0.0, ell=ell, mu=1.0, theta=1.0)
    oracle = StochasticOracle(regime=FiniteSum(n), dim_x=d, dim_y=n,
                              eval_f=eval_f, grad_x=grad_x, grad_y=grad_y)
    return ProblemInstance(oracle=oracle, set_x=set_x, set_y=set_y,
                           constants=meta,
                           metadata={"kind": "phi_div_dro",
                                     "lambda_pen": lam_pen})


# ----------------------------------------------------------------------------
# 1-D dual-error-bound example
#
# g(y) on [-2, 2]: 2 e^{y+1} - 1 on [-2,-1];  -y^2 + 2 on (-1,1];
# 2 e^{-y+1} - 1 on (1,2].  Continuously differentiable, unique max g(0)=2,
# and dist(0, -g'(y) + N_{[-2,2]}(y)) >= (1/10) (2 - g(y))^{1/2} everywhere.

def kl_example_value(y: float) -> float:
    """Piecewise value of the 1-D example; DomainError outside [-2, 2]."""
    if y < -2.0 or y > 2.0:
        raise DomainError(f"y={y} outside [-2, 2]")
    if y <= -1.0:
        return 2.0 * math.exp(y + 1.0) - 1.0
    if y <= 1.0:
        return -y * y + 2.0
    return 2.0 * math.exp(-y + 1.0) - 1.0


def kl_example_grad(y: float) -> float:
    """Derivative of the example: {2 e^{y+1}, -2y, -2 e^{-y+1}}."""
    if y < -2.0 or y > 2.0:
        raise DomainError(f"y={y} outside [-2, 2]")
    if y <= -1.0:
        return 2.0 * math.exp(y + 1.0)
    if y <= 1.0:
        return -2.0 * y
    return -2.0 * math.exp(-y + 1.0)


def make_kl_example() -> ProblemInstance:
    """The example as a ProblemInstance: maximize g(y) over [-2, 2] (the
    primal side is a frozen scalar), with the example's dual error-bound
    constants mu = 1/10, theta = 1/2."""
    set_x = Box(np.zeros(1), np.zeros(1))
    set_y = Box(-2.0 * np.ones(1), 2.0 * np.ones(1))
    oracle = StochasticOracle(
        regime=FiniteSum(1), dim_x=1, dim_y=1,
        eval_f=lambda x, y, i: kl_example_value(float(y[0])),
        grad_x=lambda x, y, i: np.zeros(1),
        grad_y=lambda x, y, i: np.array([kl_example_grad(float(y[0]))]),
    )
    meta = SmoothnessMeta(L_x=0.0, L_y=2.0, rho=0.0, ell=2.0, mu=0.1, theta=0.5)
    return ProblemInstance(oracle=oracle, set_x=set_x, set_y=set_y,
                           constants=meta, metadata={"kind": "kl_example"})


# ----------------------------------------------------------------------------
# quadratic saddle fixture

def make_quadratic_saddle(d_x: int, d_y: int, *, n_samples: int = 16,
                          a_range: tuple = (0.5, 2.0),
                          c_range: tuple = (1.0, 3.0),
                          coupling: float = 1.0, linear_scale: float = 1.0,
                          noise: float = 0.3, seed: int = 0,
                          set_x: Optional[ConstraintSet] = None,
                          set_y: Optional[ConstraintSet] = None
                          ) -> ProblemInstance:
    """Finite-sum quadratic minimax fixture with a closed-form saddle.

        F(x, y) = 1/2 x'Ax + x'By - 1/2 y'Cy + a'x - b'y

    A has spectrum in a_range (negative lower end gives weak convexity
    rho = -min eig), C has spectrum in c_range (c_range[0] > 0, so F(x, .)
    is strongly concave: the dual error bound holds with theta = 1/2,
    mu = sqrt(2 min eig C)).  Per-sample quadratics are mean-centered
    perturbations of (A, B, C, a, b), so their average recovers F.  The
    saddle solves the first-order system and is stored in metadata; the
    default boxes contain it strictly in their interior but are not
    centered on it.

    Raises
    ------
    SingularityError
        If the saddle system is singular.
    """
    if not c_range[0] > 0:
        raise ValueError("c_range[0] must be positive (strong concavity in y)")
    rng = np.random.default_rng(seed)

    def _sym_with_spectrum(dim, lo, hi):
        Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        eig = np.linspace(lo, hi, dim) if dim > 1 else np.array([hi])
        return (Q * eig) @ Q.T

    A = _sym_with_spectrum(d_x, a_range[0], a_range[1])
    C = _sym_with_spectrum(d_y, c_range[0], c_range[1])
    B = coupling * rng.normal(size=(d_x, d_y)) / math.sqrt(max(d_x, d_y))
    a_vec = linear_scale * rng.normal(size=d_x)
    b_vec = linear_scale * rng.normal(size=d_y)

    kkt = np.block([[A, B], [B.T, -C]])
    rhs = np.concatenate([-a_vec, b_vec])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as err:
        raise SingularityError(f"saddle system is singular: {err}") from None
    x_star, y_star = sol[:d_x], sol[d_x:]

    n = n_samples

    def _centered(shape, symmetric=False):
        S = noise * rng.normal(size=(n,) + shape)
        if symmetric:
            S = 0.5 * (S + np.swapaxes(S, 1, 2))
        return S - S.mean(axis=0)

    As = A + _centered((d_x, d_x), symmetric=True)
    Bs = B + _centered((d_x, d_y))
    Cs = C + _centered((d_y, d_y), symmetric=True)
    a_s = a_vec + _centered((d_x,))
    b_s = b_vec + _centered((d_y,))

    def eval_f(x, y, i):
        return float(0.5 * x @ As[i] @ x + x @ Bs[i] @ y - 0.5 * y @ Cs[i] @ y
                     + a_s[i] @ x - b_s[i] @ y)

    def grad_x(x, y, i):
        return As[i] @ x + Bs[i] @ y + a_s[i]

    def grad_y(x, y, i):
        return Bs[i].T @ x - Cs[i] @ y - b_s[i]

    def grad_x_batch(x, y, ids):
        return (np.einsum("nij,j->ni", As[ids], x)
                + np.einsum("nij,j->ni", Bs[ids], y) + a_s[ids])

    def grad_y_batch(x, y, ids):
        return (np.einsum("nji,j->ni", Bs[ids], x)
                - np.einsum("nij,j->ni", Cs[ids], y) - b_s[ids])

    if set_x is None:
        set_x = Box(x_star - 1.0, x_star + 3.0)
    if set_y is None:
        set_y = Box(y_star - 1.0, y_star + 3.0)

    spec_norms_A = np.array([np.linalg.norm(As[i], 2) for i in range(n)])
    spec_norms_B = np.array([np.linalg.norm(Bs[i], 2) for i in range(n)])
    spec_norms_C = np.array([np.linalg.norm(Cs[i], 2) for i in range(n)])
    min_eig_A = min(float(np.linalg.eigvalsh(As[i])[0]) for i in range(n))
    min_eig_C = float(np.linalg.eigvalsh(C)[0])
    L_x = float(np.max(spec_norms_A))
    L_y = float(max(np.max(spec_norms_B), np.max(spec_norms_C)))
    rho = max(0.0, -min_eig_A)
    R_x = _set_radius(set_x)
    R_y = _set_radius(set_y)
    ell = float((np.max(spec_norms_A) + np.max(spec_norms_B)) * R_x
                + (np.max(spec_norms_B) + np.max(spec_norms_C)) * R_y
                + np.max(np.linalg.norm(a_s, axis=1))
                + np.max(np.linalg.norm(b_s, axis=1)))
    meta = SmoothnessMeta(L_x=L_x, L_y=L_y, rho=rho, ell=ell,
                          mu=math.sqrt(2.0 * min_eig_C), theta=0.5)
    oracle = StochasticOracle(regime=FiniteSum(n), dim_x=d_x, dim_y=d_y,
                              eval_f=eval_f, grad_x=grad_x, grad_y=grad_y,
                              grad_x_batch=grad_x_batch,
                              grad_y_batch=grad_y_batch)
    interior = (bool(np.all(x_star > set_x.lo) and np.all(x_star < set_x.hi))
                if isinstance(set_x, Box) else True)
    return ProblemInstance(
        oracle=oracle, set_x=set_x, set_y=set_y, constants=meta,
        metadata={"kind": "quadratic_saddle", "A": A, "B": B, "C": C,
                  "a": a_vec, "b": b_vec, "saddle_x": x_star,
                  "saddle_y": y_star, "interior": interior})


# ----------------------------------------------------------------------------
# dataset CSV
#
# header:  feature_0,...,feature_{d-1},target,group  (UTF-8, LF, '.' decimal)

def save_dataset_csv(path, features: np.ndarray, targets: np.ndarray,
                     groups: np.ndarray) -> None:
    """Write a dataset to CSV with the canonical header."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    d = features.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"feature_{j}" for j in range(d)] + ["target", "group"])
        for i in range(features.shape[0]):
            writer.writerow([repr(float(v)) for v in features[i]]
                            + [repr(float(targets[i])), int(groups[i])])


def load_dataset_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a dataset CSV written by save_dataset_csv; returns
    (features, targets, groups)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 2
        if header != [f"feature_{j}" for j in range(d)] + ["target", "group"]:
            raise ValueError(f"unexpected CSV header: {header}")
        feats, targs, grps = [], [], []
        for row in reader:
            feats.append([float(v) for v in row[:d]])
            targs.append(float(row[d]))
            grps.append(int(row[d + 1]))
    return (np.asarray(feats, dtype=np.float64),
            np.asarray(targs, dtype=np.float64),
            np.asarray(grps, dtype=np.int64))


def spec_from_csv(path, loss: str = "squared",
                  set_x: Optional[ConstraintSet] = None) -> GroupDroSpec:
    """Load a dataset CSV into a GroupDroSpec (groups by the group column)."""
    X, t, g = load_dataset_csv(path)
    m = int(g.max()) + 1 if len(g) else 0
    groups = [(X[g == gi], t[g == gi]) for gi in range(m)]
    for gi, (Xg, _) in enumerate(groups):
        if Xg.shape[0] == 0:
            raise EmptyGroupError(f"group {gi} has no rows in {path}")
    return GroupDroSpec(groups=groups, loss=loss, set_x=set_x)
