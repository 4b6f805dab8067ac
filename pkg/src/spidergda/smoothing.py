"""Componentwise Moreau-envelope smoothing for composite objectives
f(x, y; xi) = phi(h(c(x; xi)), y; xi) with h a stack of scalar convex pieces.

Each h_j is replaced by its envelope

    h_j^lam(w) = min_q { h_j(q) + (w - q)^2 / (2 lam) },

whose value and 1/lam-Lipschitz derivative come from the proximal point
p = prox_{lam h_j}(w):  value = h_j(p) + (w - p)^2/(2 lam),  derivative
= (w - p)/lam.  The smoothed objective is smooth in x with constants
computable from the composite's (ell_c, ell_h, ell_phi, L_c, L_phi), so the
solver and tuner can run unchanged on the wrapped problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .core import ProblemInstance, Regime, SmoothnessMeta, StochasticOracle
from .projections import ConstraintSet
from .tuner import CompositeConstants, smoothed_constants

__all__ = [
    "ProxFailure",
    "ScalarConvex",
    "AbsValue",
    "Hinge",
    "ScaledIdentity",
    "IterativeProx",
    "MoreauComposite",
    "CertificateInput",
    "envelope",
    "smooth_value",
    "smooth_grad_x",
    "smooth_grad_y",
    "as_problem",
    "near_stationarity_certificate",
    "spot_check_composite",
]

PROX_TOL = 1e-10


class ProxFailure(Exception):
    """A proximal oracle failed to converge to the required tolerance."""


# ----------------------------------------------------------------------------
# scalar convex components

class ScalarConvex:
    """A scalar convex function with a value oracle and a prox oracle.

    Subclasses implement value(w) and prox(lam, w) = argmin_q h(q) +
    (q - w)^2/(2 lam).  Closed forms are preferred; IterativeProx wraps a
    value-only component with a 1e-10-tolerance numerical prox.
    """

    def value(self, w: float) -> float:
        raise NotImplementedError

    def prox(self, lam: float, w: float) -> float:
        raise NotImplementedError


class AbsValue(ScalarConvex):
    """h(q) = |q|; prox is soft thresholding."""

    def value(self, w: float) -> float:
        return abs(w)

    def prox(self, lam: float, w: float) -> float:
        return math.copysign(max(abs(w) - lam, 0.0), w)


class Hinge(ScalarConvex):
    """h(q) = max(0, q)."""

    def value(self, w: float) -> float:
        return max(0.0, w)

    def prox(self, lam: float, w: float) -> float:
        if w <= 0.0:
            return w
        if w >= lam:
            return w - lam
        return 0.0


class ScaledIdentity(ScalarConvex):
    """h(q) = a q (linear); prox shifts by lam*a."""

    def __init__(self, a: float = 1.0):
        self.a = float(a)

    def value(self, w: float) -> float:
        return self.a * w

    def prox(self, lam: float, w: float) -> float:
        return w - lam * self.a


class IterativeProx(ScalarConvex):
    """Numerical prox for a component given only its value oracle.

    Solves the strongly convex 1-D problem by bounded minimization over
    [w - lam*lip - 1, w + lam*lip + 1]; raises ProxFailure when the solver
    does not reach xatol = 1e-10.
    """

    def __init__(self, value_fn: Callable[[float], float], lipschitz: float = 1.0):
        self._value = value_fn
        self.lipschitz = float(lipschitz)

    def value(self, w: float) -> float:
        return self._value(w)

    def prox(self, lam: float, w: float) -> float:
        half = lam * self.lipschitz + 1.0
        res = minimize_scalar(
            lambda q: self._value(q) + (q - w) ** 2 / (2.0 * lam),
            bounds=(w - half, w + half), method="bounded",
            options={"xatol": PROX_TOL, "maxiter": 500})
        if not res.success:
            raise ProxFailure(f"prox solve failed at w={w}, lam={lam}: {res.message}")
        return float(res.x)


# ----------------------------------------------------------------------------
# composite container

@dataclass
class MoreauComposite:
    """A composite objective phi(h(c(x; xi)), y; xi) and its constants.

    Parameters
    ----------
    c : callable(x, sample_id) -> ndarray of shape (d_h,)
        Inner smooth map (one scalar output per h component).
    c_jac : callable(x, sample_id) -> ndarray of shape (dim_x, d_h)
        Analytic Jacobian of c.
    h : sequence of ScalarConvex
        The d_h scalar convex components (convex, ell_h-Lipschitz by
        contract; see spot_check_composite).
    phi : callable(u, y, sample_id) -> float
        Outer function, nondecreasing in each entry of u (contract).
    phi_grad1 : callable(u, y, sample_id) -> ndarray of shape (d_h,)
    phi_grad_y : callable(u, y, sample_id) -> ndarray of shape (dim_y,)
    constants : CompositeConstants
        (ell_c, ell_h, ell_phi, L_c, L_phi, d_h, delta_tilde).
    regime, set_x, set_y : sampling regime and constraint sets, passed
        through unchanged by as_problem.
    mu, theta, sigma_x, sigma_y : extra regularity data for the wrapped
        problem's SmoothnessMeta.
    """

    c: Callable[[np.ndarray, int], np.ndarray]
    c_jac: Callable[[np.ndarray, int], np.ndarray]
    h: Sequence[ScalarConvex]
    phi: Callable[[np.ndarray, np.ndarray, int], float]
    phi_grad1: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    phi_grad_y: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    constants: CompositeConstants
    regime: Regime
    set_x: ConstraintSet
    set_y: ConstraintSet
    mu: float = 1.0
    theta: float = 1.0
    sigma_x: float = 0.0
    sigma_y: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.h) != self.constants.d_h:
            raise ValueError(
                f"got {len(self.h)} h components, constants say d_h={self.constants.d_h}")

    @property
    def d_h(self) -> int:
        return len(self.h)

    @property
    def dim_x(self) -> int:
        return self.set_x.dim

    @property
    def dim_y(self) -> int:
        return self.set_y.dim


# ----------------------------------------------------------------------------
# envelope and smoothed oracles

def envelope(h_j: ScalarConvex, lam: float, w: float) -> tuple[float, float]:
    """Value and derivative of the Moreau envelope of h_j at w.

    value = h_j(p) + (w - p)^2/(2 lam),  derivative = (w - p)/lam,  where
    p = prox_{lam h_j}(w).  The derivative is 1/lam-Lipschitz in w.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    p = h_j.prox(lam, w)
    value = h_j.value(p) + (w - p) ** 2 / (2.0 * lam)
    return value, (w - p) / lam


def _envelopes(comp: MoreauComposite, lam: float, v: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray]:
    vals = np.empty(comp.d_h)
    ders = np.empty(comp.d_h)
    for j, hj in enumerate(comp.h):
        vals[j], ders[j] = envelope(hj, lam, float(v[j]))
    return vals, ders


def smooth_value(comp: MoreauComposite, lam: float, x: np.ndarray,
                 y: np.ndarray, sample_id: int) -> float:
    """phi(h^lam(c(x; xi)), y; xi) with the envelope applied per component."""
    v = np.asarray(comp.c(x, sample_id), dtype=np.float64)
    u, _ = _envelopes(comp, lam, v)
    return float(comp.phi(u, y, sample_id))


def smooth_grad_x(comp: MoreauComposite, lam: float, x: np.ndarray,
                  y: np.ndarray, sample_id: int) -> np.ndarray:
    """Chain-rule gradient:  jac_c(x) @ (envelope derivs * grad_1 phi).

    The middle factor is the diagonal Jacobian of the componentwise
    envelope, so the product collapses to a weighted column combination.
    """
    v = np.asarray(comp.c(x, sample_id), dtype=np.float64)
    u, e = _envelopes(comp, lam, v)
    g1 = np.asarray(comp.phi_grad1(u, y, sample_id), dtype=np.float64)
    jac = np.asarray(comp.c_jac(x, sample_id), dtype=np.float64)
    return jac @ (e * g1)


def smooth_grad_y(comp: MoreauComposite, lam: float, x: np.ndarray,
                  y: np.ndarray, sample_id: int) -> np.ndarray:
    """grad_y phi(h^lam(c(x; xi)), y; xi)."""
    v = np.asarray(comp.c(x, sample_id), dtype=np.float64)
    u, _ = _envelopes(comp, lam, v)
    return np.asarray(comp.phi_grad_y(u, y, sample_id), dtype=np.float64)


# ----------------------------------------------------------------------------
# problem wrapper

def as_problem(comp: MoreauComposite, lam: float) -> ProblemInstance:
    """Wrap the smoothed oracles into a ProblemInstance.

    The SmoothnessMeta carries the smoothed constants (L_x, L_y, rho, ell
    derived from the composite's constants at this lambda); regime and
    constraint sets pass through unchanged.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    sc = smoothed_constants(comp.constants, lam)
    meta = SmoothnessMeta(
        L_x=sc["L_x"], L_y=sc["L_y"], rho=sc["rho"], ell=sc["ell"],
        sigma_x=comp.sigma_x, sigma_y=comp.sigma_y,
        mu=comp.mu, theta=comp.theta)
    oracle = StochasticOracle(
        regime=comp.regime,
        dim_x=comp.dim_x,
        dim_y=comp.dim_y,
        eval_f=lambda x, y, i: smooth_value(comp, lam, x, y, i),
        grad_x=lambda x, y, i: smooth_grad_x(comp, lam, x, y, i),
        grad_y=lambda x, y, i: smooth_grad_y(comp, lam, x, y, i),
    )
    return ProblemInstance(oracle=oracle, set_x=comp.set_x, set_y=comp.set_y,
                           constants=meta,
                           metadata={"lambda": lam, "composite": comp,
                                     **comp.metadata})


# ----------------------------------------------------------------------------
# stationarity translation

@dataclass
class CertificateInput:
    """Measurements on the smoothed proximal problem needed to certify the
    original nonsmooth problem: the prox-center weight r, the norm
    g = ||grad_z d_r^lam(y, x)|| from the inner solve, the primal set
    diameter D_X, and the smoothed problem's y-residual."""

    r: float
    grad_z_norm: float
    D_X: float
    res_y_smoothed: float = 0.0


def near_stationarity_certificate(comp: MoreauComposite, lam: float,
                                  solution: CertificateInput
                                  ) -> tuple[float, float, float]:
    """Translate smoothed-problem residuals into a certificate for the
    original nonsmooth problem.

    Returns (delta, residual_x, residual_y):

        delta = (rho_lam D_X / r) g + (ell_phi ell_h ell_c sqrt(d_h) / r) g
                + (rho_lam/(2 r^2) + 1/r) g^2 + lam ell_phi ell_h^2 sqrt(d_h)

    with g = ||grad_z d_r^lam||, so that dist(0, delta-subdifferential of
    F + indicator of X at x) <= g = residual_x, and

        residual_y = sqrt( 2 res_y_smoothed^2 + lam^2 d_h L_phi^2 ell_h^4 / 2 ).
    """
    cc = comp.constants
    rho_lam = smoothed_constants(cc, lam)["rho"]
    g = solution.grad_z_norm
    r = solution.r
    sqrt_dh = math.sqrt(cc.d_h)
    delta = ((rho_lam * solution.D_X / r) * g
             + (cc.ell_phi * cc.ell_h * cc.ell_c * sqrt_dh / r) * g
             + (rho_lam / (2.0 * r ** 2) + 1.0 / r) * g ** 2
             + lam * cc.ell_phi * cc.ell_h ** 2 * sqrt_dh)
    res_y = math.sqrt(2.0 * solution.res_y_smoothed ** 2
                      + lam ** 2 * cc.d_h * cc.L_phi ** 2 * cc.ell_h ** 4 / 2.0)
    return delta, g, res_y


# ----------------------------------------------------------------------------
# contract spot checks

def spot_check_composite(comp: MoreauComposite, rng: np.random.Generator,
                         n_trials: int = 64, span: float = 3.0,
                         tol: float = 1e-9) -> None:
    """Randomized checks of the composite's declared contracts.

    Secant tests of each h_j for convexity (midpoint inequality) and
    ell_h-Lipschitzness, and monotonicity of phi in its first argument on
    random ordered pairs.  Raises ValueError on a violation.
    """
    lh = comp.constants.ell_h
    for j, hj in enumerate(comp.h):
        for _ in range(n_trials):
            a, b = sorted(rng.uniform(-span, span, size=2))
            va, vb = hj.value(a), hj.value(b)
            mid = hj.value(0.5 * (a + b))
            if mid > 0.5 * (va + vb) + tol:
                raise ValueError(f"h[{j}] fails the midpoint convexity test")
            if abs(va - vb) > lh * abs(a - b) + tol:
                raise ValueError(f"h[{j}] is not ell_h={lh}-Lipschitz")
    y0 = comp.set_y.project(rng.uniform(-1.0, 1.0, size=comp.dim_y))
    for _ in range(n_trials):
        u = rng.uniform(-span, span, size=comp.d_h)
        bump = rng.uniform(0.0, span, size=comp.d_h)
        sample = 0
        if comp.phi(u + bump, y0, sample) < comp.phi(u, y0, sample) - tol:
            raise ValueError("phi is not nondecreasing in its first argument")
