"""Closed-form parameter schedules mapping problem constants and a target
accuracy epsilon to a full SolverConfig.

The smooth pipeline is r -> alpha_x -> alpha_y -> beta -> (K, T, M, B), in
that order (beta's dual error-bound factor uses the already-chosen alpha_y).
The nonsmooth pipeline first picks the smoothing level lambda ~ epsilon,
derives the smoothed regularity constants, and delegates to the smooth
pipeline.  Asymptotic schedules (the theta > 1/2 beta branch, the online
budgets) carry a single user-tunable multiplicative constant, default 1.

Every run records an audit: all formula inputs and outputs, such that
re-running the tuner on the recorded inputs reproduces each value
bit-exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

from .core import FiniteSum, Online, Regime, SmoothnessMeta
from .solver import SolverConfig

__all__ = [
    "TunerInput",
    "CompositeConstants",
    "TunerAudit",
    "InfeasibleScheduleError",
    "compute_r",
    "compute_alpha_x",
    "compute_alpha_y",
    "compute_varpi",
    "compute_beta",
    "compute_budget",
    "tune_smooth",
    "tune_nonsmooth",
    "smoothed_constants",
]

logger = logging.getLogger("spidergda.tuner")

BETA_CAP = 1.0 / 30.0


class InfeasibleScheduleError(Exception):
    """No valid alpha_x exists for the given (possibly user-overridden) r."""


# ----------------------------------------------------------------------------
# inputs

@dataclass
class CompositeConstants:
    """Regularity constants of a composite objective phi(h(c(x)), y) needed
    to derive the smoothed problem's constants."""

    ell_c: float
    ell_h: float
    ell_phi: float
    L_c: float
    L_phi: float
    d_h: int
    delta_tilde: float = 1.0


@dataclass
class TunerInput:
    """Everything the schedules consume.

    delta_phi_estimate is the user's estimate of the initial potential gap
    (initial merit value minus a lower bound on F); sample_cap bounds the
    planned total sample draws (OverflowError beyond it).
    """

    meta: SmoothnessMeta
    epsilon: float
    regime: Regime
    delta_phi_estimate: float = 1.0
    overrides: dict = field(default_factory=dict)
    asymptotic_constant: float = 1.0
    sample_cap: float = 1e9
    composite: Optional[CompositeConstants] = None
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.delta_phi_estimate > 0:
            raise ValueError("delta_phi_estimate must be positive")
        if not self.asymptotic_constant > 0:
            raise ValueError("asymptotic_constant must be positive")
        unknown = set(self.overrides) - {"r", "alpha_x", "alpha_y", "beta",
                                         "K", "T", "M", "B"}
        if unknown:
            raise ValueError(f"unknown override keys: {sorted(unknown)}")


# ----------------------------------------------------------------------------
# individual schedules

def compute_r(meta: SmoothnessMeta) -> float:
    """Proximal-center weight r: the larger of the two admissible branches

        2 rho + 325 (L_y + 1) + 12 sqrt(L_x) sqrt(2 (L_y + 1))
        2 rho + 54 L_y (L_y + 1) + 4 sqrt(L_x) sqrt(3 L_y (L_y + 1))
    """
    L_x, L_y, rho = meta.L_x, meta.L_y, meta.rho
    b1 = 2.0 * rho + 325.0 * (L_y + 1.0) + 12.0 * math.sqrt(L_x) * math.sqrt(2.0 * (L_y + 1.0))
    b2 = 2.0 * rho + 54.0 * L_y * (L_y + 1.0) + 4.0 * math.sqrt(L_x) * math.sqrt(3.0 * L_y * (L_y + 1.0))
    return max(b1, b2)


def alpha_x_interval(meta: SmoothnessMeta, r: float) -> tuple[float, float]:
    """Admissible interval [lower, upper] for alpha_x at this r.

    upper is the min of the three step-size branches (L_y = 0 removes the
    third); lower is the required 24 (L_y + 1)/(r - rho)^2.
    """
    L_x, L_y, rho = meta.L_x, meta.L_y, meta.rho
    if r <= rho:
        raise InfeasibleScheduleError(f"r={r} must exceed rho={rho}")
    b1 = 1.0 / (12.0 * (r + L_x + 2.0 * L_y))
    b2 = (r - rho) ** 2 / (24.0 * (r + L_x) ** 2 * (L_y + 1.0))
    b3 = (r - (rho + 2.0 * L_y)) / (2.0 * L_y * (L_x + r)) if L_y > 0 else math.inf
    upper = min(b1, b2, b3)
    lower = 24.0 * (L_y + 1.0) / (r - rho) ** 2
    return lower, upper


def compute_alpha_x(meta: SmoothnessMeta, r: float) -> float:
    """Primal step size: min of the three branches, validated against the
    required lower bound 24 (L_y + 1)/(r - rho)^2.

    Raises
    ------
    InfeasibleScheduleError
        If the admissible interval is empty (an overridden r too small).
    """
    lower, upper = alpha_x_interval(meta, r)
    if not lower <= upper or upper <= 0:
        raise InfeasibleScheduleError(
            f"no valid alpha_x for r={r}: required lower bound {lower} exceeds "
            f"branch minimum {upper}")
    return upper


def compute_alpha_y(meta: SmoothnessMeta, alpha_x: float) -> float:
    """Dual step size: min{alpha_x, 1/(40 L_y), 1/(4 (2 L_y + 1))}."""
    L_y = meta.L_y
    b2 = 1.0 / (40.0 * L_y) if L_y > 0 else math.inf
    b3 = 1.0 / (4.0 * (2.0 * L_y + 1.0))
    return min(alpha_x, b2, b3)


def compute_varpi(meta: SmoothnessMeta, r: float, alpha_y: float) -> float:
    """Dual error-bound amplification factor

        varpi = (2 (ell D_Y)^{1-2 theta} / (r - rho))
                * ((2/alpha_y^2 + 2 L_y^2 s2^2 + 2 L_y^2) / mu^2),
        s2 = 2 + L_y / (r - rho).
    """
    L_y, rho, ell, mu, theta = meta.L_y, meta.rho, meta.ell, meta.mu, meta.theta
    D_Y = meta.D_Y if meta.D_Y is not None else 1.0
    s2 = 2.0 + L_y / (r - rho)
    lead = 2.0 * (ell * D_Y) ** (1.0 - 2.0 * theta) / (r - rho)
    return lead * ((2.0 / alpha_y ** 2 + 2.0 * L_y ** 2 * s2 ** 2 + 2.0 * L_y ** 2) / mu ** 2)


def compute_beta(meta: SmoothnessMeta, r: float, alpha_x: float, epsilon: float,
                 alpha_y: Optional[float] = None,
                 asymptotic_constant: float = 1.0) -> float:
    """Averaging weight for the prox-center sequence.

    theta <= 1/2: exact min{1/30, 1/(30 r), L_y/(20 r varpi)} with varpi
    evaluated at the configured alpha_y (derived from alpha_x when not
    given).  theta > 1/2: asymptotic_constant times the min of the four
    asymptotic branches, clamped to (0, 1/30].
    """
    L_y, mu, theta = meta.L_y, meta.mu, meta.theta
    if alpha_y is None:
        alpha_y = compute_alpha_y(meta, alpha_x)
    if theta <= 0.5:
        varpi = compute_varpi(meta, r, alpha_y)
        b3 = L_y / (20.0 * r * varpi) if (L_y > 0 and varpi > 0) else math.inf
        return min(BETA_CAP, 1.0 / (30.0 * r), b3)
    q1 = 1.0 / r
    q2 = (alpha_x ** ((2.0 * theta - 1.0) / (2.0 * theta))
          * L_y ** (-1.0 / (2.0 * theta)) * mu ** (1.0 / theta)
          * epsilon ** ((2.0 * theta - 1.0) / theta)) if L_y > 0 else math.inf
    q3 = (r ** (-(2.0 * theta - 1.0)) * mu ** 2 / L_y
          * epsilon ** (4.0 * theta - 2.0)) if L_y > 0 else math.inf
    q4 = (r ** (-(2.0 * theta - 1.0) / theta) * L_y ** ((theta - 1.0) / theta)
          * mu ** (1.0 / theta) * epsilon ** ((2.0 * theta - 1.0) / theta)) if L_y > 0 else math.inf
    beta = asymptotic_constant * min(q1, q2, q3, q4)
    return min(beta, BETA_CAP)


def _kt_branches(meta: SmoothnessMeta, epsilon: float) -> float:
    """max-branch of the iteration-count schedule (without the potential-gap
    factor), per the theta regime."""
    L_x, L_y, mu, theta = meta.L_x, meta.L_y, meta.mu, meta.theta
    if theta <= 0.5:
        return max(L_x + L_y ** 2, (L_y + math.sqrt(L_x)) / mu ** 2) / epsilon ** 2
    t1 = L_y ** 2 * (L_y ** 2 + L_x) / epsilon ** 2
    t2 = ((L_y ** 2 + L_y * math.sqrt(L_x)) ** (2.0 * theta) * L_y
          / (mu ** 2 * epsilon ** (4.0 * theta)))
    t3 = ((L_x + L_y ** 2) ** ((2.0 * theta - 1.0) / (2.0 * theta))
          * L_y ** (1.0 / (2.0 * theta)) * (L_y ** 2 + L_y * math.sqrt(L_x))
          / (mu ** (1.0 / theta) * epsilon ** ((4.0 * theta - 1.0) / theta)))
    t4 = (L_y ** 2 * (L_y + math.sqrt(L_x)) ** ((3.0 * theta - 1.0) / theta)
          / (mu ** (1.0 / theta) * epsilon ** ((4.0 * theta - 1.0) / theta)))
    return max(t1, t2, t3, t4)


def _online_B(meta: SmoothnessMeta, epsilon: float) -> float:
    # theta > 1/2 shares the max-branch structure of the iteration schedule,
    # with the variance ratio as the leading factor
    L_x, L_y, mu, theta = meta.L_x, meta.L_y, meta.mu, meta.theta
    sig2 = meta.sigma_x ** 2 + meta.sigma_y ** 2
    if theta <= 0.5:
        return (L_y ** 2 * sig2 / ((L_y ** 2 + L_x) * epsilon ** 2)) * max(
            L_x + L_y ** 2, (L_y + math.sqrt(L_x)) / mu ** 2)
    return sig2 / (L_y ** 2 + L_x) * _kt_branches(meta, epsilon)


def compute_budget(tin: TunerInput, r: float, alpha_x: float
                   ) -> tuple[int, int, int, int]:
    """Batch sizes and loop counts (K, T, M, B).

    Finite-sum: B = N.  Online: B = asymptotic_constant times the
    theta-appropriate schedule.  T = M = ceil(sqrt(B/2)); K = ceil(KT/T)
    with KT = asymptotic_constant * delta_phi_estimate * max-branch.

    Raises
    ------
    OverflowError
        If the planned total sample draws exceed tin.sample_cap.
    """
    meta, eps, ac, ov = tin.meta, tin.epsilon, tin.asymptotic_constant, tin.overrides
    if "B" in ov:
        B = int(ov["B"])
    elif isinstance(tin.regime, FiniteSum):
        B = tin.regime.n
    else:
        B = max(1, math.ceil(ac * _online_B(meta, eps)))
    T = int(ov["T"]) if "T" in ov else max(1, math.ceil(math.sqrt(B / 2.0)))
    M = int(ov["M"]) if "M" in ov else max(1, math.ceil(math.sqrt(B / 2.0)))
    kt_target = ac * tin.delta_phi_estimate * _kt_branches(meta, eps)
    K = int(ov["K"]) if "K" in ov else max(1, math.ceil(kt_target / T))
    planned = K * B + K * (T - 1) * M
    if planned > tin.sample_cap:
        raise OverflowError(
            f"planned sample draws {planned} exceed cap {tin.sample_cap:g}; "
            f"raise sample_cap or loosen epsilon")
    return K, T, M, B


# ----------------------------------------------------------------------------
# audit

@dataclass
class TunerAudit:
    """Bit-reproducible record of one tuner evaluation."""

    inputs: dict
    outputs: dict

    def to_json(self, indent: int = 2) -> str:
        return json.dumps({"inputs": self.inputs, "outputs": self.outputs},
                          indent=indent, sort_keys=True)


def _regime_dict(regime: Regime) -> dict:
    if isinstance(regime, FiniteSum):
        return {"kind": "finite_sum", "n": regime.n}
    return {"kind": "online"}


def _audit_inputs(tin: TunerInput) -> dict:
    d = {
        "meta": {k: v for k, v in asdict(tin.meta).items()},
        "epsilon": tin.epsilon,
        "regime": _regime_dict(tin.regime),
        "delta_phi_estimate": tin.delta_phi_estimate,
        "overrides": dict(tin.overrides),
        "asymptotic_constant": tin.asymptotic_constant,
        "sample_cap": tin.sample_cap,
        "seed": tin.seed,
    }
    if tin.composite is not None:
        d["composite"] = asdict(tin.composite)
    return d


# ----------------------------------------------------------------------------
# pipelines

def tune_smooth(tin: TunerInput) -> tuple[SolverConfig, TunerAudit]:
    """Evaluate the full smooth-case schedule.

    Per-parameter user overrides replace the formula value at their stage,
    and all downstream stages consume the overridden value; the final
    (r, alpha_x) pair is always validated against the admissible interval.
    """
    ov = tin.overrides
    meta = tin.meta

    r = float(ov["r"]) if "r" in ov else compute_r(meta)
    lower, upper = alpha_x_interval(meta, r)
    if "alpha_x" in ov:
        alpha_x = float(ov["alpha_x"])
        if not (lower <= alpha_x <= upper):
            raise InfeasibleScheduleError(
                f"overridden alpha_x={alpha_x} outside admissible "
                f"[{lower}, {upper}] at r={r}")
    else:
        alpha_x = compute_alpha_x(meta, r)
    alpha_y = float(ov["alpha_y"]) if "alpha_y" in ov else compute_alpha_y(meta, alpha_x)
    varpi = compute_varpi(meta, r, alpha_y) if meta.theta <= 0.5 else None
    beta = float(ov["beta"]) if "beta" in ov else compute_beta(
        meta, r, alpha_x, tin.epsilon, alpha_y=alpha_y,
        asymptotic_constant=tin.asymptotic_constant)
    K, T, M, B = compute_budget(tin, r, alpha_x)
    kt_target = tin.asymptotic_constant * tin.delta_phi_estimate * _kt_branches(meta, tin.epsilon)

    config = SolverConfig(K=K, T=T, M=M, B=B, alpha_x=alpha_x, alpha_y=alpha_y,
                          beta=beta, r=r, seed=tin.seed)
    audit = TunerAudit(
        inputs=_audit_inputs(tin),
        outputs={
            "r": r,
            "alpha_x": alpha_x,
            "alpha_x_lower_bound": lower,
            "alpha_x_upper_bound": upper,
            "alpha_y": alpha_y,
            "varpi": varpi,
            "beta": beta,
            "K": K, "T": T, "M": M, "B": B,
            "KT_target": kt_target,
            "planned_samples": K * B + K * (T - 1) * M,
        },
    )
    return config, audit


def smoothed_constants(comp: CompositeConstants, lam: float) -> dict:
    """Regularity constants of the lambda-smoothed composite objective."""
    lc, lh, lphi = comp.ell_c, comp.ell_h, comp.ell_phi
    Lc, Lphi, dh = comp.L_c, comp.L_phi, float(comp.d_h)
    L_x = math.sqrt(3.0 * lc ** 4 * lphi ** 2 * dh / lam ** 2
                    + 3.0 * dh * lh ** 2 * lphi ** 2 * Lc ** 2
                    + 3.0 * lc ** 4 * dh ** 2 * lh ** 4 * Lphi ** 2)
    L_y = max(math.sqrt(dh) * Lphi * lh * lc, Lphi)
    rho = dh * Lphi * lh ** 2 * lc ** 2 + Lc * lphi * lh * math.sqrt(dh)
    ell = max(lphi * lh * lc * math.sqrt(dh), lphi)
    return {"L_x": L_x, "L_y": L_y, "rho": rho, "ell": ell}


def tune_nonsmooth(tin: TunerInput,
                   lambda_choice: Union[str, float] = "auto"
                   ) -> tuple[float, SolverConfig, TunerAudit]:
    """Pick the smoothing level, substitute the smoothed constants, and run
    the smooth pipeline.

    lambda_choice is "auto" (lambda = asymptotic_constant * epsilon) or an
    explicit positive value; either is clamped to the admissible ceiling
    2 delta_tilde / (ell_h^2 sqrt(d_h)) with a logged warning.
    """
    comp = tin.composite
    if comp is None:
        raise ValueError("tune_nonsmooth requires TunerInput.composite")
    cap = (2.0 * comp.delta_tilde / (comp.ell_h ** 2 * math.sqrt(comp.d_h))
           if comp.ell_h > 0 else math.inf)
    requested = (tin.asymptotic_constant * tin.epsilon
                 if lambda_choice == "auto" else float(lambda_choice))
    if not requested > 0:
        raise ValueError("lambda must be positive")
    lam = min(requested, cap)
    if lam < requested:
        logger.warning("smoothing level clamped from %g to the admissible "
                       "ceiling %g", requested, cap)

    sc = smoothed_constants(comp, lam)
    smooth_meta = tin.meta.with_updates(**sc)
    smooth_tin = TunerInput(
        meta=smooth_meta, epsilon=tin.epsilon, regime=tin.regime,
        delta_phi_estimate=tin.delta_phi_estimate, overrides=tin.overrides,
        asymptotic_constant=tin.asymptotic_constant, sample_cap=tin.sample_cap,
        composite=comp, seed=tin.seed)
    config, audit = tune_smooth(smooth_tin)
    audit.outputs["lambda"] = lam
    audit.outputs["lambda_cap"] = cap
    audit.outputs.update({f"smoothed_{k}": v for k, v in sc.items()})
    audit.inputs["lambda_choice"] = ("auto" if lambda_choice == "auto"
                                     else float(lambda_choice))
    return lam, config, audit
