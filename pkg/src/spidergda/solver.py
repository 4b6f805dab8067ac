"""Main optimization loop: smoothed stochastic gradient descent-ascent with
variance-reduced estimates over K epochs of T inner steps.

Per inner step, with estimates (G_x, G_y) at the current (x, y):

    x+ = proj_X( x - alpha_x [G_x + r (x - z)] )
    y+ = proj_Y( y + alpha_y G_y )
    z+ = z + beta (x+ - z)

Epoch rollover carries (x, y, z) and re-anchors the estimator.  The returned
pair (x~, y~) is drawn uniformly over all K*T post-update iterates via
single-slot reservoir sampling, so the full trajectory is never stored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import FiniteSum, ProblemInstance
from .estimator import EstimatorState, anchor, batch_rng, recurse
from .projections import Ball, Box, ConstraintSet, FullSpace, Simplex

__all__ = [
    "SolverConfig",
    "IterateState",
    "TraceRow",
    "RunTrace",
    "NonFiniteError",
    "default_initial_point",
    "step",
    "run",
]

logger = logging.getLogger("spidergda.solver")


class NonFiniteError(Exception):
    """An iterate became NaN/Inf; carries the partial trace when raised by run."""

    def __init__(self, message: str, trace: Optional["RunTrace"] = None):
        super().__init__(message)
        self.trace = trace


# ----------------------------------------------------------------------------
# configuration and state

@dataclass
class SolverConfig:
    """Static schedule for one run.

    K epochs of T inner steps; M recursion batch size; B anchor batch size
    (ignored under the finite-sum regime, which anchors on all N
    components).  beta must lie in (0, 1]; step sizes and r are positive.
    """

    K: int
    T: int
    M: int
    B: int
    alpha_x: float
    alpha_y: float
    beta: float
    r: float
    seed: int = 0
    record_trace: bool = True
    trace_stride: int = 1

    def __post_init__(self):
        for name in ("K", "T", "M", "B", "trace_stride"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("alpha_x", "alpha_y", "r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")


@dataclass
class IterateState:
    """Full solver state between steps: iterates, estimator, counters."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    est: EstimatorState
    k: int
    tau: int


@dataclass
class TraceRow:
    """One recorded step: counters, displacement norms, prox-center gap
    ||x+ - z|| (z as used in the x-update), cumulative sample draws, and
    optional iterate snapshots / residuals filled in by diagnostics."""

    k: int
    tau: int
    dx_norm: float
    dy_norm: float
    xz_gap: float
    samples_used: int
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    res_x: Optional[float] = None
    res_y: Optional[float] = None
    lyapunov: Optional[float] = None


@dataclass
class RunTrace:
    """Output of one run: recorded rows, the uniformly sampled output pair,
    its (k, tau) index, and the z iterate alongside it (auxiliary)."""

    rows: list = field(default_factory=list)
    output_pair: Optional[tuple] = None
    output_index: Optional[tuple] = None
    output_z: Optional[np.ndarray] = None
    total_samples: int = 0
    completed: bool = False


# ----------------------------------------------------------------------------
# initial points

def default_initial_point(cset: ConstraintSet) -> np.ndarray:
    """Center-like feasible default per set kind: box midpoint, ball center,
    simplex barycenter, origin for the full space."""
    if isinstance(cset, Box):
        return 0.5 * (cset.lo + cset.hi)
    if isinstance(cset, Ball):
        return cset.center.copy()
    if isinstance(cset, Simplex):
        return np.full(cset.dim, 1.0 / cset.dim)
    if isinstance(cset, FullSpace):
        return np.zeros(cset.dim)
    raise TypeError(f"unsupported set kind: {type(cset).__name__}")


def _anchor_cost(problem: ProblemInstance, B: int) -> int:
    return problem.regime.n if isinstance(problem.regime, FiniteSum) else B


# ----------------------------------------------------------------------------
# single step

def _check_finite(*vecs: np.ndarray) -> None:
    for v in vecs:
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("iterate became non-finite")


def step(problem: ProblemInstance, config: SolverConfig,
         state: IterateState, refresh: bool = True) -> IterateState:
    """Advance one inner step from `state` (whose estimator must be current
    for its (x, y)).

    Applies the three update lines, then refreshes the estimator for the new
    iterate: a recursion when the epoch continues, a fresh anchor at epoch
    rollover (which carries x, y, z unchanged).  `refresh=False` skips the
    estimator update (used by run() for the final step of the schedule).

    Raises
    ------
    NonFiniteError
        If any updated iterate has a NaN/Inf entry.
    """
    x, y, z, est = state.x, state.y, state.z, state.est
    # check the raw updates before projecting: clamping would silently mask
    # an overflow, and the set kinds reject non-finite input anyway
    raw_x = x - config.alpha_x * (est.Gx + config.r * (x - z))
    raw_y = y + config.alpha_y * est.Gy
    _check_finite(raw_x, raw_y)
    x_new = problem.set_x.project(raw_x)
    y_new = problem.set_y.project(raw_y)
    z_new = z + config.beta * (x_new - z)
    _check_finite(z_new)

    k, tau = state.k, state.tau
    if tau + 1 < config.T:
        k_next, tau_next = k, tau + 1
        if refresh:
            rng = batch_rng(config.seed, k, tau + 1)
            est = recurse(est, problem, x_new, y_new, config.M, rng)
    else:
        k_next, tau_next = k + 1, 0
        if refresh:
            rng = batch_rng(config.seed, k + 1, 0)
            est = anchor(problem, x_new, y_new, config.B, rng, epoch=k + 1)
    return IterateState(x=x_new, y=y_new, z=z_new, est=est, k=k_next, tau=tau_next)


# ----------------------------------------------------------------------------
# full run

def run(problem: ProblemInstance, config: SolverConfig,
        x0: Optional[np.ndarray] = None, y0: Optional[np.ndarray] = None,
        z0: Optional[np.ndarray] = None,
        sink: Optional[Callable[[TraceRow], None]] = None) -> RunTrace:
    """Execute the full K*T-step schedule and return the trace.

    The output pair is drawn uniformly over all post-update iterates via
    reservoir sampling on a dedicated random stream; everything (batch
    draws, reservoir, hence the whole trace) is determined by (problem,
    config), and per-step sample counts depend only on the configuration.

    Infeasible initial points are projected with a logged warning.  Trace
    rows are recorded every `trace_stride` steps (plus the final step) with
    iterate snapshots; `sink`, when given, receives each row as produced.

    Raises
    ------
    NonFiniteError
        On a non-finite iterate; the partial trace is attached to the error.
    """
    x = default_initial_point(problem.set_x) if x0 is None else np.asarray(x0, dtype=np.float64)
    y = default_initial_point(problem.set_y) if y0 is None else np.asarray(y0, dtype=np.float64)
    z = x.copy() if z0 is None else np.asarray(z0, dtype=np.float64)
    for name, v, cset in (("x0", x, problem.set_x), ("y0", y, problem.set_y)):
        if not cset.contains(v):
            logger.warning("initial %s infeasible; projecting onto the set", name)
            v[:] = cset.project(v)

    est = anchor(problem, x, y, config.B, batch_rng(config.seed, 0, 0), epoch=0)
    state = IterateState(x=x, y=y, z=z, est=est, k=0, tau=0)

    trace = RunTrace()
    samples = _anchor_cost(problem, config.B)
    reservoir = batch_rng(config.seed, 0, 0, purpose=1)
    total_steps = config.K * config.T

    for count in range(1, total_steps + 1):
        prev_x, prev_y, prev_z = state.x, state.y, state.z
        try:
            state = step(problem, config, state, refresh=(count < total_steps))
        except NonFiniteError as err:
            raise NonFiniteError(str(err), trace) from None
        if count < total_steps:
            samples += config.M if state.tau != 0 else _anchor_cost(problem, config.B)

        # reservoir: keep the c-th candidate with probability 1/c
        if reservoir.random() < 1.0 / count:
            trace.output_pair = (state.x.copy(), state.y.copy())
            trace.output_index = ((count - 1) // config.T, (count - 1) % config.T)
            trace.output_z = state.z.copy()

        if config.record_trace and (count % config.trace_stride == 0
                                    or count == total_steps):
            row = TraceRow(
                k=(count - 1) // config.T,
                tau=(count - 1) % config.T,
                dx_norm=float(np.linalg.norm(state.x - prev_x)),
                dy_norm=float(np.linalg.norm(state.y - prev_y)),
                xz_gap=float(np.linalg.norm(state.x - prev_z)),
                samples_used=samples,
                x=state.x.copy(), y=state.y.copy(), z=state.z.copy(),
            )
            trace.rows.append(row)
            if sink is not None:
                sink(row)

    trace.total_samples = samples
    trace.completed = True
    return trace
