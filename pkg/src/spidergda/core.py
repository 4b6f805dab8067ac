"""Domain types and oracle interfaces for constrained stochastic minimax problems.

A problem is  min_{x in X} max_{y in Y} F(x, y)  with F an expectation (online
regime) or an average of N component functions (finite-sum regime), accessed
only through per-sample value/gradient oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "FiniteSum",
    "Online",
    "Regime",
    "StochasticOracle",
    "SmoothnessMeta",
    "ProblemInstance",
    "RegimeError",
    "DimError",
    "as_vector",
    "check_vector",
    "full_grad_x",
    "full_grad_y",
    "full_value",
    "estimate_sigmas",
]


# ----------------------------------------------------------------------------
# errors

class RegimeError(Exception):
    """An operation was invoked under the wrong sampling regime."""


class DimError(Exception):
    """A vector dimension does not match its declared dimension."""


# ----------------------------------------------------------------------------
# vectors
#
# Vectors are plain 1-D float64 numpy arrays.  The helpers below enforce the
# invariants (finiteness, declared dim) at module boundaries so that inner
# loops can stay unchecked.

def as_vector(v, dim: Optional[int] = None) -> np.ndarray:
    """Coerce `v` to a finite 1-D float64 array, optionally checking its dim.

    Parameters
    ----------
    v : array_like
        Input data.
    dim : int, optional
        Required dimension.  A mismatch raises DimError.

    Returns
    -------
    numpy.ndarray
        1-D float64 array.
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimError(f"expected a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimError(f"expected dim {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DimError("vector has non-finite entries")
    return arr


def check_vector(v: np.ndarray, dim: int, name: str = "vector") -> None:
    if v.shape != (dim,):
        raise DimError(f"{name}: expected dim {dim}, got shape {v.shape}")


# ----------------------------------------------------------------------------
# sampling regimes

@dataclass(frozen=True)
class FiniteSum:
    """Finite-sum regime: F is the average of `n` component functions.

    Sample ids are integer indices in [0, n).
    """

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"finite-sum size must be >= 1, got {self.n}")


@dataclass(frozen=True)
class Online:
    """Online regime: F is an expectation over an unknown distribution.

    Sample ids are seed-derived draw tokens (nonnegative 63-bit integers);
    the oracle maps each token deterministically to a sample.
    """


Regime = Union[FiniteSum, Online]


# ----------------------------------------------------------------------------
# oracle

@dataclass
class StochasticOracle:
    """Per-sample value and gradient access to f(x, y; xi).

    All callables must be pure: identical (x, y, sample_id) inputs give
    bit-identical outputs, and no shared mutable state is touched, so an
    oracle is safe to call concurrently.

    Parameters
    ----------
    regime : FiniteSum or Online
        Sampling regime.  Under FiniteSum(n), the average of grad_x (resp.
        grad_y) over all n sample ids *is* the exact partial gradient of F.
    dim_x, dim_y : int
        Dimensions of the primal and dual variables.
    eval_f : callable(x, y, sample_id) -> float
    grad_x : callable(x, y, sample_id) -> ndarray of shape (dim_x,)
    grad_y : callable(x, y, sample_id) -> ndarray of shape (dim_y,)
    draw : callable(rng, count) -> ndarray of sample ids, optional
        Defaults to i.i.d. uniform indices (finite-sum) or fresh 63-bit
        tokens (online), both with replacement.
    grad_x_batch, grad_y_batch : callable(x, y, sample_ids) -> ndarray, optional
        Vectorized fast paths returning stacked per-sample gradients of
        shape (len(ids), dim).  Each row must be bit-identical to the
        corresponding scalar-oracle call.
    """

    regime: Regime
    dim_x: int
    dim_y: int
    eval_f: Callable[[np.ndarray, np.ndarray, int], float]
    grad_x: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    grad_y: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    draw: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    grad_x_batch: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    grad_y_batch: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_y < 1:
            raise DimError("oracle dims must be positive")
        if self.draw is None:
            self.draw = _default_draw(self.regime)

    # -- convenience ---------------------------------------------------------

    @property
    def n_samples(self) -> Optional[int]:
        """Component count under FiniteSum, None under Online."""
        return self.regime.n if isinstance(self.regime, FiniteSum) else None

    def batch_grads(self, x: np.ndarray, y: np.ndarray,
                    ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Stacked per-sample gradients at (x, y), shape (len(ids), dim).

        Uses the vectorized fast path when the oracle provides one; the
        per-row values are identical either way.
        """
        ids = np.asarray(ids)
        if self.grad_x_batch is not None and self.grad_y_batch is not None:
            gx = np.asarray(self.grad_x_batch(x, y, ids), dtype=np.float64)
            gy = np.asarray(self.grad_y_batch(x, y, ids), dtype=np.float64)
        else:
            gx = np.stack([self.grad_x(x, y, int(i)) for i in ids]) \
                if len(ids) else np.zeros((0, self.dim_x))
            gy = np.stack([self.grad_y(x, y, int(i)) for i in ids]) \
                if len(ids) else np.zeros((0, self.dim_y))
        return gx, gy


def _default_draw(regime: Regime) -> Callable[[np.random.Generator, int], np.ndarray]:
    if isinstance(regime, FiniteSum):
        n = regime.n

        def draw(rng: np.random.Generator, count: int) -> np.ndarray:
            return rng.integers(0, n, size=count)
    else:

        def draw(rng: np.random.Generator, count: int) -> np.ndarray:
            return rng.integers(0, 2 ** 63, size=count)

    return draw


# ----------------------------------------------------------------------------
# metadata

@dataclass
class SmoothnessMeta:
    """Known regularity constants of the objective.

    These are user-supplied; the artifact never estimates L_x, L_y or rho
    automatically.  sigma_x/sigma_y may be pilot estimates (see
    `estimate_sigmas`), in which case `sigma_is_estimate` is set.

    Parameters
    ----------
    L_x : float
        Lipschitz constant of grad_x F in x (uniformly over y).
    L_y : float
        Lipschitz constant of grad F in y / of grad_y F.
    rho : float
        Weak-convexity modulus of F(., y).
    ell : float
        Lipschitz constant of F itself.
    sigma_x, sigma_y : float
        Per-sample gradient variance bounds (online regime).
    mu : float
        Dual error-bound modulus; must be positive.
    theta : float
        Dual error-bound exponent, in [0, 1].
    D_Y : float, optional
        Diameter of the dual constraint set; filled in from the set when a
        ProblemInstance is built.
    """

    L_x: float
    L_y: float
    rho: float
    ell: float
    sigma_x: float = 0.0
    sigma_y: float = 0.0
    mu: float = 1.0
    theta: float = 1.0
    D_Y: Optional[float] = None
    sigma_is_estimate: bool = False

    def __post_init__(self):
        for name in ("L_x", "L_y", "rho", "ell", "sigma_x", "sigma_y"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")

    def with_updates(self, **kw) -> "SmoothnessMeta":
        return replace(self, **kw)


# ----------------------------------------------------------------------------
# problem instance

@dataclass
class ProblemInstance:
    """A constrained stochastic minimax problem.

    Bundles the sampling oracle, the primal/dual constraint sets and the
    regularity constants.  The dual set must be bounded.
    """

    oracle: StochasticOracle
    set_x: "ConstraintSet"
    set_y: "ConstraintSet"
    constants: SmoothnessMeta
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.set_x.dim != self.oracle.dim_x:
            raise DimError(
                f"set_x dim {self.set_x.dim} != oracle dim_x {self.oracle.dim_x}")
        if self.set_y.dim != self.oracle.dim_y:
            raise DimError(
                f"set_y dim {self.set_y.dim} != oracle dim_y {self.oracle.dim_y}")
        if not np.isfinite(self.set_y.diameter):
            raise ValueError("set_y must be bounded (finite diameter)")
        if self.constants.D_Y is None:
            self.constants = replace(self.constants, D_Y=float(self.set_y.diameter))

    @property
    def regime(self) -> Regime:
        return self.oracle.regime

    @property
    def dim_x(self) -> int:
        return self.oracle.dim_x

    @property
    def dim_y(self) -> int:
        return self.oracle.dim_y


# ----------------------------------------------------------------------------
# exact finite-sum gradients
#
# Accumulation is sequential in ascending sample index.  This pins the result
# bit-for-bit, which the variance-reduced estimator relies on (its finite-sum
# anchor must equal these exactly).

def _full_grad(problem: ProblemInstance, x: np.ndarray, y: np.ndarray,
               which: str) -> np.ndarray:
    if not isinstance(problem.regime, FiniteSum):
        raise RegimeError("full gradient requires the finite-sum regime")
    check_vector(x, problem.dim_x, "x")
    check_vector(y, problem.dim_y, "y")
    n = problem.regime.n
    grad = problem.oracle.grad_x if which == "x" else problem.oracle.grad_y
    dim = problem.dim_x if which == "x" else problem.dim_y
    acc = np.zeros(dim)
    for i in range(n):
        g = grad(x, y, i)
        check_vector(np.asarray(g), dim, f"grad_{which}(id={i})")
        acc = acc + g
    return acc / n


def full_grad_x(problem: ProblemInstance, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact partial gradient of F in x under the finite-sum regime.

    Returns the arithmetic mean of grad_x over all N sample ids, accumulated
    sequentially in ascending index order (bit-reproducible).

    Raises
    ------
    RegimeError
        If the problem is in the online regime.
    DimError
        On dimension mismatch.
    """
    return _full_grad(problem, x, y, "x")


def full_grad_y(problem: ProblemInstance, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact partial gradient of F in y under the finite-sum regime."""
    return _full_grad(problem, x, y, "y")


def full_value(problem: ProblemInstance, x: np.ndarray, y: np.ndarray) -> float:
    """Exact value of F under the finite-sum regime (sequential mean).

    Raises
    ------
    RegimeError
        If the problem is in the online regime.
    """
    if not isinstance(problem.regime, FiniteSum):
        raise RegimeError("full value requires the finite-sum regime")
    check_vector(x, problem.dim_x, "x")
    check_vector(y, problem.dim_y, "y")
    acc = 0.0
    for i in range(problem.regime.n):
        acc = acc + float(problem.oracle.eval_f(x, y, i))
    return acc / problem.regime.n


# ----------------------------------------------------------------------------
# pilot variance estimation

def estimate_sigmas(problem: ProblemInstance, x: np.ndarray, y: np.ndarray,
                    pilot: int = 1024, rng: Optional[np.random.Generator] = None
                    ) -> tuple[float, float]:
    """Monte-Carlo pilot estimate of the per-sample gradient deviations.

    Draws `pilot` samples and returns sqrt of the mean squared deviation of
    the per-sample gradients from their sample mean, for x and y.  These are
    *estimates*; callers storing them in SmoothnessMeta should set
    `sigma_is_estimate=True`.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    ids = problem.oracle.draw(rng, pilot)
    gx, gy = problem.oracle.batch_grads(x, y, ids)
    sx = float(np.sqrt(np.mean(np.sum((gx - gx.mean(axis=0)) ** 2, axis=1))))
    sy = float(np.sqrt(np.mean(np.sum((gy - gy.mean(axis=0)) ** 2, axis=1))))
    return sx, sy
