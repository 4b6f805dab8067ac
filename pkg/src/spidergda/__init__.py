"""Variance-reduced smoothed gradient descent-ascent for constrained
stochastic minimax problems, with schedule tuning, Moreau smoothing for
nonsmooth composites, and stationarity diagnostics."""

from .core import (DimError, FiniteSum, Online, ProblemInstance, Regime,
                   RegimeError, SmoothnessMeta, StochasticOracle,
                   estimate_sigmas, full_grad_x, full_grad_y, full_value)
from .projections import (Ball, Box, ConstraintSet, FullSpace,
                          InfeasibleError, Simplex, normal_cone_dist, project)
from .estimator import (EstimatorMse, EstimatorState, anchor, batch_rng,
                        estimator_mse, recurse)
from .solver import (IterateState, NonFiniteError, RunTrace, SolverConfig,
                     TraceRow, default_initial_point, run, step)
from .tuner import (CompositeConstants, InfeasibleScheduleError, TunerAudit,
                    TunerInput, compute_alpha_x, compute_alpha_y, compute_beta,
                    compute_budget, compute_r, compute_varpi, smoothed_constants,
                    tune_nonsmooth, tune_smooth)
from .smoothing import (AbsValue, CertificateInput, Hinge, IterativeProx,
                        MoreauComposite, ProxFailure, ScalarConvex,
                        ScaledIdentity, as_problem, envelope,
                        near_stationarity_certificate, smooth_grad_x,
                        smooth_grad_y, smooth_value, spot_check_composite)
from .diagnostics import (InnerSolveConfig, LyapunovValue, MaxItersError,
                          dz_norm, fd_check, gs_residuals, lyapunov,
                          mc_gs_residuals, solve_x_r)
from . import problems
from .problems import (DomainError, EmptyGroupError, GroupDroSpec,
                       PhiDivDroSpec, SingularityError, group_losses,
                       kl_example_grad, kl_example_value, load_dataset_csv,
                       make_group_dro, make_kl_example, make_phi_div_dro,
                       make_quadratic_saddle, make_two_group_regression,
                       save_dataset_csv, spec_from_csv)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core
    "FiniteSum", "Online", "Regime", "StochasticOracle", "SmoothnessMeta",
    "ProblemInstance", "RegimeError", "DimError", "full_grad_x",
    "full_grad_y", "full_value", "estimate_sigmas",
    # projections
    "ConstraintSet", "Box", "Ball", "Simplex", "FullSpace", "project",
    "normal_cone_dist", "InfeasibleError",
    # estimator
    "EstimatorState", "EstimatorMse", "anchor", "recurse", "estimator_mse",
    "batch_rng",
    # solver
    "SolverConfig", "IterateState", "RunTrace", "TraceRow", "NonFiniteError",
    "default_initial_point", "run", "step",
    # tuner
    "TunerInput", "TunerAudit", "CompositeConstants",
    "InfeasibleScheduleError", "compute_r",
    "compute_varpi", "compute_alpha_x",
    "compute_alpha_y", "compute_beta", "compute_budget", "tune_smooth",
    "tune_nonsmooth", "smoothed_constants",
    # smoothing
    "ScalarConvex", "AbsValue", "Hinge", "ScaledIdentity", "IterativeProx",
    "MoreauComposite", "ProxFailure", "envelope", "smooth_value",
    "smooth_grad_x", "smooth_grad_y", "as_problem", "CertificateInput",
    "near_stationarity_certificate", "spot_check_composite",
    # diagnostics
    "InnerSolveConfig", "MaxItersError", "LyapunovValue", "gs_residuals",
    "mc_gs_residuals", "solve_x_r", "dz_norm", "lyapunov", "fd_check",
    # problems
    "problems", "DomainError", "EmptyGroupError", "SingularityError",
    "GroupDroSpec", "PhiDivDroSpec", "group_losses", "kl_example_grad",
    "kl_example_value", "load_dataset_csv", "make_group_dro",
    "make_kl_example", "make_phi_div_dro", "make_quadratic_saddle",
    "make_two_group_regression", "save_dataset_csv", "spec_from_csv",
]
