"""Command-line experiment runner.

`spidergda run <config.json>` builds a problem from the zoo (or a dataset
CSV), tunes the schedule, runs the solver once per seed, and writes per-seed
trace CSVs plus a summary JSON containing final residuals, sample counts and
the full tuner audit.  `spidergda verify <suite>` runs a named property
suite and prints per-check pass/fail lines.

Exit codes: 0 ok; 1 failed verify check; 2 config error / unknown suite;
3 numerical failure; 4 infeasible schedule.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .core import FiniteSum, ProblemInstance, SmoothnessMeta
from .diagnostics import (InnerSolveConfig, dz_norm, gs_residuals, lyapunov,
                          mc_gs_residuals)
from .projections import Ball, Box, Simplex, normal_cone_dist
from .smoothing import MoreauComposite, as_problem
from .solver import NonFiniteError, SolverConfig, run
from .tuner import (InfeasibleScheduleError, TunerInput, compute_alpha_x,
                    compute_alpha_y, compute_r, tune_nonsmooth, tune_smooth)
from . import estimator, problems

__all__ = ["ExperimentConfig", "ConfigError", "run_experiment", "verify", "main"]

logger = logging.getLogger("spidergda.cli")

TRACE_HEADER = "k,tau,dx_norm,dy_norm,xz_gap,samples,res_x,res_y,lyapunov"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4

_U64 = 2 ** 64


class ConfigError(Exception):
    """The experiment config is malformed."""


# ----------------------------------------------------------------------------
# config schema

_PROBLEM_KEYS = {
    "kl_example": set(),
    "quadratic_saddle": {"dim_x", "dim_y", "n_samples", "noise", "coupling",
                         "linear_scale", "seed"},
    "two_group_regression": {"n", "d", "minority_frac", "noise",
                             "noise_ratio", "seed"},
    "group_dro": {"dataset", "loss"},
    "phi_div_dro": {"dataset", "n", "d", "noise", "seed", "psi", "lambda_pen"},
}

_TUNER_KEYS = {"epsilon", "mu", "theta", "delta_phi_estimate",
               "asymptotic_constant", "overrides", "sample_cap", "lambda"}
_OVERRIDE_KEYS = {"r", "alpha_x", "alpha_y", "beta", "K", "T", "M", "B"}
_SOLVER_KEYS = {"trace_stride", "x0", "y0"}
_OUTPUT_KEYS = {"directory", "formats"}
_DIAG_KEYS = {"residual_stride", "lyapunov_stride", "dz_norm"}
_COMPOSITE_KINDS = {"two_group_regression", "group_dro"}


def _check_keys(d: dict, allowed: set, where: str, required: set = frozenset()):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}")


def _positive_number(d: dict, key: str, where: str) -> None:
    v = d.get(key)
    if v is None:
        return
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
        raise ConfigError(f"{where}.{key} must be a positive number, got {v!r}")


def _positive_int(d: dict, key: str, where: str) -> None:
    v = d.get(key)
    if v is None:
        return
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"{where}.{key} must be a positive integer, got {v!r}")


@dataclasses.dataclass
class ExperimentConfig:
    """Validated experiment description (see `from_dict` for the schema)."""

    problem: dict
    tuner: dict
    solver: dict
    output: dict
    seeds: list
    diagnostics: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        """Validate a parsed JSON object; unknown keys anywhere are errors."""
        _check_keys(raw, {"problem", "tuner", "solver", "output", "seeds",
                          "diagnostics"}, "config",
                    required={"problem", "tuner"})

        prob = raw["problem"]
        _check_keys(prob, set().union(*(_PROBLEM_KEYS.values())) | {"kind"},
                    "problem", required={"kind"})
        kind = prob["kind"]
        if kind not in _PROBLEM_KEYS:
            raise ConfigError(
                f"problem.kind must be one of {sorted(_PROBLEM_KEYS)}, "
                f"got {kind!r}")
        _check_keys(prob, _PROBLEM_KEYS[kind] | {"kind"}, f"problem[{kind}]")

        tun = raw["tuner"]
        _check_keys(tun, _TUNER_KEYS, "tuner", required={"epsilon"})
        _positive_number(tun, "epsilon", "tuner")
        _positive_number(tun, "mu", "tuner")
        _positive_number(tun, "delta_phi_estimate", "tuner")
        _positive_number(tun, "asymptotic_constant", "tuner")
        _positive_number(tun, "sample_cap", "tuner")
        if "theta" in tun:
            th = tun["theta"]
            if not isinstance(th, (int, float)) or not 0.0 <= th <= 1.0:
                raise ConfigError(f"tuner.theta must lie in [0, 1], got {th!r}")
        ov = tun.get("overrides", {})
        _check_keys(ov, _OVERRIDE_KEYS, "tuner.overrides")
        for key, val in ov.items():
            if not isinstance(val, (int, float)) or isinstance(val, bool) or not val > 0:
                raise ConfigError(
                    f"tuner.overrides.{key} must be a positive number, got {val!r}")
        if "lambda" in tun:
            lam = tun["lambda"]
            if kind not in _COMPOSITE_KINDS:
                raise ConfigError("tuner.lambda only applies to composite "
                                  f"problems, not {kind!r}")
            if lam != "auto" and (not isinstance(lam, (int, float)) or not lam > 0):
                raise ConfigError(
                    f'tuner.lambda must be "auto" or a positive number, got {lam!r}')

        sol = raw.get("solver", {})
        _check_keys(sol, _SOLVER_KEYS, "solver")
        _positive_int(sol, "trace_stride", "solver")
        for key in ("x0", "y0"):
            if key in sol and not isinstance(sol[key], list):
                raise ConfigError(f"solver.{key} must be a list of numbers")

        out = raw.get("output", {})
        _check_keys(out, _OUTPUT_KEYS, "output")
        formats = out.get("formats", ["csv", "json"])
        if (not isinstance(formats, list) or not formats
                or not set(formats) <= {"csv", "json"}):
            raise ConfigError(
                f'output.formats must be a nonempty subset of ["csv", "json"]')

        seeds = raw.get("seeds", [0])
        if (not isinstance(seeds, list) or not seeds
                or not all(isinstance(s, int) and not isinstance(s, bool)
                           and 0 <= s < _U64 for s in seeds)):
            raise ConfigError("seeds must be a nonempty list of integers "
                              "in [0, 2^64)")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")

        diag = raw.get("diagnostics", {})
        _check_keys(diag, _DIAG_KEYS, "diagnostics")
        _positive_int(diag, "residual_stride", "diagnostics")
        _positive_int(diag, "lyapunov_stride", "diagnostics")
        if "dz_norm" in diag and not isinstance(diag["dz_norm"], bool):
            raise ConfigError("diagnostics.dz_norm must be a boolean")

        return cls(problem=dict(prob), tuner=dict(tun), solver=dict(sol),
                   output={"directory": out.get("directory", "out"),
                           "formats": list(formats)},
                   seeds=list(seeds), diagnostics=dict(diag))


# ----------------------------------------------------------------------------
# problem construction

def _build_problem(cfg: ExperimentConfig
                   ) -> tuple[Optional[ProblemInstance], Optional[MoreauComposite]]:
    """Instantiate the configured problem; composites are returned unsmoothed
    (the tuner picks their smoothing level)."""
    p = cfg.problem
    kind = p["kind"]
    if kind == "kl_example":
        return problems.make_kl_example(), None
    if kind == "quadratic_saddle":
        return problems.make_quadratic_saddle(
            int(p.get("dim_x", 3)), int(p.get("dim_y", 2)),
            n_samples=int(p.get("n_samples", 16)),
            noise=float(p.get("noise", 0.3)),
            coupling=float(p.get("coupling", 1.0)),
            linear_scale=float(p.get("linear_scale", 1.0)),
            seed=int(p.get("seed", 0))), None
    if kind == "two_group_regression":
        spec = problems.make_two_group_regression(
            n=int(p.get("n", 200)), d=int(p.get("d", 3)),
            minority_frac=float(p.get("minority_frac", 0.1)),
            noise=float(p.get("noise", 0.1)),
            noise_ratio=float(p.get("noise_ratio", 10.0)),
            seed=int(p.get("seed", 0)))
        return None, problems.make_group_dro(spec)
    if kind == "group_dro":
        if "dataset" not in p:
            raise ConfigError("problem.dataset (CSV path) is required for "
                              "group_dro")
        try:
            spec = problems.spec_from_csv(p["dataset"],
                                          loss=p.get("loss", "squared"))
        except (OSError, ValueError, problems.EmptyGroupError) as err:
            raise ConfigError(f"cannot load dataset: {err}") from None
        return None, problems.make_group_dro(spec)
    if kind == "phi_div_dro":
        if "dataset" in p:
            try:
                X, t, _ = problems.load_dataset_csv(p["dataset"])
            except (OSError, ValueError) as err:
                raise ConfigError(f"cannot load dataset: {err}") from None
        else:
            rng = np.random.default_rng(int(p.get("seed", 0)))
            n, d = int(p.get("n", 32)), int(p.get("d", 3))
            w0 = np.zeros(d)
            w0[0] = 1.0
            X = rng.normal(size=(n, d))
            t = X @ w0 + float(p.get("noise", 0.1)) * rng.normal(size=n)
        try:
            spec = problems.PhiDivDroSpec(
                features=X, targets=t, psi=p.get("psi", "chi2"),
                lambda_pen=float(p.get("lambda_pen", 1.0)))
        except ValueError as err:
            raise ConfigError(str(err)) from None
        return problems.make_phi_div_dro(spec), None
    raise ConfigError(f"unknown problem kind {kind!r}")


def _tune(cfg: ExperimentConfig, problem: Optional[ProblemInstance],
          comp: Optional[MoreauComposite]):
    """Run the appropriate tuning pipeline; returns (problem, config, audit)."""
    t = cfg.tuner
    kind = cfg.problem["kind"]
    if kind not in ("kl_example", "quadratic_saddle") and "mu" not in t:
        logger.warning(
            "no dual error-bound constants supplied for %s; using defaults "
            "mu=1, theta=1 (schedules may be mis-scaled)", kind)
    common = dict(
        epsilon=float(t["epsilon"]),
        delta_phi_estimate=float(t.get("delta_phi_estimate", 1.0)),
        overrides=dict(t.get("overrides", {})),
        asymptotic_constant=float(t.get("asymptotic_constant", 1.0)),
        sample_cap=float(t.get("sample_cap", 1e9)),
    )
    if comp is not None:
        if "mu" in t:
            comp = dataclasses.replace(comp, mu=float(t["mu"]))
        if "theta" in t:
            comp = dataclasses.replace(comp, theta=float(t["theta"]))
        base_meta = SmoothnessMeta(
            L_x=0.0, L_y=0.0, rho=0.0, ell=0.0, mu=comp.mu, theta=comp.theta,
            sigma_x=comp.sigma_x, sigma_y=comp.sigma_y,
            D_Y=float(comp.set_y.diameter))
        tin = TunerInput(meta=base_meta, regime=comp.regime,
                         composite=comp.constants, **common)
        lam, config, audit = tune_nonsmooth(tin, t.get("lambda", "auto"))
        return as_problem(comp, lam), config, audit
    meta = problem.constants
    updates = {k: float(t[k]) for k in ("mu", "theta") if k in t}
    if updates:
        meta = meta.with_updates(**updates)
        problem.constants = meta
    tin = TunerInput(meta=meta, regime=problem.regime, **common)
    config, audit = tune_smooth(tin)
    return problem, config, audit


# ----------------------------------------------------------------------------
# residual/trace post-processing

def _row_residuals(problem: ProblemInstance, x, y, seed: int, index: int
                   ) -> tuple[float, float, Optional[float], Optional[float]]:
    if isinstance(problem.regime, FiniteSum):
        rx, ry = gs_residuals(problem, x, y)
        return rx, ry, None, None
    rng = np.random.default_rng((seed, index))
    return mc_gs_residuals(problem, x, y, rng=rng)


def _annotate_rows(problem: ProblemInstance, rows, config: SolverConfig,
                   diag: dict) -> None:
    res_stride = diag.get("residual_stride")
    lya_stride = diag.get("lyapunov_stride")
    finite = isinstance(problem.regime, FiniteSum)
    if lya_stride is not None and not finite:
        logger.warning("merit tracking needs exact values; skipping in the "
                       "online regime")
        lya_stride = None
    last = len(rows) - 1
    for i, row in enumerate(rows):
        want_res = (i == last) or (res_stride is not None
                                   and i % res_stride == 0)
        if want_res:
            rx, ry, _, _ = _row_residuals(problem, row.x, row.y,
                                          config.seed, i)
            row.res_x, row.res_y = rx, ry
        if lya_stride is not None and (i % lya_stride == 0 or i == last):
            row.lyapunov = lyapunov(problem, config.r, row.x, row.y,
                                    row.z).value


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _write_trace_csv(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        for row in rows:
            fh.write(",".join([
                str(row.k), str(row.tau), _fmt(row.dx_norm),
                _fmt(row.dy_norm), _fmt(row.xz_gap), str(row.samples_used),
                _fmt(row.res_x), _fmt(row.res_y), _fmt(row.lyapunov),
            ]) + "\n")


# ----------------------------------------------------------------------------
# run command

def run_experiment(config_path: str, out_dir: Optional[str] = None,
                   seed: Optional[int] = None,
                   trace_stride: Optional[int] = None,
                   quiet: bool = False) -> int:
    """Execute a config end to end; returns the process exit code."""
    try:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        cfg = ExperimentConfig.from_dict(raw)
    except (OSError, json.JSONDecodeError, ConfigError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    if out_dir is not None:
        cfg.output["directory"] = out_dir
    if seed is not None:
        if not 0 <= seed < _U64:
            print(f"config error: --seed out of range: {seed}", file=sys.stderr)
            return EXIT_CONFIG
        cfg.seeds = [seed]
    if trace_stride is not None:
        cfg.solver["trace_stride"] = trace_stride

    try:
        problem, comp = _build_problem(cfg)
        problem, config, audit = _tune(cfg, problem, comp)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleScheduleError, OverflowError) as err:
        print(f"infeasible schedule: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE

    stride = int(cfg.solver.get("trace_stride", 1))
    x0 = np.asarray(cfg.solver["x0"], dtype=np.float64) if "x0" in cfg.solver else None
    y0 = np.asarray(cfg.solver["y0"], dtype=np.float64) if "y0" in cfg.solver else None

    out = Path(cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    inner = InnerSolveConfig()
    summary = {"tuner_audit": {"inputs": audit.inputs, "outputs": audit.outputs},
               "problem": cfg.problem, "runs": []}
    for s in cfg.seeds:
        run_config = dataclasses.replace(config, seed=s, trace_stride=stride,
                                         record_trace=True)
        try:
            trace = run(problem, run_config, x0=x0, y0=y0)
        except NonFiniteError as err:
            print(f"numerical failure (seed {s}): {err}", file=sys.stderr)
            return EXIT_NUMERICAL

        _annotate_rows(problem, trace.rows, run_config, cfg.diagnostics)
        x_out, y_out = trace.output_pair
        o_rx, o_ry, o_sx, o_sy = _row_residuals(problem, x_out, y_out, s, -1)
        final = trace.rows[-1]
        entry = {
            "seed": s,
            "final_res_x": final.res_x,
            "final_res_y": final.res_y,
            "output_res_x": o_rx,
            "output_res_y": o_ry,
            "output_index": list(trace.output_index),
            "total_samples": trace.total_samples,
        }
        if o_sx is not None:
            entry["output_res_x_se"] = o_sx
            entry["output_res_y_se"] = o_sy
        if cfg.diagnostics.get("dz_norm", False):
            entry["dz_norm"] = dz_norm(problem, run_config.r, y_out,
                                       trace.output_z, inner)
        summary["runs"].append(entry)

        if "csv" in cfg.output["formats"]:
            path = out / f"trace_seed{s}.csv"
            _write_trace_csv(path, trace.rows)
            if not quiet:
                print(f"wrote {path}")

    if "json" in cfg.output["formats"]:
        path = out / "summary.json"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if not quiet:
            print(f"wrote {path}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# verify command

def _verify_kl_example() -> list:
    """Grid check of the 1-D example's error bound
    dist(0, -g'(y) + N_{[-2,2]}(y)) >= 0.1 sqrt(2 - g(y))."""
    grid = np.linspace(-2.0, 2.0, 4001)
    box = Box(np.array([-2.0]), np.array([2.0]))
    worst = math.inf
    worst_y = None
    for yv in grid:
        lhs = normal_cone_dist(box, np.array([yv]),
                               np.array([-problems.kl_example_grad(yv)]))
        rhs = 0.1 * math.sqrt(max(2.0 - problems.kl_example_value(yv), 0.0))
        if lhs - rhs < worst:
            worst, worst_y = lhs - rhs, yv
    checks = [
        ("error-bound margin >= 0 on the 4001-point grid",
         worst >= 0.0, f"min margin {worst:.6f} at y={worst_y:.3f}"),
        ("peak value g(0) = 2",
         problems.kl_example_value(0.0) == 2.0, "g(0)=2"),
        ("continuity at the piece boundaries",
         abs(problems.kl_example_value(-1.0) - 1.0) < 1e-12
         and abs(problems.kl_example_value(1.0) - 1.0) < 1e-12,
         "g(+-1)=1"),
    ]
    return checks


def _verify_projections() -> list:
    """Randomized projection contracts: idempotence, nonexpansiveness and the
    variational inequality, on boxes, balls and simplexes."""
    rng = np.random.default_rng(7)
    max_vi = 0.0
    max_exp = 0.0
    idem_ok = True
    trials = 0
    for _ in range(200):
        dim = int(rng.integers(1, 6))
        lo = rng.normal(size=dim)
        sets = [Box(lo, lo + np.abs(rng.normal(size=dim)) + 0.1),
                Ball(rng.normal(size=dim), float(np.abs(rng.normal()) + 0.1)),
                Simplex(dim)]
        for cset in sets:
            u = 3.0 * rng.normal(size=dim)
            v = 3.0 * rng.normal(size=dim)
            pu, pv = cset.project(u), cset.project(v)
            idem_ok &= bool(np.array_equal(cset.project(pu), pu))
            max_exp = max(max_exp, float(np.linalg.norm(pu - pv)
                                         - np.linalg.norm(u - v)))
            w = cset.project(5.0 * rng.normal(size=dim))
            max_vi = max(max_vi, float((u - pu) @ (w - pu)))
            trials += 1
    return [
        ("projection idempotent (exact)", idem_ok, f"{trials} trials"),
        ("projection nonexpansive", max_exp <= 1e-12,
         f"max expansion {max_exp:.2e}"),
        ("variational inequality (u - Pu)'(w - Pu) <= 0", max_vi <= 1e-10,
         f"max violation {max_vi:.2e}"),
    ]


def _verify_tuner() -> list:
    """Frozen-value checks of the schedule formulas at unit constants."""
    meta = SmoothnessMeta(L_x=1.0, L_y=1.0, rho=1.0, ell=1.0)
    r = compute_r(meta)
    ax = compute_alpha_x(meta, r)
    ay = compute_alpha_y(meta, ax)
    return [
        ("prox weight at unit constants", r == 676.0, f"r={r}"),
        ("primal step at unit constants", abs(ax - 1.0 / 8148.0) < 1e-18,
         f"alpha_x={ax}"),
        ("dual step caps hold", ay <= min(ax, 1.0 / 40.0, 1.0 / 12.0),
         f"alpha_y={ay}"),
    ]


def _verify_estimator() -> list:
    """Anchor exactness and zero-displacement invariance on a small fixture."""
    problem = problems.make_quadratic_saddle(2, 2, n_samples=8, seed=3)
    from .core import full_grad_x, full_grad_y
    x = problem.set_x.project(np.zeros(2))
    y = problem.set_y.project(np.zeros(2))
    rng = estimator.batch_rng(0, 0, 0)
    st = estimator.anchor(problem, x, y, B=8, rng=rng)
    exact = bool(np.array_equal(st.Gx, full_grad_x(problem, x, y))
                 and np.array_equal(st.Gy, full_grad_y(problem, x, y)))
    st2 = estimator.recurse(st, problem, x, y, M=4,
                            rng=estimator.batch_rng(0, 0, 1))
    frozen = bool(np.array_equal(st2.Gx, st.Gx)
                  and np.array_equal(st2.Gy, st.Gy))
    return [
        ("finite-sum anchor equals the exact gradient (bitwise)", exact, ""),
        ("zero-displacement recursion leaves estimates unchanged (bitwise)",
         frozen, ""),
    ]


_SUITES = {
    "kl-example": _verify_kl_example,
    "projections": _verify_projections,
    "tuner": _verify_tuner,
    "estimator": _verify_estimator,
}


def verify(suite: str) -> int:
    """Run one named property suite, printing a line per check."""
    if suite not in _SUITES:
        print(f"unknown suite {suite!r}; available: {', '.join(sorted(_SUITES))}",
              file=sys.stderr)
        return EXIT_CONFIG
    checks = _SUITES[suite]()
    ok_all = True
    for name, ok, measured in checks:
        ok_all &= bool(ok)
        tag = "pass" if ok else "FAIL"
        suffix = f"  ({measured})" if measured else ""
        print(f"[{tag}] {name}{suffix}")
    return EXIT_OK if ok_all else EXIT_CHECK_FAILED


# ----------------------------------------------------------------------------
# entry point

def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="spidergda",
        description="Variance-reduced smoothed gradient descent-ascent for "
                    "constrained stochastic minimax problems.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config", help="path to the experiment config (JSON)")
    p_run.add_argument("--out", default=None, metavar="DIR",
                       help="override the output directory")
    p_run.add_argument("--seed", type=int, default=None, metavar="U64",
                       help="run only this seed (overrides the config list)")
    p_run.add_argument("--trace-stride", type=int, default=None, metavar="N",
                       help="record every N-th step")
    p_run.add_argument("--quiet", action="store_true",
                       help="suppress informational output")

    p_ver = sub.add_parser("verify", help="run a named property suite")
    p_ver.add_argument("suite",
                       help=f"one of: {', '.join(sorted(_SUITES))}")
    p_ver.add_argument("--quiet", action="store_true",
                       help="suppress informational output")

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "run":
        return run_experiment(args.config, out_dir=args.out, seed=args.seed,
                              trace_stride=args.trace_stride,
                              quiet=args.quiet)
    return verify(args.suite)


if __name__ == "__main__":
    sys.exit(main())
