"""Command-line entry point: simulate, fit, race, gamma-search, bootstrap, validate.

Exit codes: 0 success (fit converged), 1 usage error, 2 data validation
failure, 3 solver did not converge (artifacts are still written).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    BenchSpec,
    GammaSearchConfig,
    emit_plot_data,
    find_gamma_for_sparsity,
    gen_synthetic,
    run_race,
    time_to_gap,
)
from .bundle import (
    load_problem_bundle,
    load_raw_bundle,
    save_problem_bundle,
    write_estimate_report,
    write_solution,
    write_trace,
)
from .errors import (
    BootstrapError,
    BundleFormatError,
    DimensionMismatchError,
    ExponentOverflowError,
    InvalidProblemError,
)
from .inference import bootstrap_se, fit_with_support_size
from .preprocess import INDEPENDENCE_RTOL, independence_condition, center_basis
from .solvers import SOLVERS, SolverConfig
import json

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_UNCONVERGED = 3

OUT_DIR_ENV = "SISTA_OUT_DIR"

_DATA_ERRORS = (
    InvalidProblemError,
    DimensionMismatchError,
    BundleFormatError,
    ExponentOverflowError,
    BootstrapError,
    FileNotFoundError,
    NotADirectoryError,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; 2 is reserved for data failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {value}")
    return value


def _nonneg_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {value}")
    return value


def _positive_float(text):
    value = _nonneg_float(text)
    if value == 0:
        raise argparse.ArgumentTypeError("expected a positive number")
    return value


def _fraction(text):
    value = _positive_float(text)
    if value > 1:
        raise argparse.ArgumentTypeError(f"expected a value in (0, 1], got {value}")
    return value


def _solver_list(text):
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    unknown = set(names) - set(SOLVERS)
    if unknown or not names:
        raise argparse.ArgumentTypeError(
            f"solvers must be a comma list drawn from {sorted(SOLVERS)}"
        )
    return names


def _default_out_dir():
    return os.environ.get(OUT_DIR_ENV, ".")


def _add_out_dir(parser):
    parser.add_argument(
        "--out-dir", default=None,
        help=f"output directory (default: ${OUT_DIR_ENV} or current directory)",
    )


def _out_dir(args) -> Path:
    out = Path(args.out_dir if args.out_dir is not None else _default_out_dir())
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solver_config(args) -> SolverConfig:
    kwargs = {}
    if getattr(args, "rho", None) is not None:
        kwargs["rho"] = args.rho
    if getattr(args, "tol_kkt", None) is not None:
        kwargs["tol_kkt"] = args.tol_kkt
    if getattr(args, "max_iter", None) is not None:
        kwargs["max_iter"] = args.max_iter
    if getattr(args, "max_seconds", None) is not None:
        kwargs["max_seconds"] = args.max_seconds
    return SolverConfig(**kwargs)


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    spec = BenchSpec(K=args.K, N=args.N, seed=args.seed)
    problem = gen_synthetic(spec)
    if args.gamma:
        problem = problem.with_gamma(args.gamma)
    save_problem_bundle(problem, out)
    print(f"wrote bundle: K={args.K} N={args.N} seed={args.seed} -> {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    problem, manifest = load_problem_bundle(args.bundle)
    gamma = args.gamma if args.gamma is not None else float(manifest.get("gamma", 0.0))
    problem = problem.with_gamma(gamma)
    solve = SOLVERS[args.solver]
    solution = solve(problem, _solver_config(args))
    out = _out_dir(args)
    write_solution(out / "solution.json", solution, gamma=gamma)
    write_trace(out / "trace.csv", solution.trace)
    status = "converged" if solution.converged else "NOT converged"
    print(
        f"{args.solver}: {status} after {solution.iterations} iterations, "
        f"phi={solution.phi:.12g} kkt={solution.kkt_residual:.3g} nnz={solution.nnz}"
    )
    return EXIT_OK if solution.converged else EXIT_UNCONVERGED


def cmd_race(args) -> int:
    out = _out_dir(args)
    spec = BenchSpec(
        K=args.K, N=args.N, sparsity=args.sparsity, seed=args.seed,
        solvers=args.solvers, max_iter=args.max_iter or 100_000,
        max_seconds=args.max_seconds, parallel=args.parallel,
    )
    problem = gen_synthetic(spec)
    save_problem_bundle(problem, out / "instance")
    gamma, pilot = find_gamma_for_sparsity(problem, spec.sparsity)
    print(f"gamma={gamma:.12g} gives nnz={pilot.nnz} of K={spec.K}")
    result = run_race(problem, gamma, spec)
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)
    for name, trace in result.traces.items():
        write_trace(traces_dir / f"{name}.csv", trace)
    write_trace(traces_dir / "reference.csv", result.reference.trace)
    plot_manifest = emit_plot_data(result.traces, out / "plots")
    summary = {
        "K": spec.K, "N": spec.N, "sparsity": spec.sparsity, "seed": spec.seed,
        "gamma": gamma,
        "phi_star": result.phi_star,
        "parallel_timing": result.parallel,
        "solvers": {},
        "plots": plot_manifest["solvers"],
    }
    if result.parallel:
        summary["timing_caveat"] = (
            "solvers ran on concurrent threads; wall times reflect contention"
        )
    for name, sol in result.solutions.items():
        summary["solvers"][name] = {
            "converged": bool(sol.converged),
            "iterations": sol.iterations,
            "final_gap": sol.trace.gap[-1],
            "seconds_to_gap_1e-6": time_to_gap(sol.trace, 1e-6),
        }
        print(
            f"{name:>6}: gap 1e-6 at t={time_to_gap(sol.trace, 1e-6):.4g}s, "
            f"final gap {sol.trace.gap[-1]:.3g} in {sol.trace.elapsed[-1]:.4g}s"
        )
    (out / "manifest.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_gamma_search(args) -> int:
    problem, manifest = load_problem_bundle(args.bundle)
    search = GammaSearchConfig(max_refits=args.max_refits)
    if args.n_nonzero is not None:
        gamma, solution = fit_with_support_size(problem, args.n_nonzero, search)
    else:
        gamma, solution = find_gamma_for_sparsity(problem, args.sparsity, search)
    out = _out_dir(args)
    write_solution(out / "solution.json", solution, gamma=gamma)
    names = manifest.get("basis_names", [f"basis_{k:03d}" for k in range(problem.k)])
    write_estimate_report(out / "estimates.csv", names, solution.beta)
    print(f"gamma={gamma:.12g} nnz={solution.nnz} kkt={solution.kkt_residual:.3g}")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    problem, manifest = load_problem_bundle(args.bundle)
    gamma = args.gamma if args.gamma is not None else float(manifest.get("gamma", 0.0))
    se = bootstrap_se(
        problem, gamma, B=args.B, seed=args.seed, M=args.M,
        resample=not args.no_resample,
    )
    sol = SOLVERS["sista"](problem.with_gamma(gamma), SolverConfig())
    out = _out_dir(args)
    names = manifest.get("basis_names", [f"basis_{k:03d}" for k in range(problem.k)])
    write_estimate_report(out / "report.csv", names, sol.beta, se)
    for k, name in enumerate(names):
        if sol.beta[k] != 0.0:
            print(f"{name}: {sol.beta[k]:.3f} ({se[k]:.3f})")
    print(f"wrote {out / 'report.csv'} (B={args.B}, M={args.M})")
    return EXIT_OK


def cmd_validate(args) -> int:
    entries, raw, manifest = load_raw_bundle(args.bundle)
    failures = []
    # zero row/column sums of the stored basis matrices
    row_dev = np.abs(raw.sum(axis=2)).max()
    col_dev = np.abs(raw.sum(axis=1)).max()
    dev = max(row_dev, col_dev)
    ok = dev <= 1e-10
    print(f"zero row/column sums: max deviation {dev:.3g} -> {'ok' if ok else 'FAIL'}")
    if not ok:
        failures.append("basis matrices are not doubly zero-sum")
    centered = center_basis(raw, check_independence=False).centered
    ratio = independence_condition(centered)
    ok = ratio >= INDEPENDENCE_RTOL
    print(f"linear independence: Gram eigenvalue ratio {ratio:.3g} -> {'ok' if ok else 'FAIL'}")
    if not ok:
        failures.append("basis matrices are not linearly independent")
    min_entry = entries.min()
    ok = min_entry > 0
    print(f"positive support: min plan entry {min_entry:.3g} -> {'ok' if ok else 'FAIL'}")
    if not ok:
        failures.append("observed plan has zero entries")
    if np.any(entries < 0):
        failures.append("observed plan has negative entries")
        print("nonnegative plan: FAIL")
    p, q = entries.sum(axis=1), entries.sum(axis=0)
    ok = p.min() > 0 and q.min() > 0
    print(f"positive margins: min {min(p.min(), q.min()):.3g} -> {'ok' if ok else 'FAIL'}")
    if not ok:
        failures.append("observed plan has a zero margin")
    if failures:
        for item in failures:
            print(f"violated: {item}")
        return EXIT_DATA
    print("all assumptions hold")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="sista", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic problem bundle")
    p.add_argument("--K", type=_positive_int, required=True, help="number of basis matrices")
    p.add_argument("--N", type=_positive_int, required=True, help="margin size")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--gamma", type=_nonneg_float, default=0.0,
                   help="penalty recorded in the manifest")
    _add_out_dir(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a bundle with one solver")
    p.add_argument("--bundle", required=True, help="problem bundle directory")
    p.add_argument("--solver", choices=sorted(SOLVERS), default="sista")
    p.add_argument("--gamma", type=_nonneg_float, default=None,
                   help="penalty (default: manifest value)")
    p.add_argument("--rho", type=_positive_float, default=None, help="initial step size")
    p.add_argument("--tol-kkt", type=_positive_float, default=None)
    p.add_argument("--max-iter", type=_positive_int, default=None)
    p.add_argument("--max-seconds", type=_positive_float, default=None)
    _add_out_dir(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("race", help="benchmark the solvers on a synthetic instance")
    p.add_argument("--K", type=_positive_int, required=True)
    p.add_argument("--N", type=_positive_int, required=True)
    p.add_argument("--sparsity", type=_fraction, default=0.05)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--solvers", type=_solver_list, default=("sista", "ista", "cd"))
    p.add_argument("--max-iter", type=_positive_int, default=None)
    p.add_argument("--max-seconds", type=_positive_float, default=None,
                   help="wall-clock budget per solver")
    p.add_argument("--parallel", action="store_true",
                   help="race on concurrent threads (timing caveat recorded)")
    _add_out_dir(p)
    p.set_defaults(func=cmd_race)

    p = sub.add_parser("gamma-search", help="find the penalty for a support size")
    p.add_argument("--bundle", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--n-nonzero", type=_nonneg_int, default=None)
    group.add_argument("--sparsity", type=_fraction, default=None)
    p.add_argument("--max-refits", type=_positive_int, default=60)
    _add_out_dir(p)
    p.set_defaults(func=cmd_gamma_search)

    p = sub.add_parser("bootstrap", help="bootstrap standard errors at fixed gamma")
    p.add_argument("--bundle", required=True)
    p.add_argument("--gamma", type=_nonneg_float, default=None)
    p.add_argument("--B", type=_positive_int, default=1000, help="number of replicates")
    p.add_argument("--M", type=_positive_int, default=1_000_000,
                   help="pseudo-observations per replicate")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--no-resample", action="store_true",
                   help="reuse the observed plan in every replicate (SE = 0)")
    _add_out_dir(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("validate", help="check bundle assumptions")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
