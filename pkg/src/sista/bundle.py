"""On-disk formats: problem bundles, solver traces, solutions, reports.

A problem bundle is a directory holding a JSON manifest (K, N, gamma,
temperature, file names), one plan matrix file, and one matrix file per
basis element.  Matrix files are plain text: one row per line, entries
separated by single commas.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .core import Problem, SolverTrace
from .errors import BundleFormatError
from .preprocess import center_basis, load_matrix, load_plan
from .solvers import Solution

MANIFEST_NAME = "manifest.json"
PLAN_NAME = "plan.txt"
_FLOAT_FMT = "%.17g"  # shortest exact float64 round trip


def save_matrix(path, matrix) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(matrix, dtype=np.float64)),
               fmt=_FLOAT_FMT, delimiter=",")


def basis_file_name(k: int) -> str:
    return f"basis_{k:03d}.txt"


def save_problem_bundle(problem: Problem, directory, basis_form: str = "centered",
                        names=None) -> Path:
    """Write a problem bundle; returns the manifest path.

    `basis_form` selects which matrices land on disk; loading re-centers
    either form, so fitted weights do not depend on the choice.
    """
    if basis_form not in ("centered", "raw"):
        raise ValueError(f"basis_form must be 'centered' or 'raw', got {basis_form!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mats = problem.basis.centered if basis_form == "centered" else problem.basis.raw
    basis_files = [basis_file_name(k) for k in range(problem.k)]
    save_matrix(directory / PLAN_NAME, problem.plan.entries)
    for fname, mat in zip(basis_files, mats):
        save_matrix(directory / fname, mat)
    manifest = {
        "K": problem.k,
        "N": problem.n,
        "gamma": problem.gamma,
        "temperature": problem.temperature,
        "plan": PLAN_NAME,
        "basis": basis_files,
        "basis_form": basis_form,
    }
    if names is not None:
        if len(names) != problem.k:
            raise ValueError(f"expected {problem.k} basis names, got {len(names)}")
        manifest["basis_names"] = list(names)
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def read_manifest(directory) -> dict:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.is_file():
        raise BundleFormatError(f"{directory}: no {MANIFEST_NAME} found")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"{path}: invalid JSON ({exc})") from None
    for key in ("K", "N", "plan", "basis"):
        if key not in manifest:
            raise BundleFormatError(f"{path}: missing manifest key {key!r}")
    k, n = manifest["K"], manifest["N"]
    if not (isinstance(k, int) and isinstance(n, int) and k >= 1 and n >= 1):
        raise BundleFormatError(f"{path}: K and N must be positive integers")
    if len(manifest["basis"]) != k:
        raise BundleFormatError(
            f"{path}: manifest lists {len(manifest['basis'])} basis files, K={k}"
        )
    return manifest


def load_raw_bundle(directory):
    """Read bundle contents without validation-heavy construction.

    Returns `(plan_entries, raw_basis, manifest)`; used by the CLI
    assumption checker, which wants the matrices exactly as stored.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    n = manifest["N"]
    entries = load_matrix(directory / manifest["plan"], shape=(n, n))
    raw = np.stack([load_matrix(directory / f, shape=(n, n)) for f in manifest["basis"]])
    return entries, raw, manifest


def load_problem_bundle(directory, full_support: bool = False,
                        check_independence: bool = True):
    """Load and construct a Problem from a bundle; returns `(problem, manifest)`."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    n = manifest["N"]
    plan = load_plan(directory / manifest["plan"], full_support=full_support)
    if plan.n != n:
        raise BundleFormatError(f"{directory}: plan is {plan.n}x{plan.n}, manifest says N={n}")
    raw = np.stack([load_matrix(directory / f, shape=(n, n)) for f in manifest["basis"]])
    basis = center_basis(raw, check_independence=check_independence)
    problem = Problem.build(
        plan, basis,
        gamma=float(manifest.get("gamma", 0.0)),
        temperature=float(manifest.get("temperature", 1.0)),
    )
    return problem, manifest


TRACE_HEADER = "t,elapsed_seconds,phi,gap,kkt,nnz,rho"


def write_trace(path, trace: SolverTrace) -> Path:
    path = Path(path)
    lines = [TRACE_HEADER]
    for i in range(len(trace)):
        lines.append(
            "%d,%.17g,%.17g,%.17g,%.17g,%d,%.17g"
            % (
                trace.iterations[i], trace.elapsed[i], trace.phi[i],
                trace.gap[i], trace.kkt[i], trace.nnz[i], trace.rho[i],
            )
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def read_trace(path) -> SolverTrace:
    path = Path(path)
    trace = SolverTrace()
    with path.open() as fh:
        header = fh.readline().strip()
        if header != TRACE_HEADER:
            raise BundleFormatError(f"{path}: unexpected trace header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            if len(toks) != 7:
                raise BundleFormatError(f"{path}:{lineno}: expected 7 fields")
            try:
                trace.append(
                    int(toks[0]), float(toks[1]), float(toks[2]), float(toks[3]),
                    float(toks[4]), int(toks[5]), float(toks[6]),
                )
            except ValueError:
                raise BundleFormatError(f"{path}:{lineno}: invalid record") from None
    return trace


def write_solution(path, solution: Solution, gamma: float | None = None) -> Path:
    path = Path(path)
    payload = {
        "beta": solution.beta.tolist(),
        "u": solution.potentials.u.tolist(),
        "v": solution.potentials.v.tolist(),
        "converged": bool(solution.converged),
        "phi": solution.phi,
        "kkt_residual": solution.kkt_residual,
        "nnz": solution.nnz,
        "iterations": solution.iterations,
    }
    if gamma is not None:
        payload["gamma"] = gamma
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def write_estimate_report(path, names, beta, se=None) -> Path:
    """Tabulate estimates: one row per basis matrix (index, name, beta, se)."""
    beta = np.asarray(beta, dtype=np.float64)
    if se is None:
        se = np.full(beta.shape, math.nan)
    se = np.asarray(se, dtype=np.float64)
    if len(names) != beta.size or se.size != beta.size:
        raise ValueError("names, beta, and se must have equal length")
    path = Path(path)
    lines = ["index,name,beta,se"]
    for k, name in enumerate(names):
        lines.append("%d,%s,%.17g,%.17g" % (k, name, beta[k], se[k]))
    path.write_text("\n".join(lines) + "\n")
    return path
