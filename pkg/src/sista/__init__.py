"""Learning sparse transport costs from an observed plan.

Given a transport plan and a family of dissimilarity matrices, the package
estimates the weights of a linear cost model by minimizing an L1-penalized
entropic dual loss.  The flagship solver alternates exact Sinkhorn updates
of the potentials with proximal gradient steps on the weights; plain
proximal gradient and coordinate-descent baselines, a synthetic benchmark
harness, and bootstrap standard errors round out the toolkit.
"""

__version__ = "0.1.0"

from .core import (
    DissimilarityBasis,
    ObservedPlan,
    Potentials,
    Problem,
    SinkhornInfo,
    SolverTrace,
    cost_matrix,
    dual_objective,
    grad_beta,
    grad_uv,
    log_plan,
    moment_residuals,
    penalized_objective,
    plan,
    sinkhorn_solve,
    sinkhorn_u_update,
    sinkhorn_v_update,
)
from .errors import (
    BootstrapError,
    BundleFormatError,
    DimensionMismatchError,
    ExponentOverflowError,
    InvalidProblemError,
)
from .preprocess import (
    CharacteristicsTable,
    build_basis_cross,
    build_basis_diag,
    center_basis,
    independence_condition,
    load_characteristics,
    load_plan,
)
from .solvers import (
    Solution,
    SolverConfig,
    SolverState,
    cd_solve,
    gamma_max,
    ista_solve,
    kkt_residual,
    prox_l1,
    prox_l1_signed,
    sista_solve,
    sista_step,
)
from .bench import (
    BenchSpec,
    GammaSearchConfig,
    RaceResult,
    emit_plot_data,
    find_gamma_for_sparsity,
    gen_synthetic,
    run_race,
    time_to_gap,
)
from .bundle import (
    load_problem_bundle,
    save_problem_bundle,
    read_trace,
    write_solution,
    write_trace,
)
from .inference import bootstrap_se, fit_with_support_size

__all__ = [
    "BenchSpec",
    "BootstrapError",
    "BundleFormatError",
    "CharacteristicsTable",
    "DimensionMismatchError",
    "DissimilarityBasis",
    "ExponentOverflowError",
    "GammaSearchConfig",
    "InvalidProblemError",
    "ObservedPlan",
    "Potentials",
    "Problem",
    "RaceResult",
    "SinkhornInfo",
    "Solution",
    "SolverConfig",
    "SolverState",
    "SolverTrace",
    "bootstrap_se",
    "build_basis_cross",
    "build_basis_diag",
    "cd_solve",
    "center_basis",
    "cost_matrix",
    "dual_objective",
    "emit_plot_data",
    "find_gamma_for_sparsity",
    "fit_with_support_size",
    "gamma_max",
    "gen_synthetic",
    "grad_beta",
    "grad_uv",
    "independence_condition",
    "ista_solve",
    "kkt_residual",
    "load_characteristics",
    "load_plan",
    "load_problem_bundle",
    "log_plan",
    "moment_residuals",
    "penalized_objective",
    "plan",
    "prox_l1",
    "prox_l1_signed",
    "read_trace",
    "run_race",
    "save_problem_bundle",
    "sinkhorn_solve",
    "sinkhorn_u_update",
    "sinkhorn_v_update",
    "sista_solve",
    "sista_step",
    "time_to_gap",
    "write_solution",
    "write_trace",
]
