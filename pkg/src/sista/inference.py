"""Estimation workflow helpers: support-size targeting and bootstrap errors."""

from __future__ import annotations

import numpy as np

from .core import ObservedPlan, Problem
from .bench import GammaSearchConfig, find_gamma_for_sparsity
from .errors import BootstrapError, InvalidProblemError
from .solvers import SolverConfig, gamma_max, sista_solve


def fit_with_support_size(problem: Problem, n_nonzero: int,
                          search: GammaSearchConfig | None = None):
    """Pick the penalty so that exactly `n_nonzero` components are active.

    Returns `(gamma, solution)`.  `n_nonzero=0` short-circuits to the
    smallest penalty that zeroes the whole vector.
    """
    k = problem.k
    if not 0 <= n_nonzero <= k:
        raise ValueError(f"n_nonzero must lie in [0, {k}], got {n_nonzero}")
    if n_nonzero == 0:
        search = search if search is not None else GammaSearchConfig()
        gamma = gamma_max(problem)
        sol = sista_solve(problem.with_gamma(gamma), search.fit_config())
        return gamma, sol
    return find_gamma_for_sparsity(problem, n_nonzero / k, search)


def bootstrap_se(problem: Problem, gamma: float, B: int, seed: int,
                 M: int = 1_000_000, resample: bool = True,
                 config: SolverConfig | None = None,
                 max_drop_frac: float = 0.1) -> np.ndarray:
    """Componentwise bootstrap standard errors of the fitted weights.

    Each replicate redraws the plan as `M` multinomial pseudo-observations
    over the observed support, refits at the fixed penalty, and the SE is
    the sample standard deviation of the fitted vectors.  Replicates whose
    resampled plan is degenerate (a margin hits zero) or whose fit does not
    converge are dropped; more than `max_drop_frac * B` drops is an error.
    With `resample=False` every replicate reuses the observed plan (the
    infinite-sample limit), so the SE is exactly zero.
    """
    if B < 2:
        raise ValueError(f"B must be >= 2, got {B}")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    cfg = config if config is not None else SolverConfig()
    prob = problem.with_gamma(gamma)
    rng = np.random.default_rng(seed)

    if not resample:
        sol = sista_solve(prob, cfg)
        if not sol.converged:
            raise BootstrapError("base fit did not converge in resample-disabled mode")
        fits = np.tile(sol.beta, (B, 1))
        return fits.std(axis=0, ddof=1)

    sup = problem.plan.support
    idx = np.nonzero(sup)
    weights = problem.plan.entries[idx]
    weights = weights / weights.sum()
    fits = []
    dropped = 0
    for _ in range(B):
        counts = rng.multinomial(M, weights)
        entries = np.zeros_like(problem.plan.entries)
        entries[idx] = counts / M
        try:
            rep_plan = ObservedPlan.from_entries(entries)
            rep_prob = Problem.build(rep_plan, problem.basis, gamma=gamma)
            sol = sista_solve(rep_prob, cfg)
            if not sol.converged:
                raise InvalidProblemError("replicate fit did not converge")
        except InvalidProblemError:
            dropped += 1
            continue
        fits.append(sol.beta)
    if dropped > max_drop_frac * B:
        raise BootstrapError(
            f"{dropped} of {B} bootstrap replicates failed (limit {max_drop_frac:.0%})"
        )
    if len(fits) < 2:
        raise BootstrapError("fewer than two usable bootstrap replicates")
    return np.asarray(fits).std(axis=0, ddof=1)
