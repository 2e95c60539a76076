"""Problem data model, dual objective, gradients, and Sinkhorn updates.

The estimation problem is posed over a fixed support mask I+ (the positive
entries of the observed plan): all exponential sums, linear terms, and
gradients range over I+ only.  Every exponential reduction goes through
log-sum-exp, and plans are materialized only when every on-support exponent
fits the double range; otherwise ExponentOverflowError is raised.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatchError, ExponentOverflowError, InvalidProblemError

_LOG_DBL_MAX = math.log(np.float64(np.finfo(np.float64).max))  # ~709.78


def _as_float_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidProblemError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidProblemError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class ObservedPlan:
    """A normalized transport plan with its margins and support mask.

    `entries` always has total mass 1; `p` and `q` are its row and column
    sums and are strictly positive.  `support` marks the index pairs over
    which every objective/gradient sum ranges.
    """

    entries: np.ndarray  # (N, N), nonnegative, mass 1
    support: np.ndarray  # (N, N) bool
    p: np.ndarray        # (N,) row margins
    q: np.ndarray        # (N,) column margins

    @classmethod
    def from_entries(cls, entries, full_support: bool = False) -> "ObservedPlan":
        """Validate, normalize to mass 1, and derive margins and support.

        With `full_support=True` the support mask covers every pair even
        where the plan is zero (zeros read as observed data rather than
        structural).
        """
        entries = _as_float_matrix(entries, "plan")
        if np.any(entries < 0):
            i, j = np.unravel_index(int(np.argmin(entries)), entries.shape)
            raise InvalidProblemError(f"plan has negative entry at ({i}, {j})")
        total = float(entries.sum())
        if total <= 0.0:
            raise InvalidProblemError("plan has zero total mass")
        entries = entries / total
        p = entries.sum(axis=1)
        q = entries.sum(axis=0)
        if np.any(p <= 0):
            raise InvalidProblemError(f"zero row margin at i={int(np.argmin(p))}")
        if np.any(q <= 0):
            raise InvalidProblemError(f"zero column margin at j={int(np.argmin(q))}")
        if full_support:
            support = np.ones(entries.shape, dtype=bool)
        else:
            support = entries > 0
        return cls(entries=entries, support=support, p=p, q=q)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class DissimilarityBasis:
    """K basis matrices in raw and doubly zero-sum (centered) form.

    centered[k] == raw[k] - row_offsets[k][:, None] - col_offsets[k][None, :]
    and has row and column sums ~0; the weight vector is unchanged by
    centering, so estimates can be reported against either form.
    """

    raw: np.ndarray          # (K, N, N)
    centered: np.ndarray     # (K, N, N)
    row_offsets: np.ndarray  # (K, N)
    col_offsets: np.ndarray  # (K, N)

    @property
    def k(self) -> int:
        return self.raw.shape[0]

    @property
    def n(self) -> int:
        return self.raw.shape[1]

    @property
    def flat(self) -> np.ndarray:
        """Centered matrices as a (K, N*N) view, for gradient contractions."""
        return self.centered.reshape(self.k, -1)

    def scaled(self, factor: float) -> "DissimilarityBasis":
        return DissimilarityBasis(
            raw=self.raw * factor,
            centered=self.centered * factor,
            row_offsets=self.row_offsets * factor,
            col_offsets=self.col_offsets * factor,
        )


@dataclass(frozen=True)
class Potentials:
    """Dual potentials (u, v); `normalized` means u[0] == 0."""

    u: np.ndarray
    v: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
            raise DimensionMismatchError(
                f"potentials must be equal-length vectors, got {u.shape} and {v.shape}"
            )
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if self.normalized and u.size and u[0] != 0.0:
            raise InvalidProblemError("normalized potentials require u[0] == 0")

    @classmethod
    def zeros(cls, n: int) -> "Potentials":
        return cls(np.zeros(n), np.zeros(n), normalized=True)

    def normalize(self) -> "Potentials":
        """Shift (u, v) by u[0]; leaves every u_i + v_j unchanged."""
        shift = self.u[0]
        return Potentials(self.u - shift, self.v + shift, normalized=True)

    @property
    def n(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True)
class Problem:
    """An inverse-transport instance: plan, basis, L1 weight, temperature.

    Construction folds any temperature T != 1 into the basis (cost and
    temperature can be rescaled jointly without changing the optimizer), so
    a stored problem always has temperature 1.
    """

    plan: ObservedPlan
    basis: DissimilarityBasis
    gamma: float = 0.0
    temperature: float = 1.0

    @classmethod
    def build(cls, plan: ObservedPlan, basis: DissimilarityBasis,
              gamma: float = 0.0, temperature: float = 1.0) -> "Problem":
        if basis.n != plan.n:
            raise DimensionMismatchError(
                f"basis is {basis.n}x{basis.n} but plan is {plan.n}x{plan.n}"
            )
        if not gamma >= 0.0:
            raise InvalidProblemError(f"gamma must be nonnegative, got {gamma}")
        if not temperature > 0.0:
            raise InvalidProblemError(f"temperature must be positive, got {temperature}")
        if temperature != 1.0:
            basis = basis.scaled(1.0 / temperature)
        return cls(plan=plan, basis=basis, gamma=float(gamma), temperature=1.0)

    def with_gamma(self, gamma: float) -> "Problem":
        if not gamma >= 0.0:
            raise InvalidProblemError(f"gamma must be nonnegative, got {gamma}")
        return dataclasses.replace(self, gamma=float(gamma))

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def k(self) -> int:
        return self.basis.k


@dataclass
class SolverTrace:
    """Per-iteration solver record; iteration 0 is the initial point."""

    iterations: list = dataclasses.field(default_factory=list)
    elapsed: list = dataclasses.field(default_factory=list)
    phi: list = dataclasses.field(default_factory=list)
    gap: list = dataclasses.field(default_factory=list)
    kkt: list = dataclasses.field(default_factory=list)
    nnz: list = dataclasses.field(default_factory=list)
    rho: list = dataclasses.field(default_factory=list)

    def append(self, iteration, elapsed, phi, gap, kkt, nnz, rho):
        if self.iterations and iteration <= self.iterations[-1]:
            raise ValueError("iteration indices must be strictly increasing")
        if self.elapsed and elapsed < self.elapsed[-1]:
            raise ValueError("elapsed seconds must be nondecreasing")
        self.iterations.append(int(iteration))
        self.elapsed.append(float(elapsed))
        self.phi.append(float(phi))
        self.gap.append(float(gap))
        self.kkt.append(float(kkt))
        self.nnz.append(int(nnz))
        self.rho.append(float(rho))

    def __len__(self) -> int:
        return len(self.iterations)


class SinkhornInfo(NamedTuple):
    converged: bool
    iterations: int
    margin_error: float


def _check_beta(beta, k: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (k,):
        raise DimensionMismatchError(f"beta must have shape ({k},), got {beta.shape}")
    if not np.all(np.isfinite(beta)):
        raise InvalidProblemError("beta contains non-finite entries")
    return beta


def _check_potentials(potentials: Potentials, n: int) -> Potentials:
    if potentials.n != n:
        raise DimensionMismatchError(
            f"potentials have length {potentials.n}, problem has N={n}"
        )
    if not (np.all(np.isfinite(potentials.u)) and np.all(np.isfinite(potentials.v))):
        raise InvalidProblemError("potentials contain non-finite entries")
    return potentials


def cost_matrix(basis: DissimilarityBasis, beta) -> np.ndarray:
    """Weighted combination sum_k beta_k * centered[k].

    Only the nonzero weights are contracted, so sparse beta is cheap.
    """
    beta = _check_beta(beta, basis.k)
    nz = np.flatnonzero(beta)
    if nz.size == 0:
        return np.zeros((basis.n, basis.n))
    return np.tensordot(beta[nz], basis.centered[nz], axes=1)


def log_plan(potentials: Potentials, beta, problem: Problem) -> np.ndarray:
    """Log-domain plan u_i + v_j - c_ij, finite at every pair (mask not applied)."""
    _check_potentials(potentials, problem.n)
    c = cost_matrix(problem.basis, beta)
    return potentials.u[:, None] + potentials.v[None, :] - c


def _masked(lam: np.ndarray, support: np.ndarray) -> np.ndarray:
    return np.where(support, lam, -np.inf)


def plan(potentials: Potentials, beta, problem: Problem) -> np.ndarray:
    """Materialize exp(u_i + v_j - c_ij) on the support, 0 elsewhere."""
    lam = _masked(log_plan(potentials, beta, problem), problem.plan.support)
    top = lam.max()
    if top > _LOG_DBL_MAX:
        raise ExponentOverflowError(
            f"plan entry exponent {top:.6g} exceeds the floating range"
        )
    return np.exp(lam)


def dual_objective(potentials: Potentials, beta, problem: Problem) -> float:
    """Smooth dual loss: sum_{I+} exp(u_i+v_j-c_ij) + sum_{I+} pihat_ij (c_ij-u_i-v_j)."""
    lam = log_plan(potentials, beta, problem)
    lse = logsumexp(_masked(lam, problem.plan.support))
    if lse > _LOG_DBL_MAX:
        raise ExponentOverflowError(
            f"exponential sum exceeds the floating range (log-sum {lse:.6g})"
        )
    # pihat is zero off support, so the linear term needs no mask
    linear = -float(np.sum(problem.plan.entries * lam))
    return float(np.exp(lse)) + linear


def penalized_objective(potentials: Potentials, beta, problem: Problem) -> float:
    """Dual loss plus gamma * ||beta||_1."""
    beta = _check_beta(beta, problem.k)
    return dual_objective(potentials, beta, problem) + problem.gamma * float(
        np.abs(beta).sum()
    )


def grad_beta(potentials: Potentials, beta, problem: Problem) -> np.ndarray:
    """Gradient of the dual loss in beta: sum_{I+} (pihat - pi) * centered[k]."""
    pi = plan(potentials, beta, problem)
    resid = problem.plan.entries - pi
    return problem.basis.flat @ resid.ravel()


def grad_uv(potentials: Potentials, beta, problem: Problem):
    """Gradients in (u, v): the margin residuals of the current plan."""
    pi = plan(potentials, beta, problem)
    return pi.sum(axis=1) - problem.plan.p, pi.sum(axis=0) - problem.plan.q


def moment_residuals(potentials: Potentials, beta, problem: Problem) -> np.ndarray:
    """Moment mismatch sum pi*d_k - sum pihat*d_k per basis matrix (= -grad_beta)."""
    pi = plan(potentials, beta, problem)
    return problem.basis.flat @ (pi - problem.plan.entries).ravel()


def _u_update_from_cost(v: np.ndarray, c: np.ndarray, problem: Problem) -> np.ndarray:
    z = _masked(v[None, :] - c, problem.plan.support)
    lse = logsumexp(z, axis=1)
    if not np.all(np.isfinite(lse)):
        bad = int(np.argmax(~np.isfinite(lse)))
        raise InvalidProblemError(f"row {bad} has empty support")
    return np.log(problem.plan.p) - lse


def _v_update_from_cost(u: np.ndarray, c: np.ndarray, problem: Problem) -> np.ndarray:
    z = _masked(u[:, None] - c, problem.plan.support)
    lse = logsumexp(z, axis=0)
    if not np.all(np.isfinite(lse)):
        bad = int(np.argmax(~np.isfinite(lse)))
        raise InvalidProblemError(f"column {bad} has empty support")
    return np.log(problem.plan.q) - lse


def sinkhorn_u_update(v, beta, problem: Problem) -> np.ndarray:
    """Exact minimization over u: u_i = log p_i - logsumexp_j (v_j - c_ij).

    The implied plan's row sums equal p up to rounding.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (problem.n,):
        raise DimensionMismatchError(f"v must have shape ({problem.n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidProblemError("v contains non-finite entries")
    c = cost_matrix(problem.basis, beta)
    return _u_update_from_cost(v, c, problem)


def sinkhorn_v_update(u, beta, problem: Problem) -> np.ndarray:
    """Exact minimization over v (column mirror of the u update)."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (problem.n,):
        raise DimensionMismatchError(f"u must have shape ({problem.n},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise InvalidProblemError("u contains non-finite entries")
    c = cost_matrix(problem.basis, beta)
    return _v_update_from_cost(u, c, problem)


def _margin_error(u: np.ndarray, v: np.ndarray, c: np.ndarray, problem: Problem) -> float:
    lam = _masked(u[:, None] + v[None, :] - c, problem.plan.support)
    rows = np.exp(logsumexp(lam, axis=1))
    cols = np.exp(logsumexp(lam, axis=0))
    err_r = np.abs(rows / problem.plan.p - 1.0).max()
    err_c = np.abs(cols / problem.plan.q - 1.0).max()
    return float(max(err_r, err_c))


def sinkhorn_solve(beta, problem: Problem, tol: float = 1e-12,
                   max_iter: int = 10_000, init: Potentials | None = None):
    """Alternate u/v updates at fixed beta until both margins match.

    Returns `(potentials, info)` where potentials are normalized (u[0] = 0)
    and `info` reports convergence, sweep count, and the final maximum
    relative margin violation.  On hitting `max_iter` the best (last)
    iterate is returned with `info.converged == False`.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    beta = _check_beta(beta, problem.k)
    c = cost_matrix(problem.basis, beta)
    v = np.zeros(problem.n) if init is None else np.array(init.v, dtype=np.float64)
    err = math.inf
    u = np.zeros(problem.n)
    for it in range(1, max_iter + 1):
        u = _u_update_from_cost(v, c, problem)
        v = _v_update_from_cost(u, c, problem)
        err = _margin_error(u, v, c, problem)
        if err <= tol:
            return Potentials(u, v).normalize(), SinkhornInfo(True, it, err)
    return Potentials(u, v).normalize(), SinkhornInfo(False, max_iter, err)
