"""First-order solvers for the L1-penalized dual loss.

Three routes to the same unique optimum:

* `sista_solve` - exact Sinkhorn minimization in (u, v) alternating with one
  proximal gradient step in beta;
* `ista_solve`  - plain gradient descent in (u, v) plus the same proximal
  step in beta;
* `cd_solve`    - Sinkhorn in (u, v) plus exact univariate minimization of
  each beta component by bisection.

All three share the stopping rule (KKT residual, then objective stall), the
trace schema, and the backtracking policy.  Wall time excludes trace
bookkeeping.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .core import (
    _LOG_DBL_MAX,
    Potentials,
    Problem,
    SolverTrace,
    _check_beta,
    _masked,
    _u_update_from_cost,
    _v_update_from_cost,
    cost_matrix,
    sinkhorn_solve,
)
from .errors import DimensionMismatchError, ExponentOverflowError, InvalidProblemError

_EPS = float(np.finfo(np.float64).eps)
_STEP_FREEZE = math.sqrt(_EPS)  # step scale below which rho stops growing


def _slack(f_cur: float) -> float:
    # backtracking compares objective values that carry ~eps-relative noise
    return 8.0 * _EPS * max(1.0, abs(f_cur))


@dataclass
class SolverConfig:
    """Solver settings shared by SISTA, ISTA, and coordinate descent.

    `rho` is the (initial) proximal step for beta and `rho_uv` the ISTA
    gradient step for the potentials; with the default backtracking policy
    both shrink by `shrink` until the sufficient-decrease test passes and
    re-expand by `grow` each iteration, floored at `rho_min`.  `signs`
    optionally constrains components (+1 nonnegative, -1 nonpositive,
    0 free).
    """

    rho: float = 1.0
    rho_uv: float = 1.0
    step_policy: str = "backtracking"  # "backtracking" | "fixed"
    shrink: float = 0.5
    grow: float = 1.5
    sufficient_decrease: float = 1.0
    rho_min: float = 1e-12
    rho_max: float = 1e12
    max_iter: int = 100_000
    tol_kkt: float = 1e-8
    tol_obj: float | None = None
    max_seconds: float | None = None
    signs: np.ndarray | None = None
    cd_bracket: float = 1.0
    cd_tol: float = 1e-10
    cd_width_cap: float = 2.0**60
    cd_max_bisect: int = 200

    def __post_init__(self):
        if not self.rho > 0 or not self.rho_uv > 0:
            raise ValueError("step sizes must be positive")
        if self.step_policy not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step policy {self.step_policy!r}")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not self.grow >= 1.0:
            raise ValueError("grow factor must be >= 1")
        if not 0.0 < self.sufficient_decrease <= 1.0:
            raise ValueError("sufficient_decrease must lie in (0, 1]")
        if not 0.0 < self.rho_min <= self.rho:
            raise ValueError("rho_min must satisfy 0 < rho_min <= rho")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol_kkt > 0:
            raise ValueError("tol_kkt must be positive")
        if self.tol_obj is not None and not self.tol_obj > 0:
            raise ValueError("tol_obj must be positive when set")
        if self.max_seconds is not None and not self.max_seconds > 0:
            raise ValueError("max_seconds must be positive when set")
        if self.signs is not None:
            signs = np.asarray(self.signs)
            if not np.isin(signs, (-1, 0, 1)).all():
                raise ValueError("signs entries must be -1, 0, or +1")
            self.signs = signs.astype(np.int8)
        if not (self.cd_bracket > 0 and self.cd_tol > 0 and self.cd_width_cap > 0):
            raise ValueError("coordinate-descent parameters must be positive")


@dataclass
class Solution:
    """A solver endpoint: point, objective, optimality measure, and trace."""

    potentials: Potentials
    beta: np.ndarray
    phi: float
    kkt_residual: float
    converged: bool
    trace: SolverTrace

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.beta))

    @property
    def iterations(self) -> int:
        return self.trace.iterations[-1] if len(self.trace) else 0


@dataclass
class SolverState:
    """Mutable loop state of the hybrid solver: point plus adaptive step."""

    potentials: Potentials
    beta: np.ndarray
    rho: float


def prox_l1(z, tau: float) -> np.ndarray:
    """Soft thresholding: shrink toward 0 with dead zone |z| <= tau."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)


def prox_l1_signed(z, tau: float, signs) -> np.ndarray:
    """Soft thresholding followed by projection on per-component sign constraints."""
    z = np.asarray(z, dtype=np.float64)
    signs = np.asarray(signs)
    if signs.shape != z.shape:
        raise DimensionMismatchError("signs must match z in shape")
    out = prox_l1(z, tau)
    nonneg = signs > 0
    nonpos = signs < 0
    out[nonneg] = np.maximum(z[nonneg] - tau, 0.0)
    out[nonpos] = np.minimum(z[nonpos] + tau, 0.0)
    return out


def _prox(z, tau, signs):
    return prox_l1(z, tau) if signs is None else prox_l1_signed(z, tau, signs)


def _beta_violation(gb, beta, gamma, signs):
    """Per-component violation of the subgradient optimality condition."""
    if signs is None:
        signs = np.zeros(beta.shape, dtype=np.int8)
    viol = np.empty_like(gb)
    nz = beta != 0
    free = signs == 0
    m = free & nz
    viol[m] = np.abs(gb[m] + gamma * np.sign(beta[m]))
    m = free & ~nz
    viol[m] = np.maximum(np.abs(gb[m]) - gamma, 0.0)
    m = (signs > 0) & nz
    viol[m] = np.abs(gb[m] + gamma)
    m = (signs > 0) & ~nz
    viol[m] = np.maximum(-(gb[m] + gamma), 0.0)
    m = (signs < 0) & nz
    viol[m] = np.abs(gb[m] - gamma)
    m = (signs < 0) & ~nz
    viol[m] = np.maximum(gb[m] - gamma, 0.0)
    # distance to the feasible orthant dominates at infeasible points
    feas = np.zeros_like(gb)
    feas[signs > 0] = np.maximum(-beta[signs > 0], 0.0)
    feas[signs < 0] = np.maximum(beta[signs < 0], 0.0)
    return np.maximum(viol, feas)


class _PointEval(NamedTuple):
    f: float
    phi: float
    kkt: float
    gu: np.ndarray
    gv: np.ndarray
    gb: np.ndarray


def _eval_point(potentials, beta, problem, signs=None) -> _PointEval:
    """Objective, gradients, and KKT residual at a point (one plan build)."""
    c = cost_matrix(problem.basis, beta)
    lam = potentials.u[:, None] + potentials.v[None, :] - c
    masked = _masked(lam, problem.plan.support)
    lse = logsumexp(masked)
    if lse > _LOG_DBL_MAX:
        raise ExponentOverflowError(
            f"exponential sum exceeds the floating range (log-sum {lse:.6g})"
        )
    pi = np.exp(masked)
    f = float(np.exp(lse)) - float(np.sum(problem.plan.entries * lam))
    phi = f + problem.gamma * float(np.abs(beta).sum())
    gu = pi.sum(axis=1) - problem.plan.p
    gv = pi.sum(axis=0) - problem.plan.q
    gb = problem.basis.flat @ (problem.plan.entries - pi).ravel()
    kkt_u = float(np.abs(gu[1:]).max()) if gu.size > 1 else 0.0
    kkt_v = float(np.abs(gv).max())
    kkt_b = float(_beta_violation(gb, beta, problem.gamma, signs).max())
    return _PointEval(f, phi, max(kkt_u, kkt_v, kkt_b), gu, gv, gb)


def kkt_residual(potentials: Potentials, beta, problem: Problem, signs=None) -> float:
    """Max violation of the first-order system.

    Components: sup-norm of the (u, v) gradients with the normalized
    coordinate u_1 excluded, and per component of beta the distance of
    -grad from the L1 subdifferential (interval [-gamma, gamma] at zeros).
    """
    beta = _check_beta(beta, problem.k)
    return _eval_point(potentials, beta, problem, signs=signs).kkt


def _f_at(pot: Potentials, c: np.ndarray, problem: Problem) -> float:
    """Dual loss at (pot, cost matrix c); raises on float-range overflow."""
    lam = pot.u[:, None] + pot.v[None, :] - c
    lse = logsumexp(_masked(lam, problem.plan.support))
    if lse > _LOG_DBL_MAX:
        raise ExponentOverflowError(
            f"exponential sum exceeds the floating range (log-sum {lse:.6g})"
        )
    return float(np.exp(lse)) - float(np.sum(problem.plan.entries * lam))


def _prox_step_beta(pot, beta_t, c_t, f_cur, g, problem, config, rho):
    """One proximal gradient step in beta with optional backtracking on rho.

    Acceptance is the quadratic-majorization test
        F(beta') <= F(beta) + g.(beta'-beta) + s/(2 rho) ||beta'-beta||^2,
    which for s <= 1 forces the penalized objective not to increase.
    Overflowing trial points count as rejections.
    """
    gamma = problem.gamma
    if config.step_policy == "fixed":
        rho = config.rho
        return _prox(beta_t - rho * g, rho * gamma, config.signs), rho
    # re-expand only while steps are above float resolution; once frozen, the
    # iteration map is stationary and settles on an exact fixed point
    probe = _prox(beta_t - rho * g, rho * gamma, config.signs)
    if np.abs(probe - beta_t).max() > _STEP_FREEZE * max(1.0, np.abs(beta_t).max()):
        rho = min(rho * config.grow, config.rho_max)
    slack = _slack(f_cur)
    while True:
        beta_new = _prox(beta_t - rho * g, rho * gamma, config.signs)
        delta = beta_new - beta_t
        if not delta.any():
            return beta_new, rho
        try:
            f_new = _f_at(pot, cost_matrix(problem.basis, beta_new), problem)
        except ExponentOverflowError:
            f_new = math.inf
        bound = (
            f_cur
            + float(g @ delta)
            + config.sufficient_decrease / (2.0 * rho) * float(delta @ delta)
        )
        if f_new <= bound + slack or rho <= config.rho_min:
            return beta_new, rho
        rho = max(rho * config.shrink, config.rho_min)


def sista_step(state: SolverState, problem: Problem, config: SolverConfig) -> SolverState:
    """One hybrid iteration: exact u and v updates, then a prox step in beta."""
    beta_t = state.beta
    c_t = cost_matrix(problem.basis, beta_t)
    u = _u_update_from_cost(state.potentials.v, c_t, problem)
    v = _v_update_from_cost(u, c_t, problem)
    pot = Potentials(u, v).normalize()
    lam = pot.u[:, None] + pot.v[None, :] - c_t
    pi = np.exp(_masked(lam, problem.plan.support))
    f_cur = float(pi.sum()) - float(np.sum(problem.plan.entries * lam))
    g = problem.basis.flat @ (problem.plan.entries - pi).ravel()
    beta_new, rho = _prox_step_beta(pot, beta_t, c_t, f_cur, g, problem, config, state.rho)
    return SolverState(pot, beta_new, rho)


def _initial_point(problem: Problem, init):
    if init is None:
        return Potentials.zeros(problem.n), np.zeros(problem.k)
    u, v, beta = init
    beta = np.array(_check_beta(beta, problem.k))
    pot = Potentials(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
    if pot.n != problem.n:
        raise DimensionMismatchError(
            f"initial potentials have length {pot.n}, problem has N={problem.n}"
        )
    if not (np.all(np.isfinite(pot.u)) and np.all(np.isfinite(pot.v))):
        raise InvalidProblemError("initial potentials contain non-finite entries")
    return pot.normalize(), beta


def _gap(phi: float, phi_ref: float | None) -> float:
    if phi_ref is None:
        return math.nan
    return max(phi - phi_ref, 0.0)


class _Monitor:
    """Shared bookkeeping: trace rows (untimed), stopping tests, wall clock."""

    def __init__(self, problem, config, phi_ref):
        self.config = config
        self.phi_ref = phi_ref
        self.trace = SolverTrace()
        self.work = 0.0
        self.phi_prev = math.inf
        self._seg = None

    def start(self):
        self._seg = time.perf_counter()

    def record(self, iteration, ev, beta, rho):
        # iteration 0 is the initial point: no solver work has happened yet
        if iteration:
            self.work += time.perf_counter() - self._seg
        self.trace.append(
            iteration,
            self.work,
            ev.phi,
            _gap(ev.phi, self.phi_ref),
            ev.kkt,
            int(np.count_nonzero(beta)),
            rho,
        )

    def should_stop(self, ev) -> bool:
        cfg = self.config
        if ev.kkt <= cfg.tol_kkt:
            return True
        if cfg.tol_obj is not None and abs(ev.phi - self.phi_prev) <= cfg.tol_obj * max(
            1.0, abs(ev.phi)
        ):
            return True
        self.phi_prev = ev.phi
        return cfg.max_seconds is not None and self.work >= cfg.max_seconds


def sista_solve(problem: Problem, config: SolverConfig | None = None,
                init=None, phi_ref: float | None = None) -> Solution:
    """Run the hybrid solver to the KKT tolerance from `init` (default zeros).

    `phi_ref` fills the trace's objective-gap column when a reference
    optimum is available.  The returned iterate is the last one, which is
    the best by monotone descent; `converged` reflects the KKT test only.
    """
    config = config if config is not None else SolverConfig()
    pot, beta = _initial_point(problem, init)
    mon = _Monitor(problem, config, phi_ref)
    mon.start()
    ev = _eval_point(pot, beta, problem, signs=config.signs)
    mon.record(0, ev, beta, config.rho)
    if ev.kkt <= config.tol_kkt:
        return Solution(pot, beta, ev.phi, ev.kkt, True, mon.trace)
    mon.phi_prev = ev.phi
    state = SolverState(pot, beta, config.rho)
    for t in range(1, config.max_iter + 1):
        mon.start()
        state = sista_step(state, problem, config)
        ev = _eval_point(state.potentials, state.beta, problem, signs=config.signs)
        mon.record(t, ev, state.beta, state.rho)
        if mon.should_stop(ev):
            break
    return Solution(
        state.potentials, state.beta, ev.phi, ev.kkt,
        ev.kkt <= config.tol_kkt, mon.trace,
    )


def ista_solve(problem: Problem, config: SolverConfig | None = None,
               init=None, phi_ref: float | None = None) -> Solution:
    """Proximal gradient baseline: gradient steps in (u, v), prox steps in beta."""
    config = config if config is not None else SolverConfig()
    pot, beta = _initial_point(problem, init)
    mon = _Monitor(problem, config, phi_ref)
    mon.start()
    ev = _eval_point(pot, beta, problem, signs=config.signs)
    mon.record(0, ev, beta, config.rho)
    if ev.kkt <= config.tol_kkt:
        return Solution(pot, beta, ev.phi, ev.kkt, True, mon.trace)
    mon.phi_prev = ev.phi
    rho_uv = config.rho_uv
    rho_b = config.rho
    for t in range(1, config.max_iter + 1):
        mon.start()
        c = cost_matrix(problem.basis, beta)
        gu, gv = ev.gu, ev.gv
        gnorm2 = float(gu @ gu + gv @ gv)
        if config.step_policy == "fixed" or gnorm2 == 0.0:
            pot_new = Potentials(pot.u - rho_uv * gu, pot.v - rho_uv * gv)
        else:
            gmax = max(np.abs(gu).max(), np.abs(gv).max())
            uv_scale = max(1.0, np.abs(pot.u).max(), np.abs(pot.v).max())
            if rho_uv * gmax > _STEP_FREEZE * uv_scale:
                rho_uv = min(rho_uv * config.grow, config.rho_max)
            slack = _slack(ev.f)
            while True:
                pot_new = Potentials(pot.u - rho_uv * gu, pot.v - rho_uv * gv)
                try:
                    f_new = _f_at(pot_new, c, problem)
                except ExponentOverflowError:
                    f_new = math.inf
                armijo = ev.f - 0.5 * config.sufficient_decrease * rho_uv * gnorm2
                if f_new <= armijo + slack or rho_uv <= config.rho_min:
                    break
                rho_uv = max(rho_uv * config.shrink, config.rho_min)
        pot = pot_new.normalize()
        lam = pot.u[:, None] + pot.v[None, :] - c
        pi = np.exp(_masked(lam, problem.plan.support))
        f_cur = float(pi.sum()) - float(np.sum(problem.plan.entries * lam))
        g = problem.basis.flat @ (problem.plan.entries - pi).ravel()
        beta, rho_b = _prox_step_beta(pot, beta, c, f_cur, g, problem, config, rho_b)
        ev = _eval_point(pot, beta, problem, signs=config.signs)
        mon.record(t, ev, beta, rho_b)
        if mon.should_stop(ev):
            break
    return Solution(pot, beta, ev.phi, ev.kkt, ev.kkt <= config.tol_kkt, mon.trace)


def _minimize_component(lam_base, dk, support, pihat_dk, gamma, config, prev):
    """Exact univariate minimum of the penalized loss in one beta component.

    `lam_base` is the log-plan with this component's contribution removed.
    The stationarity function h(b) = sum (pihat - pi(b)) * dk is increasing
    in b; the subgradient interval test at 0 handles the kink, otherwise the
    root of h(b) = -sign * gamma is bracketed around `prev` by doubling and
    bisected to residual `cd_tol`.  Returns `(b, ok)`; `ok=False` flags
    bracket-expansion failure.
    """
    mask = support & (dk != 0.0)
    if not mask.any():
        return 0.0, True
    z = lam_base[mask]
    d = dk[mask]
    pos = d > 0
    neg = ~pos
    log_dp = np.log(d[pos]) if pos.any() else None
    log_dn = np.log(-d[neg]) if neg.any() else None

    def h(b):
        x = z - b * d
        if x.max() <= _LOG_DBL_MAX - 40.0:
            return pihat_dk - float(np.exp(x) @ d)
        # far field: only the sign survives; compare the two log-magnitudes
        lp = float(logsumexp(x[pos] + log_dp)) if pos.any() else -math.inf
        ln = float(logsumexp(x[neg] + log_dn)) if neg.any() else -math.inf
        if lp == ln:
            return pihat_dk
        return -math.inf if lp > ln else math.inf

    h0 = h(0.0)
    if abs(h0) <= gamma:
        return 0.0, True
    shift = gamma if h0 < -gamma else -gamma

    def psi(b):
        return h(b) + shift

    lo = prev - config.cd_bracket
    hi = prev + config.cd_bracket
    p_lo = psi(lo)
    p_hi = psi(hi)
    while p_lo > 0.0:
        if hi - lo > config.cd_width_cap:
            return prev, False
        lo -= hi - lo
        p_lo = psi(lo)
    while p_hi < 0.0:
        if hi - lo > config.cd_width_cap:
            return prev, False
        hi += hi - lo
        p_hi = psi(hi)
    mid = 0.5 * (lo + hi)
    for _ in range(config.cd_max_bisect):
        mid = 0.5 * (lo + hi)
        p_mid = psi(mid)
        if abs(p_mid) <= config.cd_tol:
            return mid, True
        if p_mid > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-16 * max(1.0, abs(mid)):
            break
    return mid, True


def cd_solve(problem: Problem, config: SolverConfig | None = None,
             init=None, phi_ref: float | None = None) -> Solution:
    """Coordinate-descent baseline: Sinkhorn in (u, v), bisection per component."""
    config = config if config is not None else SolverConfig()
    if config.signs is not None:
        raise NotImplementedError("sign constraints are not wired into cd_solve")
    pot, beta = _initial_point(problem, init)
    beta = beta.copy()
    mon = _Monitor(problem, config, phi_ref)
    mon.start()
    ev = _eval_point(pot, beta, problem)
    mon.record(0, ev, beta, config.rho)
    if ev.kkt <= config.tol_kkt:
        return Solution(pot, beta, ev.phi, ev.kkt, True, mon.trace)
    mon.phi_prev = ev.phi
    support = problem.plan.support
    pihat_dot = problem.basis.flat @ problem.plan.entries.ravel()
    bracket_ok = True
    for t in range(1, config.max_iter + 1):
        mon.start()
        c = cost_matrix(problem.basis, beta)
        u = _u_update_from_cost(pot.v, c, problem)
        v = _v_update_from_cost(u, c, problem)
        pot = Potentials(u, v).normalize()
        lam = pot.u[:, None] + pot.v[None, :] - c
        for k in range(problem.k):
            dk = problem.basis.centered[k]
            lam_base = lam + beta[k] * dk if beta[k] != 0.0 else lam
            b_new, ok = _minimize_component(
                lam_base, dk, support, pihat_dot[k], problem.gamma, config, beta[k]
            )
            if not ok:
                bracket_ok = False
                break
            lam = lam_base - b_new * dk if b_new != 0.0 else lam_base
            beta[k] = b_new
        ev = _eval_point(pot, beta, problem)
        mon.record(t, ev, beta, config.rho)
        if not bracket_ok or mon.should_stop(ev):
            break
    converged = bracket_ok and ev.kkt <= config.tol_kkt
    return Solution(pot, beta.copy(), ev.phi, ev.kkt, converged, mon.trace)


def gamma_max(problem: Problem, tol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Smallest penalty for which beta = 0 is optimal.

    At beta = 0, solve the plain matching problem in (u, v); the sup norm of
    the beta gradient there is the threshold: at or above it, zero lies in
    the subdifferential everywhere.
    """
    from .core import grad_beta  # local import to keep module load cheap

    zero = np.zeros(problem.k)
    pot, _ = sinkhorn_solve(zero, problem, tol=tol, max_iter=max_iter)
    return float(np.abs(grad_beta(pot, zero, problem)).max())


SOLVERS = {
    "sista": sista_solve,
    "ista": ista_solve,
    "cd": cd_solve,
}
