"""Shared instance builders for the test suite."""

import numpy as np
import pytest

from sista import ObservedPlan, Problem, center_basis


def random_problem(seed, k, n, gamma=0.0, zero_frac=0.0, beta_scale=0.5,
                   full_support=False):
    """Seeded random instance: lognormal plan, centered standard-normal basis.

    `zero_frac` knocks out a fraction of plan entries (margins are kept
    positive by protecting one entry per row and column).
    """
    rng = np.random.default_rng(seed)
    entries = np.exp(rng.standard_normal((n, n)))
    if zero_frac > 0.0:
        mask = rng.random((n, n)) < zero_frac
        protect = rng.permutation(n)
        mask[np.arange(n), protect] = False
        mask[protect, np.arange(n)] = False
        entries[mask] = 0.0
    raw = rng.standard_normal((k, n, n))
    plan = ObservedPlan.from_entries(entries, full_support=full_support)
    basis = center_basis(raw, check_independence=False)
    return Problem.build(plan, basis, gamma=gamma)


def random_point(rng, problem, scale=0.5):
    """A finite point with moderate exponents for gradient checks."""
    from sista import Potentials

    n, k = problem.n, problem.k
    u = rng.uniform(-1.0, 1.0, n) * scale
    v = rng.uniform(-1.0, 1.0, n) * scale
    beta = rng.uniform(-1.0, 1.0, k) * scale / max(np.sqrt(k), 1.0)
    return Potentials(u, v), beta


@pytest.fixture
def rng():
    return np.random.default_rng(20240)
