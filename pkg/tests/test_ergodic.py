import warnings

import numpy as np
import pytest

from ldrisk.exceptions import DomainTooSmallError
from ldrisk.ergodic import (check_gradient_condition, chi_prime, chi_prime_fd_check, chi_zero,
                            invariant_measure, optimal_drift, total_variation)
from ldrisk.hjb import extract_ergodic
from ldrisk.oracle import lgq_riccati


def test_invariant_measure_is_gaussian(lgq, lgq_solution):
    m = invariant_measure(lgq, -1.0, lgq_solution.w)
    assert m.normalization_error < 1e-8
    # optimal drift is linear, -sqrt(2.5) x, so the measure is N(0, 1/sqrt(10))
    b = optimal_drift(lgq, -1.0, lgq_solution.w).values[:, 0]
    x = lgq_solution.w.grid.points[:, 0]
    np.testing.assert_allclose(b[90:111], -np.sqrt(2.5) * x[90:111], atol=1e-6)
    assert m.moment(2) == pytest.approx(1 / np.sqrt(10), rel=1e-3)
    assert np.all(m.density >= 0)


def test_chi_prime_lgq(lgq, lgq_solution):
    m = invariant_measure(lgq, -1.0, lgq_solution.w)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sol = chi_prime(lgq, -1.0, lgq_solution.w, m)
    assert sol.theta == pytest.approx(0.027740, abs=1e-5)
    assert sol.theta == pytest.approx(lgq_riccati(lgq, -1.0).chi_prime, rel=1e-5)
    assert sol.u.value_at(np.zeros(1)) == pytest.approx(0.0, abs=1e-12)
    assert sol.residual < 1e-6


def test_chi_prime_fd(lgq, grid):
    fd = chi_prime_fd_check(lgq, -1.0, 0.05, grid)
    assert fd == pytest.approx(0.027740, abs=1e-3)


def test_merton_measure_raises(merton, grid):
    sol = extract_ergodic(merton, -0.5, grid)
    with pytest.raises(DomainTooSmallError):
        invariant_measure(merton, -0.5, sol.w)


def test_ergodic_average_agrees(lgq, lgq_solution):
    m1 = invariant_measure(lgq, -1.0, lgq_solution.w)
    m2 = invariant_measure(lgq, -1.0, lgq_solution.w, method="ergodic_average",
                           n_chains=64, n_steps=8000, seed=3)
    assert total_variation(m1, m2) < 0.05


def test_gradient_condition(lgq, lgq_solution):
    c = check_gradient_condition(lgq, -1.0, lgq_solution.w)
    assert c.ok and c.max_ratio < 0.1


def test_chi_zero(lgq, grid):
    assert chi_zero(lgq, grid) == pytest.approx(0.125, rel=1e-4)
