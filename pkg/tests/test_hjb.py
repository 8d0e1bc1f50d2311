import numpy as np
import pytest

from ldrisk import ConfigurationError
from ldrisk.grid import Grid
from ldrisk.hjb import extract_ergodic, feedback_h, solve_discounted, solve_finite_horizon
from ldrisk.oracle import lgq_riccati


def test_merton_chi(merton, grid):
    sol = extract_ergodic(merton, -0.5, grid)
    assert sol.chi == pytest.approx(-0.015, abs=1e-6)
    assert np.ptp(sol.w.values) < 1e-6


@pytest.mark.parametrize("gamma", [-0.25, -1.0, -3.0])
def test_lgq_matches_riccati(lgq, grid, gamma):
    sol = extract_ergodic(lgq, gamma, grid)
    ref = lgq_riccati(lgq, gamma)
    assert sol.chi == pytest.approx(ref.chi, rel=1e-4)
    x = grid.points[80:121, 0]
    w = sol.w.values[80:121]
    # same potential up to the additive anchor
    np.testing.assert_allclose(w - w[20], ref.w(x) - ref.w(0.0), atol=1e-4)


def test_anchor_is_zero(lgq_solution, grid):
    assert lgq_solution.w.value_at(np.zeros(1)) == pytest.approx(0.0, abs=1e-12)


def test_positive_gamma_rejected(lgq, grid):
    with pytest.raises(ConfigurationError):
        extract_ergodic(lgq, 0.5, grid)


def test_discounted_monotone_in_epsilon(lgq, grid):
    # eps * v_eps(0) approaches -chi as eps -> 0
    chi = lgq_riccati(lgq, -1.0).chi
    errs = []
    for eps in (0.08, 0.02):
        v = solve_discounted(lgq, -1.0, grid, eps)
        errs.append(abs(eps * v.value_at(np.zeros(1)) + chi))
    assert errs[1] < errs[0]


def test_finite_horizon_merton(merton):
    g = Grid.box(2.0, 1, 41)
    surf = solve_finite_horizon(merton, -0.5, g, T=10.0, steps=100)
    v0 = surf.slice(0).value_at(np.zeros(1))
    assert v0 == pytest.approx(0.15, rel=1e-6)


def test_feedback_merton(merton, grid):
    sol = extract_ergodic(merton, -0.5, grid)
    h = feedback_h(merton, -0.5, sol.w)
    vals, _ = h(np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(vals, 0.2, atol=1e-6)
