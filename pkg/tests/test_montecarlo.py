import math

import numpy as np
import pytest
from scipy.stats import norm

from ldrisk import ConfigurationError
from ldrisk.exceptions import EstimationError
from ldrisk.hjb import extract_ergodic
from ldrisk.montecarlo import (SimConfig, Strategy, estimate_downside, ld_slope, simulate_paths,
                               tilted_vs_plain_check, write_sim_csv)


@pytest.fixture(scope="module")
def merton_w(merton, grid):
    return extract_ergodic(merton, -0.5, grid).w


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig(T=1.0, dt=0.5)
    with pytest.raises(ConfigurationError):
        SimConfig(T=1.0, n_paths=10)
    with pytest.raises(ConfigurationError):
        SimConfig(T=-1.0)
    with pytest.raises(ConfigurationError):
        SimConfig(T=1.0, measure="tilted")
    assert SimConfig(T=50.0).step == 0.01
    assert SimConfig(T=1.0).step == 0.001


def test_zero_strategy_exact(merton):
    res = simulate_paths(merton, Strategy.zero(), SimConfig(T=5.0, n_paths=500))
    assert np.all(res.L == 0.0)
    assert estimate_downside(res, 0.0).p_hat == 1.0
    assert estimate_downside(res, -1e-3).p_hat == 0.0


def test_constant_strategy_gaussian(merton):
    # L_T is N((h mu - h^2 s^2 / 2), h^2 s^2 / T) for a constant fraction h
    res = simulate_paths(merton, Strategy.constant([0.2]), SimConfig(T=10.0, n_paths=20000, seed=1))
    mean = float(res.L.mean())
    assert mean == pytest.approx(0.2 * 0.3 - 0.5 * 0.04, abs=4 * 0.2 / math.sqrt(10 * 20000))
    p = norm.cdf((0.02 - 0.04) / (0.2 / math.sqrt(10)))
    est = estimate_downside(res, 0.02)
    assert est.ci_low - 0.005 <= p <= est.ci_high + 0.005


def test_deterministic_and_thread_independent(merton, merton_w):
    st = Strategy.stationary(merton, -0.5, merton_w)
    cfg = SimConfig(T=2.0, n_paths=20000, seed=5)
    a = simulate_paths(merton, st, cfg)
    b = simulate_paths(merton, st, SimConfig(T=2.0, n_paths=20000, seed=5, threads=3))
    np.testing.assert_array_equal(a.L, b.L)
    c = simulate_paths(merton, st, SimConfig(T=2.0, n_paths=20000, seed=6))
    assert not np.array_equal(a.L, c.L)


def test_tilted_agrees(merton, merton_w):
    st = Strategy.stationary(merton, -0.5, merton_w)
    rep = tilted_vs_plain_check(merton, st, 0.02, SimConfig(T=5.0, n_paths=20000, seed=2),
                                -0.5, merton_w)
    assert rep.ok
    assert rep.tilted.ess < rep.tilted.n_paths


def test_slope_requires_hits(merton):
    with pytest.raises(EstimationError):
        ld_slope(merton, Strategy.zero(), -0.01, [1.0, 2.0], SimConfig(T=1.0, n_paths=200))
    with pytest.raises(ConfigurationError):
        ld_slope(merton, Strategy.zero(), 0.01, [1.0], SimConfig(T=1.0, n_paths=200))


def test_sim_csv(tmp_path, merton):
    res = simulate_paths(merton, Strategy.zero(), SimConfig(T=1.0, n_paths=200))
    p = tmp_path / "sim.csv"
    write_sim_csv(p, [estimate_downside(res, 0.01)], {"seed": 0})
    lines = p.read_text().splitlines()
    assert lines[0] == "# schema=ldrisk-sim/1"
    assert lines[2].startswith("T,kappa,p_hat")
