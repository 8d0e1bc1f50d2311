import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldrisk import ConfigurationError
from ldrisk.duality import Branch
from ldrisk.oracle import (MertonOracle, lgq_residual, lgq_riccati, merton_chi, merton_rate,
                           riccati_bound, riccati_closed_form, self_verify, solve_riccati_pair)


def test_lgq_reference_values(lgq):
    s = lgq_riccati(lgq, -1.0)
    assert s.p == pytest.approx(-0.162278, abs=1e-6)
    assert s.chi == pytest.approx(-0.081139, abs=1e-6)
    assert s.chi_prime == pytest.approx(0.027740, abs=1e-6)
    assert lgq_residual(lgq, s) < 1e-12


def test_self_verify():
    checks = self_verify()
    assert [c.name for c in checks][0] == "lgq_riccati residual"
    assert all(c.ok for c in checks)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(-20, -0.01))
def test_merton_chi_legendre_pair(theta_sq, gamma):
    # the tangent at gamma has slope chi'(gamma); the rate at that slope is -gamma*k + chi
    chi, dchi = merton_chi(theta_sq, gamma)
    res = merton_rate(theta_sq, dchi)
    assert res.gamma_star == pytest.approx(gamma, rel=1e-9)
    assert res.I == pytest.approx(gamma * dchi - chi, rel=1e-9, abs=1e-15)


def test_merton_rate_branches():
    o = MertonOracle(0.09)
    assert o.rate(-0.01).branch == Branch.KAPPA_NEGATIVE
    assert o.rate(0.02).I == pytest.approx(0.005)
    assert o.rate(0.05).branch == Branch.ABOVE_LIMIT
    assert "kappa_zero_boundary" in o.rate(0.0).flags
    with pytest.raises(ConfigurationError):
        MertonOracle(-1.0)


def test_riccati_pair_closed_form():
    pair = solve_riccati_pair(0.125, 1.5, 5.0)
    tau = 5.0 - pair.times
    np.testing.assert_allclose(pair.P[:, 0, 0] if pair.P.ndim == 3 else pair.P,
                               riccati_closed_form(0.125, 1.5, tau), atol=1e-8)


def test_riccati_bound_below_value(lgq):
    rb = riccati_bound(lgq, -1.0, 5.0)
    assert rb.P_at(0.0) > 0
