import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldrisk import ConfigurationError
from ldrisk.duality import (Branch, ChiCurve, build_chi_curve, double_legendre_error, legendre,
                            rate_function_table, read_rate_csv, write_rate_csv)
from ldrisk.exceptions import CertificationError
from ldrisk.oracle import merton_chi, merton_rate, oracle_chi_curve

THETA_SQ = 0.09


@pytest.fixture(scope="module")
def merton_curve():
    g = np.linspace(-10.0, -0.02, 400)
    chi, dchi = merton_chi(THETA_SQ, g)
    return ChiCurve(g, chi, dchi, source="oracle")


def test_certified(merton_curve):
    assert merton_curve.convexity_certified
    assert merton_curve.chi_at(-0.5) == pytest.approx(-0.015, abs=1e-8)


def test_legendre_merton(merton_curve):
    r = legendre(merton_curve, 0.02)
    assert r.branch == Branch.INTERIOR
    assert r.gamma_star == pytest.approx(-0.5, abs=1e-5)
    assert r.I == pytest.approx(0.005, abs=1e-8)
    assert r.J == -r.I


def test_branches(merton_curve):
    assert legendre(merton_curve, -0.01).branch == Branch.KAPPA_NEGATIVE
    assert legendre(merton_curve, -0.01).J == -np.inf
    above = legendre(merton_curve, 0.08)
    assert above.branch == Branch.ABOVE_LIMIT and above.I == 0.0
    with pytest.warns(RuntimeWarning, match="gamma_min"):
        zero = legendre(merton_curve, 0.0)
    assert "kappa_zero_boundary" in zero.flags and "truncated" in zero.flags


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0015, 0.043))
def test_rate_matches_oracle(merton_curve, kappa):
    assert legendre(merton_curve, kappa).I == pytest.approx(merton_rate(THETA_SQ, kappa).I,
                                                            rel=1e-5, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.001, 0.04), st.floats(0.001, 0.04))
def test_rate_convex_and_nonincreasing(merton_curve, k1, k2):
    a, b = sorted((k1, k2))
    Ia, Ib = legendre(merton_curve, a).I, legendre(merton_curve, b).I
    Im = legendre(merton_curve, 0.5 * (a + b)).I
    assert Ib <= Ia + 1e-12
    assert Im <= 0.5 * (Ia + Ib) + 1e-10


def test_double_legendre(merton_curve):
    assert double_legendre_error(merton_curve) < 1e-5


def test_uncertified_refused():
    g = np.array([-3.0, -2.0, -1.0])
    c = ChiCurve(g, np.array([-0.1, -0.02, -0.05]), np.array([0.01, 0.02, 0.03]))
    assert not c.convexity_certified and c.violations
    with pytest.raises(CertificationError):
        legendre(c, 0.015)
    legendre(c, 0.015, allow_uncertified=True)


def test_curve_validation():
    with pytest.raises(ConfigurationError):
        ChiCurve([-1.0, -2.0], [0, 0], [0, 0])
    with pytest.raises(ConfigurationError):
        ChiCurve([-1.0, 0.5], [0, 0], [0, 0])
    with pytest.raises(ConfigurationError):
        ChiCurve([-1.0], [0], [0])


def test_csv_roundtrip(tmp_path, merton_curve):
    p = tmp_path / "chi.csv"
    merton_curve.to_csv(p)
    back = ChiCurve.from_csv(p)
    np.testing.assert_array_equal(back.chi, merton_curve.chi)
    assert back.meta["declared_certified"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = rate_function_table(back, [-0.01, 0.0, 0.02, 0.08])
    q = tmp_path / "rate.csv"
    write_rate_csv(q, res)
    rows = read_rate_csv(q)
    assert [r.branch for r in rows] == [r.branch for r in res]
    assert rows[0].I == np.inf


def test_pde_curve_lgq(lgq, grid):
    g = np.linspace(-4.0, -0.1, 8)
    c = build_chi_curve(lgq, g, grid)
    ref = oracle_chi_curve(lgq, g)
    assert c.convexity_certified
    np.testing.assert_allclose(c.chi, ref.chi, rtol=1e-5)
    np.testing.assert_allclose(c.chi_prime, ref.chi_prime, rtol=1e-4)
