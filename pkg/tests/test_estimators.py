import numpy as np
import pytest
from sklearn.base import clone

from ldrisk import ConfigurationError
from ldrisk.checks import check_gammas, parse_float_list, resolve_model
from ldrisk.estimators import ChiCurveEstimator, DownsideProbability, ErgodicHJB, RateFunction
from ldrisk.oracle import lgq_riccati


def test_get_params_and_clone():
    est = ErgodicHJB(model="lgq", half_width=6.0, num=101)
    assert est.get_params()["num"] == 101
    c = clone(est).set_params(num=121)
    assert c.num == 121 and est.num == 101


def test_ergodic_hjb(lgq):
    est = ErgodicHJB(model="lgq", half_width=6.0).fit([-1.0, -0.5])
    ref = lgq_riccati(lgq, -1.0)
    assert est.predict([-1.0])[0] == pytest.approx(ref.chi, rel=1e-5)
    out = est.transform([-1.0])
    assert out.shape == (1, 2)
    assert out[0, 1] == pytest.approx(ref.chi_prime, rel=1e-4)
    with pytest.raises(ValueError):
        est.transform([-2.0])


def test_chi_and_rate_pipeline():
    curve = ChiCurveEstimator(model="merton", half_width=6.0, use_poisson_derivative=False)
    with pytest.raises(Exception):
        curve.fit(np.linspace(-4, -0.1, 6))       # Merton fails coercivity
    est = ChiCurveEstimator(model="lgq", half_width=6.0).fit(np.linspace(-4, -0.1, 8))
    rf = RateFunction().fit(est.curve_)
    out = rf.transform([0.02, -0.01])
    assert out.shape == (2, 3)
    assert out[1, 0] == np.inf
    arr = np.column_stack([est.curve_.gammas, est.curve_.chi, est.curve_.chi_prime])
    np.testing.assert_allclose(RateFunction().fit(arr).transform([0.02]), out[:1])


def test_downside_probability():
    dp = DownsideProbability(model="merton", strategy="zero", n_paths=200).fit([1.0, 2.0])
    p = dp.predict([0.0, -0.5])
    np.testing.assert_array_equal(p, [[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        DownsideProbability(strategy="bogus").fit([1.0])


def test_checks(tmp_path, lgq):
    assert resolve_model("lgq").n == 1
    assert resolve_model(lgq) is lgq
    assert resolve_model(lgq.to_dict()).m == 1
    with pytest.raises(ConfigurationError):
        resolve_model(3.0)
    with pytest.raises(ConfigurationError):
        check_gammas([0.5])
    assert parse_float_list("1, 2,3") == [1.0, 2.0, 3.0]
    with pytest.raises(ConfigurationError):
        parse_float_list("a,b")
