import json

import numpy as np
import pytest

from ldrisk import ConfigurationError, check_assumptions, load_model
from ldrisk.model import (CoefficientField, ModelSpec, derived_gamma, dump_model,
                          eval_coefficients, loads_model, register_callback, spd_inverse)
from ldrisk.exceptions import NumericalDegeneracyError


def test_reference_shapes(lgq, merton):
    assert (lgq.n, lgq.m) == (1, 1)
    c = eval_coefficients(lgq, np.array([[0.5]]))
    assert c.sigma.shape == (1, 1, 2)
    assert c.lam.shape == (1, 1, 2)
    np.testing.assert_allclose(c.alpha, [[0.5]])
    np.testing.assert_allclose(c.beta, [[-0.5]])


def test_roundtrip(tmp_path, lgq):
    p = tmp_path / "m.json"
    dump_model(lgq, p)
    back = load_model(p)
    x = np.linspace(-2, 2, 7)[:, None]
    a, b = eval_coefficients(lgq, x), eval_coefficients(back, x)
    np.testing.assert_allclose(a.alpha, b.alpha)
    np.testing.assert_allclose(a.sigma, b.sigma)


def test_derived_lgq_values(lgq):
    g = -1.0
    d = derived_gamma(lgq, np.array([[1.0]]), g)
    # sigma = lambda = [1, 0]: N^-1 = I + g/(1-g) e1 e1^T
    np.testing.assert_allclose(d.N_inv[0], np.diag([0.5, 1.0]))
    np.testing.assert_allclose(d.Q[0], [[0.5]])
    np.testing.assert_allclose(d.U_gamma[0], -g * 1.0 / (2 * (1 - g)))
    np.testing.assert_allclose(d.beta_gamma[0], [-1.0 - 0.5])
    np.testing.assert_allclose(d.G[0], [-2.0])


def test_unknown_and_missing_keys():
    with pytest.raises(ConfigurationError, match="unknown"):
        ModelSpec.from_dict({"n": 1, "m": 1, "foo": 1})
    with pytest.raises(ConfigurationError, match="missing"):
        ModelSpec.from_dict({"n": 1, "m": 1})


def test_shape_mismatch(lgq):
    cfg = lgq.to_dict()
    cfg["sigma"] = {"type": "constant", "value": [[1.0, 0.0, 0.0]]}
    with pytest.raises(ConfigurationError, match="sigma"):
        ModelSpec.from_dict(cfg)


def test_v0_below_one(lgq):
    cfg = lgq.to_dict()
    cfg["v0"] = 0.5
    with pytest.raises(ConfigurationError):
        ModelSpec.from_dict(cfg)


def test_malformed_json():
    with pytest.raises(ConfigurationError, match="line"):
        loads_model('{"n": 1,\n}')


def test_callback_unregistered(lgq):
    cfg = lgq.to_dict()
    cfg["alpha"] = {"type": "callback", "name": "no_such_callback"}
    with pytest.raises(ConfigurationError):
        ModelSpec.from_dict(cfg)


def test_callback_field():
    register_callback("_test_const", lambda x: np.ones((len(x), 1)))
    f = CoefficientField.callback(lambda x: np.ones((len(x), 1)), (1,))
    assert f(np.zeros((3, 1)), 1).shape == (3, 1)


def test_spd_inverse_degenerate():
    with pytest.raises(NumericalDegeneracyError):
        spd_inverse(np.zeros((1, 1, 1)))


def test_assumptions(lgq, merton):
    rep = check_assumptions(lgq, samples=2000)
    assert rep.all_ok
    assert rep.c1 > 0 and rep.c0 > 0
    assert rep.default_half_width() >= 6.0
    json.dumps(rep.to_dict(), default=str)
    bad = check_assumptions(merton, samples=2000)
    assert not bad.coercive_ok
    assert "coercivity" in bad.summary()
