import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldrisk import ConfigurationError
from ldrisk.grid import Grid, ScalarField, VectorField, markov_generator


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        Grid((0.0,), (0.0,), (50,))
    with pytest.raises(ConfigurationError):
        Grid((0.0,), (1.0,), (4,))
    with pytest.raises(ConfigurationError):
        Grid((0,) * 3, (1,) * 3, (20,) * 3)


def test_integrate_and_gradient():
    g = Grid.box(3.0, 1, 301)
    f = ScalarField(g, g.points[:, 0] ** 2)
    assert g.integrate(np.ones(g.size)) == pytest.approx(6.0)
    np.testing.assert_allclose(f.gradient()[50:-50, 0], 2 * g.points[50:-50, 0], atol=1e-10)


def test_generator_rows_sum_to_zero():
    g = Grid.box(2.0, 2, 21)
    a = np.broadcast_to(np.eye(2), (g.size, 2, 2))
    Q = markov_generator(g, a, -g.points)
    np.testing.assert_allclose(np.asarray(Q.sum(axis=1)).ravel(), 0.0, atol=1e-10)
    assert (Q - __import__("scipy.sparse").sparse.diags(Q.diagonal())).min() >= 0


@settings(max_examples=40, deadline=None)
@given(st.floats(-10, 10), st.floats(-3, 3))
def test_vector_field_interp_linear(x, slope):
    # linear data is reproduced exactly inside and clamped outside
    g = Grid.box(4.0, 1, 41)
    v = VectorField(g, slope * g.points, np.zeros(g.size, bool))
    got = v(np.array([[x]]))[0][0, 0]
    assert got == pytest.approx(slope * np.clip(x, -4, 4), abs=1e-9)


def test_scalar_field_json(tmp_path):
    g = Grid.box(1.0, 1, 20)
    f = ScalarField(g, np.arange(g.size, dtype=float))
    f.to_json(tmp_path / "f.json")
    back = ScalarField.from_json(tmp_path / "f.json")
    np.testing.assert_array_equal(back.values, f.values)
