"""Acceptance criteria 1-12 at their stated tolerances.

Each test prints one ``[PASS]`` / ``[FAIL]`` line.  Criteria 8 and 10 run
1e5-path Monte Carlo and take a few minutes.
"""
import pytest

from ldrisk.acceptance import Models, run_criterion
from ldrisk.oracle import self_verify


@pytest.fixture(scope="module")
def models():
    assert all(c.ok for c in self_verify()), "oracle self-checks must pass before any criterion"
    return Models.load()


@pytest.fixture(scope="module")
def cache():
    return {}


def _check(k, models, cache, capsys):
    r = run_criterion(k, models, cache)
    with capsys.disabled():
        print("\n" + r.line())
    assert r.passed, r.line()


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 6, 7, 9, 11, 12])
def test_criterion(k, models, cache, capsys):
    _check(k, models, cache, capsys)


@pytest.mark.slow
@pytest.mark.parametrize("k", [8, 10])
def test_criterion_monte_carlo(k, models, cache, capsys):
    _check(k, models, cache, capsys)
