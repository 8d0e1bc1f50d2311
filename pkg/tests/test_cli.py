import json

import numpy as np
import pytest

from ldrisk import oracle
from ldrisk.cli import main
from ldrisk.duality import ChiCurve, read_rate_csv


def run(tmp_path, *argv):
    return main(["--out-dir", str(tmp_path), *argv])


def test_check_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "check", "lgq") == 0
    rep = json.loads((tmp_path / "check.json").read_text())
    assert rep["all_ok"]
    assert run(tmp_path, "check", "merton") == 1
    assert "coercivity" in capsys.readouterr().out
    manifest = json.loads((tmp_path / "check.manifest.json").read_text())
    assert manifest["exit_code"] == 1 and "check.json" in manifest["hashes"]


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 1,\n}')
    assert run(tmp_path, "check", str(bad)) == 2
    assert "line 2" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert run(tmp_path, "nonsense") == 2
    assert run(tmp_path, "chi", "lgq", "--points", "1") == 2
    assert main(["--threads", "0", "--out-dir", str(tmp_path), "check", "lgq"]) == 2


def test_chi_rate_pipeline(tmp_path):
    assert run(tmp_path, "chi", "lgq", "--gamma-min", "-4", "--gamma-max", "-0.1", "--points", "8") == 0
    curve = ChiCurve.from_csv(tmp_path / "chi.csv")
    assert curve.convexity_certified and curve.source == "pde"
    assert (tmp_path / "plot_chi.py").exists()
    assert run(tmp_path, "rate", "--chi", str(tmp_path / "chi.csv"), "--kappa=-0.01,0.02,0.5") == 0
    rows = read_rate_csv(tmp_path / "rate.csv")
    assert [str(r.branch) for r in rows] == ["kappa_negative", "interior",
                                            "kappa_at_or_above_chi_prime_limit"]


def test_chi_merton_refused_without_oracle(tmp_path):
    assert run(tmp_path, "chi", "merton", "--points", "4") == 1
    assert run(tmp_path, "chi", "merton", "--force-oracle", "--points", "50",
               "--gamma-min", "-10") == 0
    curve = ChiCurve.from_csv(tmp_path / "chi.csv")
    assert curve.source == "oracle"


def test_rate_refuses_uncertified(tmp_path):
    p = tmp_path / "chi.csv"
    ChiCurve(np.array([-3.0, -2.0, -1.0]), np.array([-0.1, -0.02, -0.05]),
             np.array([0.01, 0.02, 0.03]), source="external-csv").to_csv(p)
    assert run(tmp_path, "rate", "--chi", str(p)) == 1


def test_simulate_zero(tmp_path):
    assert run(tmp_path, "simulate", "merton", "--strategy", "zero", "--kappa", "0.01",
               "--T", "1,2", "--paths", "500") == 0
    lines = (tmp_path / "sim.csv").read_text().splitlines()
    data = [l for l in lines if not l.startswith("#")][1:]
    assert [l.split(",")[2] for l in data] == ["1.0", "1.0"]
    assert (tmp_path / "slope.csv").exists()


def test_validate_missing_fixture(tmp_path):
    assert run(tmp_path, "validate", "--fixtures", str(tmp_path / "nowhere")) == 2


def test_validate_detects_broken_oracle(tmp_path, monkeypatch, capsys):
    real = oracle._lgq_solve

    def broken(c, gamma):
        p, q, chi, disc = real(c, gamma)
        return p * (1 + 1e-3), q, chi, disc

    monkeypatch.setattr(oracle, "_lgq_solve", broken)
    assert run(tmp_path, "validate") == 1
    out = capsys.readouterr().out
    assert "FAIL lgq_riccati residual" in out
