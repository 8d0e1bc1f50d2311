"""Acceptance criteria on the two reference models.

Each criterion returns a :class:`CriterionResult`; :func:`run_suite` runs the
oracle self-checks first and then the criteria of a suite.
"""
from __future__ import annotations

import contextlib
import io
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .duality import build_chi_curve, double_legendre_error, legendre
from .ergodic import chi_prime, chi_prime_fd_check, chi_zero, invariant_measure
from .grid import Grid
from .hjb import extract_ergodic, solve_finite_horizon
from .montecarlo import SimConfig, Strategy, estimate_downside, ld_slope, simulate_paths, \
    tilted_vs_plain_check
from .oracle import lgq_riccati, oracle_chi_curve, riccati_bound, self_verify
from .reference import lgq_model, merton_model

log = logging.getLogger(__name__)

GRID = Grid.box(6.0, 1, 201)
GAMMAS_2 = (-4.0, -2.0, -1.0, -0.5, -0.25, -0.1)
GAMMAS_20 = tuple(np.linspace(-4.0, -0.1, 20))
KAPPA = 0.02
LADDER = (25.0, 50.0, 100.0)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail} ({self.runtime:.1f}s)"


@dataclass
class Models:
    lgq: object
    merton: object

    @classmethod
    def load(cls, fixtures: Optional[str] = None):
        """Reference models, or ``lgq.json`` / ``merton.json`` from ``fixtures``."""
        if fixtures is None:
            return cls(lgq_model(), merton_model())
        from .model import load_model
        return cls(load_model(os.path.join(fixtures, "lgq.json")),
                   load_model(os.path.join(fixtures, "merton.json")))


def _timed(number, name, fn):
    t0 = time.perf_counter()
    passed, detail, values = fn()
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0, values)


def c1_merton_chi(ms: Models):
    def run():
        t0 = time.perf_counter()
        sol = extract_ergodic(ms.merton, -0.5, GRID)
        dt = time.perf_counter() - t0
        osc = float(np.ptp(sol.w.flat))
        err = abs(sol.chi + 0.015)
        ok = err <= 1e-4 and osc <= 1e-4 and dt < 10
        return ok, f"chi(-0.5)={sol.chi:.8f} |err|={err:.2e} w-osc={osc:.2e} solve={dt:.2f}s", \
            {"chi": sol.chi, "err": err, "osc": osc}
    return _timed(1, "Merton chi by PDE", run)


def c2_lgq_chi(ms: Models):
    def run():
        t0 = time.perf_counter()
        worst = 0.0
        for g in GAMMAS_2:
            chi = extract_ergodic(ms.lgq, g, GRID).chi
            ref = lgq_riccati(ms.lgq, g).chi
            worst = max(worst, abs(chi - ref) / abs(ref))
        dt = time.perf_counter() - t0
        return worst <= 1e-3 and dt < 120, f"max rel err {worst:.2e} over {len(GAMMAS_2)} gammas", \
            {"max_rel_err": worst}
    return _timed(2, "LGQ chi vs Riccati oracle", run)


def c3_chi_prime(ms: Models):
    def run():
        sol = extract_ergodic(ms.lgq, -1.0, GRID)
        m = invariant_measure(ms.lgq, -1.0, sol.w)
        theta = chi_prime(ms.lgq, -1.0, sol.w, m).theta
        fd = chi_prime_fd_check(ms.lgq, -1.0, 0.05, GRID)
        ref = lgq_riccati(ms.lgq, -1.0).chi_prime
        ok = abs(theta - fd) <= 1e-3 and abs(theta - 0.027740) <= 1e-3 and abs(theta - ref) <= 1e-3
        return ok, f"theta={theta:.6f} fd={fd:.6f} oracle={ref:.6f}", \
            {"theta": theta, "fd": fd, "oracle": ref}
    return _timed(3, "chi' Poisson route vs finite difference and oracle", run)


def _curves(ms: Models, cache: dict):
    if "lgq" not in cache:
        cache["lgq"] = build_chi_curve(ms.lgq, GAMMAS_20, GRID)
        cache["merton"] = build_chi_curve(ms.merton, GAMMAS_20, GRID, use_poisson_derivative=False,
                                          require_assumptions=False)
    return cache["lgq"], cache["merton"]


def c4_convexity(ms: Models, cache: dict):
    def run():
        lg, me = _curves(ms, cache)
        d_l, d_m = float(lg.second_differences().min()), float(me.second_differences().min())
        return min(d_l, d_m) >= -1e-6, f"min second difference LGQ {d_l:.3e}, Merton {d_m:.3e}", \
            {"lgq": d_l, "merton": d_m}
    return _timed(4, "convexity of chi on 20 gammas", run)


def c5_bounds(ms: Models, cache: dict):
    def run():
        lg, _ = _curves(ms, cache)
        c0 = chi_zero(ms.lgq, GRID)
        lo, hi = float(lg.chi.min()), float(lg.chi.max())
        ok = lo >= -c0 - 1e-3 and hi <= 1e-6
        return ok, f"chi in [{lo:.6f}, {hi:.6f}], -chi0={-c0:.6f}", {"chi0": c0}
    return _timed(5, "bounds -chi0 <= chi <= 0", run)


def c6_asymptote(ms: Models):
    def run():
        th = {}
        for g in (-1.0, -50.0):
            sol = extract_ergodic(ms.lgq, g, GRID)
            th[g] = chi_prime(ms.lgq, g, sol.w, invariant_measure(ms.lgq, g, sol.w)).theta
        ratio = th[-50.0] / th[-1.0]
        return ratio <= 0.05, f"chi'(-50)/chi'(-1) = {ratio:.4f}", {"ratio": ratio}
    return _timed(6, "chi' vanishes as gamma -> -inf", run)


def c7_duality(ms: Models):
    def run():
        curve = oracle_chi_curve(ms.merton, np.linspace(-10.0, -0.02, 400))
        r = legendre(curve, KAPPA)
        err = double_legendre_error(curve)
        ok = abs(r.gamma_star + 0.5) <= 1e-4 and abs(r.J + 0.005) <= 1e-5 and err <= 1e-4
        return ok, f"gamma*={r.gamma_star:.7f} J={r.J:.8f} double-transform err={err:.2e}", \
            {"gamma_star": r.gamma_star, "J": r.J, "err": err}
    return _timed(7, "Legendre round trip on Merton", run)


def _merton_gamma_star(ms: Models):
    curve = oracle_chi_curve(ms.merton, np.linspace(-10.0, -0.02, 400))
    r = legendre(curve, KAPPA)
    return r.gamma_star, r.J


def c8_ld_slope(ms: Models, n_paths=100_000, seed=7, threads=1):
    def run():
        g, J = _merton_gamma_star(ms)
        w = extract_ergodic(ms.merton, g, GRID).w
        strat = Strategy.stationary(ms.merton, g, w)
        t0 = time.perf_counter()
        rep = ld_slope(ms.merton, strat, KAPPA, LADDER,
                       SimConfig(T=LADDER[0], n_paths=n_paths, seed=seed, threads=threads), J)
        dt = time.perf_counter() - t0
        ok = -0.0075 <= rep.slope <= -0.0025 and dt < 180
        ps = ", ".join(f"{math.exp(v):.4f}" for v in rep.log_p)
        return ok, f"slope={rep.slope:.5f} +- {rep.stderr:.5f} (J={J:.4f}) p_hat=[{ps}] mc={dt:.0f}s", \
            {"slope": rep.slope, "stderr": rep.stderr, "J": J, "p_hat": [math.exp(v) for v in rep.log_p]}
    return _timed(8, "large-deviation slope on Merton", run)


def c9_riccati_bound(ms: Models):
    def run():
        gamma, T = -1.0, 5.0
        surf = solve_finite_horizon(ms.lgq, gamma, GRID, T, steps=200)
        pair = riccati_bound(ms.lgq, gamma, T)
        inner = ~GRID.boundary_mask()
        x = GRID.points[inner]
        worst = np.inf
        for k, t in enumerate(surf.times):
            slack = surf.values[k].ravel()[inner] - pair.lower_bound(t, x)
            worst = min(worst, float(slack.min()))
        tol = -5.0 * GRID.spacing[0] ** 2
        return worst >= tol, f"min slack {worst:.3e} (tolerance {tol:.1e}), P(0)={pair.P[0, 0, 0]:.4f}", \
            {"min_slack": worst}
    return _timed(9, "quadratic lower bound for the finite-horizon value", run)


def c10_importance_sampling(ms: Models, n_paths=100_000, seed=11, threads=1):
    def run():
        g, _ = _merton_gamma_star(ms)
        w = extract_ergodic(ms.merton, g, GRID).w
        strat = Strategy.stationary(ms.merton, g, w)
        rep = tilted_vs_plain_check(ms.merton, strat, KAPPA,
                                    SimConfig(T=50.0, n_paths=n_paths, seed=seed, threads=threads), g, w)
        return rep.ok, (f"plain {rep.plain.p_hat:.4f}+-{rep.plain.half_width:.4f} tilted "
                        f"{rep.tilted.p_hat:.4f}+-{rep.tilted.half_width:.4f} mean weight "
                        f"{rep.mean_weight:.4f}+-{rep.weight_se:.4f}"), \
            {"plain": rep.plain.p_hat, "tilted": rep.tilted.p_hat, "mean_weight": rep.mean_weight}
    return _timed(10, "importance sampling unbiasedness", run)


def c11_benchmark(ms: Models):
    def run():
        bad = []
        for T in (1.0, 10.0, 50.0):
            res = simulate_paths(ms.merton, Strategy.zero(), SimConfig(T=T, n_paths=1000, seed=1))
            up, dn = estimate_downside(res, 0.01).p_hat, estimate_downside(res, -0.01).p_hat
            if up != 1.0 or dn != 0.0:
                bad.append(T)
        return not bad, "p_hat exactly 1 / 0 at T = 1, 10, 50" if not bad else f"failed at T={bad}", {}
    return _timed(11, "zero benchmark exactness", run)


def c12_determinism(ms: Models, n_paths=40_000):
    def run():
        from .cli import main
        digests = {}
        with tempfile.TemporaryDirectory() as tmp:
            for th in (1, 4, 8):
                out = os.path.join(tmp, f"t{th}")
                with contextlib.redirect_stdout(io.StringIO()):
                    code = main(["--threads", str(th), "--out-dir", out, "simulate", "merton",
                                 "--strategy", "stationary", "--gamma", "-0.5", "--kappa", "0.02",
                                 "--T", "5,10", "--paths", str(n_paths), "--seed", "7"])
                if code != 0:
                    return False, f"simulate exited {code} with {th} threads", {}
                digests[th] = tuple(open(os.path.join(out, f), "rb").read()
                                    for f in ("sim.csv", "slope.csv"))
        same = len(set(digests.values())) == 1
        return same, "sim.csv and slope.csv identical under 1, 4, 8 threads" if same \
            else "outputs differ across thread counts", {}
    return _timed(12, "determinism across thread counts", run)


FAST = (1, 2, 3, 4, 5, 6, 7, 9, 11, 12)
FULL = tuple(range(1, 13))


def run_criterion(k: int, ms: Models, cache: Optional[dict] = None, **mc) -> CriterionResult:
    cache = {} if cache is None else cache
    table: dict[int, Callable] = {
        1: lambda: c1_merton_chi(ms), 2: lambda: c2_lgq_chi(ms), 3: lambda: c3_chi_prime(ms),
        4: lambda: c4_convexity(ms, cache), 5: lambda: c5_bounds(ms, cache),
        6: lambda: c6_asymptote(ms), 7: lambda: c7_duality(ms), 8: lambda: c8_ld_slope(ms, **mc),
        9: lambda: c9_riccati_bound(ms), 10: lambda: c10_importance_sampling(ms, **mc),
        11: lambda: c11_benchmark(ms), 12: lambda: c12_determinism(ms),
    }
    return table[k]()


def run_suite(suite: str = "fast", fixtures: Optional[str] = None, report=print, threads: int = 1):
    """Oracle self-checks, then the suite's criteria.  Returns (oracle_checks, results)."""
    if suite not in ("fast", "full"):
        raise ValueError("suite must be 'fast' or 'full'")
    ms = Models.load(fixtures)
    checks = self_verify()
    for c in checks:
        report(c.line())
    if not all(c.ok for c in checks):
        return checks, []
    cache: dict = {}
    results = []
    for k in (FAST if suite == "fast" else FULL):
        mc = {"threads": threads} if k in (8, 10) else {}
        try:
            r = run_criterion(k, ms, cache, **mc)
        except Exception as exc:        # a crashing criterion is a failing criterion
            r = CriterionResult(k, f"criterion {k}", False, f"{type(exc).__name__}: {exc}")
        report(r.line())
        results.append(r)
    return checks, results
