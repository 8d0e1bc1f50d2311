"""Closed-form and ODE reference solutions.

* constant coefficients: ``w`` is constant and ``chi = -U_gamma``;
* one factor, one asset, affine drifts and constant volatilities: quadratic
  ``w(x) = p x^2 / 2 + q x`` with ``p`` from a scalar algebraic Riccati equation;
* a quadratic lower bound ``vbar(t, x; T) >= x^* P(t) x / 2 + q(t)`` built from
  the fitted model constants.

Every oracle can re-check itself by substitution (:func:`self_verify`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .duality import RateResult, Branch
from .exceptions import ConfigurationError
from .model import ModelSpec, check_assumptions, derived_gamma

# complex-step increment for chi'(gamma)
_CSTEP = 1e-30


# -- constant coefficients -----------------------------------------------------

@dataclass(frozen=True)
class MertonOracle:
    """Constant-coefficient model characterised by ``theta^2 = alpha_hat^*(sigma sigma^*)^{-1} alpha_hat``."""

    theta_sq: float

    def __post_init__(self):
        if not self.theta_sq > 0:
            raise ConfigurationError("theta_sq must be positive")

    def chi(self, gamma):
        return merton_chi(self.theta_sq, gamma)[0]

    def chi_prime(self, gamma):
        return merton_chi(self.theta_sq, gamma)[1]

    def rate(self, kappa):
        return merton_rate(self.theta_sq, kappa)

    @classmethod
    def from_spec(cls, spec: ModelSpec):
        """Read ``theta^2`` off a model whose market coefficients are constant."""
        if not all(f.kind == "constant" for f in (spec.r, spec.alpha, spec.sigma)):
            raise ConfigurationError("model does not have constant market coefficients")
        d = derived_gamma(spec, np.zeros(spec.n), 0.0)
        return cls(float(np.ravel(d.theta_sq)[0]))


def merton_chi(theta_sq: float, gamma):
    """``(chi, chi')`` for constant coefficients: ``g th^2 / (2(1-g))`` and ``th^2 / (2(1-g)^2)``."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g >= 1):
        raise ConfigurationError("gamma must be < 1")
    chi = g * theta_sq / (2.0 * (1.0 - g))
    dchi = theta_sq / (2.0 * (1.0 - g) ** 2)
    if chi.ndim == 0:
        return float(chi), float(dchi)
    return chi, dchi


def merton_rate(theta_sq: float, kappa: float) -> RateResult:
    """Closed-form Legendre transform of :func:`merton_chi` over ``gamma < 0``.

    ``gamma* = 1 - theta / sqrt(2 kappa)``, ``I = (sqrt(kappa) - theta / sqrt 2)^2``.
    """
    kappa = float(kappa)
    theta = np.sqrt(theta_sq)
    limit = theta_sq / 2.0
    if kappa < 0:
        return RateResult(kappa, np.inf, -np.inf, np.nan, Branch.KAPPA_NEGATIVE)
    if kappa >= limit:
        return RateResult(kappa, 0.0, 0.0, np.nan, Branch.ABOVE_LIMIT, flags=("out_of_range",))
    if kappa == 0:
        # limit of the interior formula; gamma* escapes to -infinity
        return RateResult(0.0, limit, -limit, -np.inf, Branch.INTERIOR, flags=("kappa_zero_boundary",))
    I = (np.sqrt(kappa) - theta / np.sqrt(2.0)) ** 2
    return RateResult(kappa, float(I), float(-I), float(1.0 - theta / np.sqrt(2.0 * kappa)),
                      Branch.INTERIOR)


# -- one-factor linear-Gaussian ------------------------------------------------

@dataclass(frozen=True)
class _LGQConstants:
    A: float
    a: float        # alpha offset minus r
    B: float
    b: float
    S: float        # sigma . sigma
    ll: float       # lambda . lambda
    ls: float       # lambda . sigma


def _lgq_constants(spec: ModelSpec) -> _LGQConstants:
    if spec.n != 1 or spec.m != 1:
        raise ConfigurationError("the Riccati oracle needs n = m = 1")
    if not all(f.kind == "constant" for f in (spec.r, spec.sigma, spec.lam)):
        raise ConfigurationError("the Riccati oracle needs constant r, sigma, lambda")
    if spec.alpha.kind not in ("affine", "constant") or spec.beta.kind not in ("affine", "constant"):
        raise ConfigurationError("the Riccati oracle needs affine alpha and beta")

    def split(f):
        if f.kind == "constant":
            return 0.0, float(np.ravel(f.offset)[0])
        return float(np.ravel(f.linear)[0]), float(np.ravel(f.offset)[0])

    A, a = split(spec.alpha)
    B, b = split(spec.beta)
    r = float(np.ravel(spec.r.offset)[0])
    s = np.ravel(spec.sigma.offset)
    l = np.ravel(spec.lam.offset)
    if A == 0:
        raise ConfigurationError("alpha must depend on x (A != 0) for a coercive quadratic solution")
    return _LGQConstants(A, a - r, B, b, float(s @ s), float(l @ l), float(l @ s))


def _lgq_solve(c: _LGQConstants, gamma):
    """Match powers of x in the ergodic equation; works for complex ``gamma``."""
    k = gamma / (1.0 - gamma)
    Qc = c.ll + k * c.ls ** 2 / c.S
    kap = k * c.ls / c.S
    B1, b1 = c.B + kap * c.A, c.b + kap * c.a
    u0 = -gamma / (2.0 * (1.0 - gamma) * c.S)
    disc = B1 * B1 + 2.0 * Qc * u0 * c.A ** 2
    # root with B1 + Qc p = -sqrt(disc) < 0: the optimally controlled factor mean-reverts
    p = (-B1 - np.sqrt(disc)) / Qc
    q = (2.0 * u0 * c.A * c.a - b1 * p) / (B1 + Qc * p)
    chi = 0.5 * c.ll * p + b1 * q + 0.5 * Qc * q * q - u0 * c.a ** 2
    return p, q, chi, disc


@dataclass
class LGQSolution:
    gamma: float
    p: float
    q: float
    chi: float
    chi_prime: float
    p_prime: float
    residual: float

    def w(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.p * x * x + self.q * x


def lgq_riccati(spec: ModelSpec, gamma: float, check: bool = True) -> LGQSolution:
    """Quadratic solution ``w = p x^2/2 + q x`` of the one-factor ergodic equation.

    ``chi'`` and ``p'`` are obtained by complex-step differentiation in gamma.
    With ``check`` the equation is re-evaluated at 100 random points and the
    maximum residual is stored.
    """
    if not gamma < 1:
        raise ConfigurationError("gamma must be < 1")
    c = _lgq_constants(spec)
    p, q, chi, disc = _lgq_solve(c, float(gamma))
    if not disc > 0 or not p < 0:
        raise ConfigurationError(
            f"model is outside the oracle class at gamma={gamma}: discriminant {disc:.3g}, p={p:.3g}")
    pc, _, chic, _ = _lgq_solve(c, complex(gamma, _CSTEP))
    sol = LGQSolution(float(gamma), float(p), float(q), float(chi),
                      chi_prime=float(chic.imag / _CSTEP), p_prime=float(pc.imag / _CSTEP),
                      residual=float("nan"))
    if check:
        sol.residual = lgq_residual(spec, sol)
    return sol


def lgq_residual(spec: ModelSpec, sol: LGQSolution, n_points: int = 100, seed: int = 0) -> float:
    """Max |chi - (0.5 a w'' + beta_g w' + 0.5 Q w'^2 - U_g)| at random points in [-3, 3]."""
    x = np.random.default_rng(seed).uniform(-3.0, 3.0, size=(n_points, 1))
    d = derived_gamma(spec, x, sol.gamma)
    wx = sol.p * x[:, 0] + sol.q
    rhs = (0.5 * d.a[:, 0, 0] * sol.p + d.beta_gamma[:, 0] * wx
           + 0.5 * d.Q[:, 0, 0] * wx * wx - d.U_gamma)
    return float(np.max(np.abs(sol.chi - rhs)))


def lgq_p_prime_implicit(p: float, gamma: float) -> float:
    """``p'`` from implicit differentiation of ``p^2 + 2(2g-1)p + g = 0`` (reference LGQ model)."""
    return -(4.0 * p + 1.0) / (2.0 * p + 2.0 * (2.0 * gamma - 1.0))


# -- quadratic lower bound for the finite-horizon value --------------------------

@dataclass
class RiccatiPair:
    """``P(t)`` (n x n) and ``q(t)`` on a time grid, with the constants used."""

    times: np.ndarray
    P: np.ndarray
    q: np.ndarray
    constants: dict = field(default_factory=dict)

    def _interp(self, t, arr):
        t = float(t)
        return np.array([np.interp(t, self.times, arr[:, i]) for i in range(arr.shape[1])])

    def P_at(self, t):
        n = self.P.shape[1]
        return self._interp(t, self.P.reshape(len(self.times), -1)).reshape(n, n)

    def q_at(self, t):
        return float(np.interp(float(t), self.times, self.q))

    def lower_bound(self, t, x):
        """``x^* P(t) x / 2 + q(t)`` at points ``x`` of shape (N, n) or (N,)."""
        P = self.P_at(t)
        x = np.asarray(x, dtype=float).reshape(-1, P.shape[0])
        return 0.5 * np.einsum("ni,ij,nj->n", x, P, x) + self.q_at(t)


def solve_riccati_pair(b: float, k: float, T: float, n: int = 1, c1: float = 0.0,
                       drift_const: float = 0.0, q_terminal: float = 0.0,
                       num: int = 201) -> RiccatiPair:
    """Integrate ``P' = k P P - b I`` and ``q' = -(c1/2) tr P + drift_const`` backward from ``P(T)=0``.

    ``drift_const`` collects ``c c_beta / 2 + c_gamma'``.  Adaptive RK45 in the
    reversed time ``s = T - t``.
    """
    if T <= 0:
        raise ConfigurationError("T must be positive")
    nn = n * n

    def rhs(s, y):
        P = y[:nn].reshape(n, n)
        dP = -(k * P @ P - b * np.eye(n))            # d/ds = -d/dt
        dq = (c1 / 2.0) * np.trace(P) - drift_const
        return np.concatenate([dP.ravel(), [dq]])

    y0 = np.concatenate([np.zeros(nn), [q_terminal]])
    s_eval = np.linspace(0.0, T, num)
    sol = solve_ivp(rhs, (0.0, T), y0, t_eval=s_eval, method="RK45", rtol=1e-11, atol=1e-13)
    if not sol.success:
        raise RuntimeError(f"Riccati integration failed: {sol.message}")
    times = T - s_eval[::-1]
    Y = sol.y[:, ::-1]
    P = Y[:nn].T.reshape(-1, n, n)
    P = 0.5 * (P + np.swapaxes(P, 1, 2))
    P[-1] = 0.0                                       # terminal data exactly
    q = Y[nn].copy()
    q[-1] = q_terminal
    return RiccatiPair(times, P, q, {"b": b, "k": k, "c1": c1, "drift_const": drift_const,
                                     "q_terminal": q_terminal, "n": n})


def riccati_closed_form(b: float, k: float, tau):
    """Scalar ``P`` at time-to-go ``tau``: ``sqrt(b/k) tanh(sqrt(b k) tau)``."""
    return np.sqrt(b / k) * np.tanh(np.sqrt(b * k) * np.asarray(tau, dtype=float))


def riccati_bound(spec: ModelSpec, gamma: float, T: float, c: Optional[float] = None,
                  report=None, box: float = 10.0, num: int = 201) -> RiccatiPair:
    """Quadratic lower bound for ``vbar(t, x; T)`` from the fitted model constants.

    ``b = c_g - c c_beta / 2`` with ``c_g = -g c0 / (2(1-g))``; ``c`` defaults to
    the midpoint of the admissible interval ``(0, 2 c_g / c_beta)``.
    """
    if not gamma < 0:
        raise ConfigurationError("gamma must be negative")
    if report is None:
        report = check_assumptions(spec, box=box)
    if not report.coercive_ok:
        raise ConfigurationError("coercivity fails; no quadratic lower bound is available")
    c0, c0p, c1, c2 = report.c0, report.c0_prime, report.c1, report.c2
    X = report.samples
    bg = derived_gamma(spec, X, gamma).beta_gamma
    c_beta = float(np.max(np.sum(bg ** 2, axis=1) / (np.sum(X ** 2, axis=1) + 1.0)))
    c_g = -gamma * c0 / (2.0 * (1.0 - gamma))
    c_gp = -gamma * c0p / (2.0 * (1.0 - gamma))
    c_hi = 2.0 * c_g / c_beta if c_beta > 0 else np.inf
    if c is None:
        c = 0.5 * c_hi if np.isfinite(c_hi) else 1.0
    b = c_g - 0.5 * c * c_beta
    if not (c > 0 and b > 0):
        raise ConfigurationError(f"invalid constant c={c}: b={b:.4g} <= 0; choose c in (0, {c_hi:.6g})")
    k = c2 / (1.0 - gamma) + 1.0 / c
    q_T = -gamma * np.log(spec.v0)
    pair = solve_riccati_pair(b, k, T, spec.n, c1=c1, drift_const=0.5 * c * c_beta + c_gp,
                              q_terminal=q_T, num=num)
    pair.constants.update({"c": c, "c_beta": c_beta, "c_gamma": c_g, "c_gamma_prime": c_gp,
                           "c0": c0, "c0_prime": c0p, "c2": c2, "gamma": gamma, "T": T})
    return pair


# -- self verification ----------------------------------------------------------

@dataclass
class OracleCheck:
    name: str
    ok: bool
    value: float
    tol: float

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.value:.3e} (tol {self.tol:.1e})"


def self_verify() -> list:
    """Substitution checks for every oracle; run before oracle-based comparisons."""
    from .reference import lgq_model

    out = []
    spec = lgq_model()
    worst = 0.0
    for g in (-4.0, -2.0, -1.0, -0.5, -0.25, -0.1):
        worst = max(worst, lgq_residual(spec, lgq_riccati(spec, g, check=False)))
    out.append(OracleCheck("lgq_riccati residual", worst <= 1e-12, worst, 1e-12))

    sol = lgq_riccati(spec, -1.0, check=False)
    gap = abs(sol.p_prime - lgq_p_prime_implicit(sol.p, -1.0))
    out.append(OracleCheck("lgq_riccati derivative", gap <= 1e-10, gap, 1e-10))

    g = np.linspace(-10.0, -0.01, 400)
    chi, _ = merton_chi(0.09, g)
    d2 = np.min(chi[2:] - 2 * chi[1:-1] + chi[:-2])
    out.append(OracleCheck("merton_chi convexity", d2 >= 0, -min(d2, 0.0), 0.0))

    # stationarity of gamma kappa - chi(gamma) at gamma*
    worst = 0.0
    for kap in (0.005, 0.02, 0.04):
        r = merton_rate(0.09, kap)
        worst = max(worst, abs(merton_chi(0.09, r.gamma_star)[1] - kap),
                    abs(r.gamma_star * kap - merton_chi(0.09, r.gamma_star)[0] - r.I))
    out.append(OracleCheck("merton_rate stationarity", worst <= 1e-12, worst, 1e-12))

    pair = solve_riccati_pair(0.1, 1.0, 1.0)
    gap = float(np.max(np.abs(pair.P[:, 0, 0] - riccati_closed_form(0.1, 1.0, 1.0 - pair.times))))
    out.append(OracleCheck("riccati_bound closed form", gap <= 1e-8, gap, 1e-8))
    return out


def oracle_chi_curve(spec: ModelSpec, gammas):
    """chi curve straight from a closed form: constant coefficients or the one-factor Riccati case."""
    from .duality import ChiCurve

    gammas = np.asarray(sorted(gammas), dtype=float)
    try:
        orc = MertonOracle.from_spec(spec)
    except ConfigurationError:
        orc = None
    if orc is not None and spec.beta.kind == "constant" and spec.lam.kind == "constant":
        chi, dchi = merton_chi(orc.theta_sq, gammas)
    else:
        sols = [lgq_riccati(spec, g) for g in gammas]
        chi = np.array([s.chi for s in sols])
        dchi = np.array([s.chi_prime for s in sols])
    return ChiCurve(gammas, chi, dchi, source="oracle")
