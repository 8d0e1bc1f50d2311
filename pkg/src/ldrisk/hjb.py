"""Finite-difference solvers for the risk-sensitive HJB equations.

All solvers work with the sign convention ``vbar = -v`` in which the
Hamiltonian is concave:

    finite horizon   d_t vbar + 0.5 tr[a D^2 vbar] + beta_g.D vbar - 0.5 Dvbar.Q Dvbar + U_g = 0
    discounted       eps v_eps = 0.5 tr[a D^2 v_eps] + beta_g.D v_eps - 0.5 Dv_eps.Q Dv_eps + U_g

with ``a = lambda lambda^*`` and ``Q = lambda N_g^{-1} lambda^*``.  The
quadratic term is handled by freezing the optimal control
``z = -N_g^{-1}(lambda^* D vbar - Sigma^* alpha_hat)``, which turns each
iteration into a linear equation with drift ``beta_g - Q D vbar`` and source
``U_g + 0.5 Dvbar.Q Dvbar``.  Iterating this to a fixed point is Newton's
method on the discrete equation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConfigurationError, ConvergenceError
from .grid import Grid, ScalarField, ValueSurface, VectorField, diffusion_operator, \
    drift_operator, gradient_operators
from .model import DerivedCoefficients, ModelSpec, derived_gamma

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
MAX_NEWTON = 60
DEFAULT_SCHEDULE = (0.08, 0.04, 0.02, 0.01)


def _check_setup(spec: ModelSpec, gamma, grid: Grid):
    if spec.n > 2:
        raise ConfigurationError("PDE solvers support n <= 2 factors only")
    if grid.dim != spec.n:
        raise ConfigurationError(f"grid dimension {grid.dim} does not match n={spec.n}")
    if not gamma < 0:
        raise ConfigurationError(f"gamma={gamma} must be negative")


def coefficients_on_grid(spec: ModelSpec, gamma, grid: Grid) -> DerivedCoefficients:
    return derived_gamma(spec, grid.points, gamma)


class _Problem:
    """Discrete operator pieces shared by the HJB solvers for one (spec, gamma, grid)."""

    def __init__(self, spec, gamma, grid):
        _check_setup(spec, gamma, grid)
        self.grid = grid
        self.d = coefficients_on_grid(spec, gamma, grid)
        self.A = diffusion_operator(grid, self.d.a)
        self.D1 = gradient_operators(grid)
        self.U = np.asarray(self.d.U_gamma, dtype=float).ravel()

    def grad(self, v):
        return np.stack([D @ v for D in self.D1], axis=1)

    def frozen(self, v):
        """Linear operator and source with the control frozen at ``v``."""
        g = self.grad(v)
        Qg = np.einsum("nij,nj->ni", self.d.Q, g)
        b = self.d.beta_gamma - Qg
        L = self.A + drift_operator(self.grid, b, self.d.a)
        src = self.U + 0.5 * np.einsum("ni,ni->n", g, Qg)
        return L.tocsr(), src

    def residual(self, v, eps, prev=None, dt=None):
        """Residual of the discrete equation (discounted if ``dt`` is None)."""
        L, src = self.frozen(v)
        r = L @ v + src - eps * v
        if dt is not None:
            r = r + (prev - v) / dt
        return r


def _newton(problem, v, eps, prev=None, dt=None, tol=NEWTON_TOL, max_iter=MAX_NEWTON):
    """Policy iteration on ``(eps + 1/dt) v - L_z v = src_z + prev/dt``."""
    N = problem.grid.size
    shift = eps + (0.0 if dt is None else 1.0 / dt)
    rhs_extra = 0.0 if dt is None else prev / dt
    eye = sp.identity(N, format="csr")
    for it in range(max_iter):
        L, src = problem.frozen(v)
        M = (shift * eye - L).tocsc()
        v = spla.spsolve(M, src + rhs_extra)
        r = problem.residual(v, eps, prev, dt)
        res = float(np.max(np.abs(r)))
        if res <= tol:
            return v, res, it + 1
    r = problem.residual(v, eps, prev, dt)
    worst = int(np.argmax(np.abs(r)))
    raise ConvergenceError(
        f"policy iteration did not converge in {max_iter} iterations; "
        f"worst node x={problem.grid.points[worst].tolist()}, residual {abs(r[worst]):.3e}")


def solve_discounted(spec: ModelSpec, gamma: float, grid: Grid, epsilon: float,
                     initial: Optional[np.ndarray] = None, neg_tol: float = 1e-8) -> ScalarField:
    """Solve the discounted HJB equation for ``v_eps`` on ``grid``.

    The returned field carries ``meta`` entries ``residual``, ``iterations``
    and ``boundary_contamination`` (True when ``v_eps`` dips below ``-neg_tol``;
    the exact solution is nonnegative).
    """
    if not 0 < epsilon <= 1:
        raise ConfigurationError(f"epsilon={epsilon} must lie in (0, 1]")
    prob = _Problem(spec, gamma, grid)
    v0 = np.zeros(grid.size) if initial is None else np.asarray(initial, dtype=float).ravel()
    v, res, its = _newton(prob, v0, epsilon)
    contaminated = bool(np.min(v) < -neg_tol * max(1.0, float(np.max(np.abs(v)))))
    if contaminated:
        log.warning("discounted solution negative at %s: boundary contamination",
                    grid.points[int(np.argmin(v))].tolist())
    return ScalarField(grid, v, meta={"epsilon": epsilon, "gamma": gamma, "residual": res,
                                      "iterations": its, "boundary_contamination": contaminated})


def solve_finite_horizon(spec: ModelSpec, gamma: float, grid: Grid, T: float,
                         steps: Optional[int] = None) -> ValueSurface:
    """Backward implicit-Euler solution of the finite-horizon HJB for ``vbar``.

    Terminal data ``vbar(T, x) = -gamma log v0``.  ``meta['monotone_in_t']``
    records whether ``vbar`` is nonincreasing in ``t`` up to ``1e-8``.
    """
    if T <= 0:
        raise ConfigurationError("horizon T must be positive")
    steps = 400 if steps is None else int(steps)
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    prob = _Problem(spec, gamma, grid)
    dt = T / steps
    times = np.linspace(0.0, T, steps + 1)
    vals = np.empty((steps + 1, grid.size))
    vals[-1] = -gamma * np.log(spec.v0)
    worst_res = 0.0
    for k in range(steps - 1, -1, -1):
        vals[k], res, _ = _newton(prob, vals[k + 1].copy(), 0.0, prev=vals[k + 1], dt=dt)
        worst_res = max(worst_res, res)
    increments = np.diff(vals, axis=0)     # vbar(t_{k+1}) - vbar(t_k), should be <= 0
    monotone = bool(np.max(increments) <= 1e-8 * max(1.0, float(np.max(np.abs(vals)))))
    return ValueSurface(grid, times, vals, meta={"gamma": gamma, "T": T, "steps": steps,
                                                 "residual": worst_res,
                                                 "monotone_in_t": monotone})


@dataclass
class ErgodicSolution:
    """The pair (chi, w) solving the ergodic HJB, with w(x0) = 0."""

    gamma: float
    chi: float
    w: ScalarField
    method: str
    residual: float
    sequence: list = field(default_factory=list)
    schedule: list = field(default_factory=list)
    far_field: dict = field(default_factory=dict)

    def to_dict(self):
        return {"gamma": self.gamma, "chi": self.chi, "method": self.method,
                "residual": self.residual, "sequence": self.sequence,
                "schedule": self.schedule, "far_field": self.far_field,
                "w": self.w.to_dict()}


def _richardson_weights(nodes):
    """Lagrange weights that extrapolate values at ``nodes`` to 0."""
    nodes = np.asarray(nodes, dtype=float)
    w = np.ones(len(nodes))
    for k in range(len(nodes)):
        for j in range(len(nodes)):
            if j != k:
                w[k] *= nodes[j] / (nodes[j] - nodes[k])
    return w


def _anchor(grid, anchor):
    x0 = np.zeros(grid.dim) if anchor is None else np.atleast_1d(np.asarray(anchor, dtype=float))
    return grid.index_of(x0)


def ergodic_residual(spec, gamma, grid, chi, w_values, fraction=0.6):
    """Max residual of the ergodic HJB for (chi, w) on the inner box."""
    d = coefficients_on_grid(spec, gamma, grid)
    wf = ScalarField(grid, w_values)
    g, H = wf.gradient(), wf.hessian()
    r = (0.5 * np.einsum("nij,nij->n", d.a, H) + np.einsum("ni,ni->n", d.beta_gamma, g)
         + 0.5 * np.einsum("ni,nij,nj->n", g, d.Q, g) - d.U_gamma - chi)
    mask = grid.inner_mask(fraction)
    return float(np.max(np.abs(r[mask])))


def _far_field_fit(grid, w_values):
    """Fit -w >= c|x|^2 - c' on the outer 20% shell of the box."""
    shell = ~grid.inner_mask(0.8)
    s = np.sum(grid.points[shell] ** 2, axis=1)
    y = -np.asarray(w_values).ravel()[shell]
    A = np.column_stack([s, np.ones_like(s)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    c = float(coef[0])
    c_prime = float(np.max(c * s - y))
    return {"c": c, "c_prime": c_prime}


def extract_ergodic(spec: ModelSpec, gamma: float, grid: Grid,
                    schedule: Optional[Sequence[float]] = None,
                    method: str = "vanishing_discount", anchor=None) -> ErgodicSolution:
    """Compute (chi, w) by vanishing discount or by a long finite horizon.

    ``vanishing_discount``: ``schedule`` is a decreasing list of discount
    rates.  ``-chi`` is the Richardson extrapolation to 0 of
    ``eps v_eps(x0)``; ``w`` is the same extrapolation of
    ``-(v_eps - v_eps(x0))``.

    ``long_horizon``: ``schedule`` is an increasing list of horizons;
    ``chi`` is the slope of ``-vbar(0, x0; T)`` between the two longest.
    """
    i0 = _anchor(grid, anchor)
    x0 = tuple(grid.points[i0])
    if method == "vanishing_discount":
        eps = sorted(DEFAULT_SCHEDULE if schedule is None else schedule, reverse=True)
        if len(eps) < 2:
            raise ConfigurationError("schedule needs at least two discount rates")
        seq, fields = [], []
        v = None
        for k, e in enumerate(eps):
            init = None if v is None else v * (eps[k - 1] / e)
            f = solve_discounted(spec, gamma, grid, e, initial=init)
            v = f.flat
            seq.append(float(e * v[i0]))
            fields.append(v - v[i0])
        diffs = np.diff(seq)
        tol = 1e-9 * max(1.0, max(abs(s) for s in seq))
        if np.any(diffs > tol) and np.any(diffs < -tol):
            raise ConvergenceError(
                f"non-monotone vanishing-discount sequence {seq} at gamma={gamma}")
        wts = _richardson_weights(eps)
        chi = -float(np.dot(wts, seq))
        w_vals = -np.tensordot(wts, np.array(fields), axes=1)
        used = list(map(float, eps))
    elif method == "long_horizon":
        Ts = sorted([20.0, 40.0] if schedule is None else schedule)
        if len(Ts) < 2:
            raise ConfigurationError("schedule needs at least two horizons")
        Tmax = Ts[-1]
        surf = solve_finite_horizon(spec, gamma, grid, Tmax, steps=int(np.ceil(Tmax / 0.05)))
        # vbar(0, x; T) = vbar(Tmax - T, x; Tmax) by time homogeneity
        seq = [float(surf.slice_at(Tmax - T).flat[i0]) for T in Ts]
        chi = -(seq[-1] - seq[-2]) / (Ts[-1] - Ts[-2])
        top = surf.slice(0).flat
        w_vals = -(top - top[i0])
        used = list(map(float, Ts))
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    w_vals = w_vals - w_vals[i0]
    res = ergodic_residual(spec, gamma, grid, chi, w_vals)
    w = ScalarField(grid, w_vals, anchor=x0)
    return ErgodicSolution(gamma=float(gamma), chi=chi, w=w, method=method, residual=res,
                           sequence=seq, schedule=used, far_field=_far_field_fit(grid, w_vals))


def feedback_h(spec: ModelSpec, gamma: float, field, value_kind: str = "w") -> VectorField:
    """Optimal allocation ``(1/(1-g)) (sigma sigma^*)^{-1}(alpha_hat + sigma lambda^* Dv)``.

    ``value_kind`` is ``"w"`` for an ergodic potential (``Dv = Dw``) or
    ``"vbar"`` for a finite-horizon slice of ``vbar`` (``Dv = -Dvbar``).
    Boundary nodes are flagged in ``one_sided``.
    """
    if value_kind not in ("w", "vbar"):
        raise ConfigurationError("value_kind must be 'w' or 'vbar'")
    grid = field.grid
    d = derived_gamma(spec, grid.points, gamma)
    g = field.gradient()
    if value_kind == "vbar":
        g = -g
    inner = d.alpha_hat + np.einsum("nij,nkj,nk->ni", d.sigma, d.lam, g)
    h = np.einsum("nij,nj->ni", d.ss_inv, inner) / (1.0 - gamma)
    return VectorField(grid, h, grid.boundary_mask())
