"""The optimally controlled ergodic diffusion and the derivative of chi.

Given the ergodic potential ``w`` the optimal generator is

    Lbar psi = 0.5 tr[a D^2 psi] + (beta_g + Q Dw) . D psi,

its invariant density ``m_g`` yields

    chi'(g) = theta(g) = int V1 dm_g,
    V1 = (alpha_hat + sigma lambda^* Dw)^* (sigma sigma^*)^{-1} (alpha_hat + sigma lambda^* Dw) / (2 (1-g)^2),

and ``u = dw/dg`` solves the Poisson equation ``Lbar u = theta - V1``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConfigurationError, DomainTooSmallError, NumericalDegeneracyError
from .grid import Grid, ScalarField, VectorField, markov_generator
from .hjb import extract_ergodic
from .model import ModelSpec, derived_gamma, eval_coefficients


def optimal_drift(spec: ModelSpec, gamma: float, w: ScalarField) -> VectorField:
    """Drift ``beta_g + lambda N_g^{-1} lambda^* Dw`` of the optimal diffusion, per node."""
    grid = w.grid
    d = derived_gamma(spec, grid.points, gamma)
    g = w.gradient()
    b = d.beta_gamma + np.einsum("nij,nj->ni", d.Q, g)
    return VectorField(grid, b, grid.boundary_mask())


@dataclass
class InvariantMeasure:
    """Stationary density of a diffusion on a grid (trapezoid-normalized)."""

    grid: Grid
    density: np.ndarray
    method: str
    normalization_error: float
    gaussian_tail_delta: float
    weights: Optional[np.ndarray] = field(default=None, repr=False)   # chain stationary vector
    meta: dict = field(default_factory=dict)

    def integrate(self, values):
        return self.grid.integrate(np.asarray(values).ravel() * self.density)

    def moment(self, k=2):
        r2 = np.sum(self.grid.points ** 2, axis=1)
        return self.integrate(r2 ** (k / 2))

    def as_field(self):
        return ScalarField(self.grid, self.density)

    def to_csv(self, path):
        self.as_field().to_csv(path, name="density")


def _check_inward(grid, b):
    """Drift must point strictly into the box on every boundary face."""
    idx = np.indices(grid.num).reshape(grid.dim, -1).T
    bad = np.zeros(grid.size, dtype=bool)
    tol = 1e-8 * max(1.0, float(np.max(np.abs(b))))   # roundoff-level drift is not inward
    for k in range(grid.dim):
        lo, hi = idx[:, k] == 0, idx[:, k] == grid.num[k] - 1
        bad |= lo & (b[:, k] <= tol)
        bad |= hi & (b[:, k] >= -tol)
    if np.any(bad):
        worst = grid.points[int(np.argmax(bad))].tolist()
        raise DomainTooSmallError(
            f"drift is not inward-pointing at boundary node x={worst}; "
            "the box is too small or the dynamics are not ergodic")


def _tail_delta(grid, density):
    shell = ~grid.inner_mask(0.8)
    vals = density[shell]
    ok = vals > 1e-300
    if np.count_nonzero(ok) < 3:
        return float("nan")
    s = np.sum(grid.points[shell][ok] ** 2, axis=1)
    A = np.column_stack([s, np.ones_like(s)])
    coef, *_ = np.linalg.lstsq(A, np.log(vals[ok]), rcond=None)
    return float(-coef[0])


def stationary_distribution(grid: Grid, a, b) -> InvariantMeasure:
    """Invariant density of ``0.5 tr[a D^2] + b.D`` with no-flux boundaries.

    Solves the discrete adjoint nullspace ``Q^T pi = 0``, ``sum(pi) = 1`` of
    the monotone Markov-chain generator ``Q``.
    """
    b = np.asarray(b, dtype=float).reshape(grid.size, grid.dim)
    _check_inward(grid, b)
    Q = markov_generator(grid, a, b)
    N = grid.size
    A = Q.T.tolil()
    A[N - 1, :] = np.ones(N)
    rhs = np.zeros(N)
    rhs[N - 1] = 1.0
    lu = spla.splu(A.tocsc())
    pi = lu.solve(rhs)
    if not np.all(np.isfinite(pi)):
        raise NumericalDegeneracyError("generator nullspace is degenerate")
    if np.min(pi) < -1e-10 * np.max(pi):
        raise NumericalDegeneracyError(
            "stationary vector has negative entries; nullspace dimension is not one")
    # a second independent null vector would leave the normalized system singular
    if lu.U.diagonal().size and np.min(np.abs(lu.U.diagonal())) < 1e-14 * np.max(np.abs(lu.U.diagonal())):
        raise NumericalDegeneracyError("generator nullspace dimension is not one")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    dens = pi / grid.cell_volume()
    dens /= grid.integrate(dens)
    return InvariantMeasure(grid, dens, "fokker_planck",
                            normalization_error=abs(grid.integrate(dens) - 1.0),
                            gaussian_tail_delta=_tail_delta(grid, dens), weights=pi,
                            meta={"generator": Q})


def _histogram_density(grid, samples):
    """Node-centred histogram of ``samples`` normalized by trapezoid quadrature."""
    edges = [np.concatenate([[-np.inf], 0.5 * (ax[1:] + ax[:-1]), [np.inf]]) for ax in grid.axes]
    counts, _ = np.histogramdd(samples.reshape(-1, grid.dim), bins=edges)
    # boundary nodes own half-width cells
    widths = []
    for ax, h in zip(grid.axes, grid.spacing):
        wdt = np.full(len(ax), h)
        wdt[0] = wdt[-1] = 0.5 * h
        widths.append(wdt)
    vol = widths[0] if grid.dim == 1 else np.outer(widths[0], widths[1])
    dens = (counts / vol).ravel()
    return dens / grid.integrate(dens)


def simulate_stationary(spec: ModelSpec, drift: VectorField, n_chains=256, n_steps=20_000,
                        burn_in=2_000, dt=1e-2, seed=0, x0=None):
    """Euler-Maruyama samples of ``dX = b(X) dt + lambda(X) dW`` after burn-in."""
    rng = np.random.default_rng(seed)
    n, d = spec.n, spec.noise_dim
    X = np.zeros((n_chains, n)) if x0 is None else np.tile(np.asarray(x0, float), (n_chains, 1))
    out = np.empty((n_steps - burn_in, n_chains, n))
    const_lam = spec.lam.kind == "constant"
    lam = spec.lam(np.zeros(n), n) if const_lam else None
    sq = np.sqrt(dt)
    for k in range(n_steps):
        b, _ = drift(X)
        L = lam if const_lam else spec.lam(X, n)
        dW = rng.standard_normal((n_chains, d)) * sq
        X = X + b * dt + (dW @ L.T if const_lam else np.einsum("pij,pj->pi", L, dW))
        if k >= burn_in:
            out[k - burn_in] = X
    return out.reshape(-1, n)


def invariant_measure(spec: ModelSpec, gamma: float, w: ScalarField, grid: Optional[Grid] = None,
                      method: str = "fokker_planck", **sim_kwargs) -> InvariantMeasure:
    """Invariant measure of the optimal diffusion.

    ``fokker_planck`` solves the discrete adjoint equation; ``ergodic_average``
    histograms long simulated trajectories (keyword arguments go to
    :func:`simulate_stationary`).
    """
    if grid is not None and grid != w.grid:
        raise ConfigurationError("w must be sampled on the requested grid")
    grid = w.grid
    drift = optimal_drift(spec, gamma, w)
    if method == "fokker_planck":
        a = derived_gamma(spec, grid.points, gamma).a
        m = stationary_distribution(grid, a, drift.values)
        m.meta["gamma"] = gamma
        return m
    if method == "ergodic_average":
        _check_inward(grid, drift.values)
        samples = simulate_stationary(spec, drift, **sim_kwargs)
        dens = _histogram_density(grid, samples)
        return InvariantMeasure(grid, dens, "ergodic_average",
                                normalization_error=abs(grid.integrate(dens) - 1.0),
                                gaussian_tail_delta=_tail_delta(grid, dens),
                                meta={"gamma": gamma, "n_samples": len(samples)})
    raise ConfigurationError(f"unknown invariant-measure method {method!r}")


def total_variation(m1: InvariantMeasure, m2: InvariantMeasure, bins: int = 50) -> float:
    """Total variation distance after aggregating both densities into coarse cells."""
    grid = m1.grid
    if m2.grid != grid:
        raise ConfigurationError("measures live on different grids")
    wts = np.ones(grid.num)
    for k, (ax, h) in enumerate(zip(grid.axes, grid.spacing)):
        wk = np.full(len(ax), h)
        wk[0] = wk[-1] = 0.5 * h
        shape = [1] * grid.dim
        shape[k] = -1
        wts = wts * wk.reshape(shape)
    wts = wts.ravel()
    cells = []
    for k, ax in enumerate(grid.axes):
        edges = np.linspace(ax[0], ax[-1], bins + 1)
        cells.append(np.clip(np.searchsorted(edges, grid.points[:, k], side="right") - 1, 0, bins - 1))
    cell = np.ravel_multi_index(cells, (bins,) * grid.dim)
    p1 = np.bincount(cell, m1.density * wts, minlength=bins ** grid.dim)
    p2 = np.bincount(cell, m2.density * wts, minlength=bins ** grid.dim)
    return 0.5 * float(np.sum(np.abs(p1 / p1.sum() - p2 / p2.sum())))


@dataclass
class PoissonSolution:
    gamma: float
    theta: float
    u: ScalarField
    v1: ScalarField
    residual: float
    normalization_error: float
    accuracy_warning: bool = False

    def summary(self):
        return {"gamma": self.gamma, "theta": self.theta,
                "normalization_error": self.normalization_error, "residual": self.residual,
                "accuracy_warning": self.accuracy_warning}

    def to_csv(self, path):
        self.u.to_csv(path, name="u", extra={"V1": self.v1.flat})


def v1_field(spec: ModelSpec, gamma: float, w: ScalarField) -> np.ndarray:
    d = derived_gamma(spec, w.grid.points, gamma)
    g = w.gradient()
    y = d.alpha_hat + np.einsum("nij,nkj,nk->ni", d.sigma, d.lam, g)
    return np.einsum("ni,nij,nj->n", y, d.ss_inv, y) / (2.0 * (1.0 - gamma) ** 2)


def chi_prime(spec: ModelSpec, gamma: float, w: ScalarField, m: InvariantMeasure,
              anchor=None) -> PoissonSolution:
    """theta(gamma) = int V1 dm and the Poisson solution u with u(x0) = 0."""
    grid = w.grid
    if m.grid != grid:
        raise ConfigurationError("measure and potential must share a grid")
    V1 = v1_field(spec, gamma, w)
    theta = m.integrate(V1)
    outer = ~grid.inner_mask(0.95)
    outside = m.integrate(outer.astype(float))
    warn = outside > 0.01
    if warn:
        warnings.warn(f"{outside:.2%} of the invariant mass sits on the box edge; "
                      "theta may be inaccurate", RuntimeWarning)
    Q = m.meta.get("generator")
    if Q is None:
        a = derived_gamma(spec, grid.points, gamma).a
        Q = markov_generator(grid, a, optimal_drift(spec, gamma, w).values)
    pi = m.weights if m.weights is not None else m.density * grid.cell_volume()
    theta_d = float(np.dot(pi / pi.sum(), V1))
    i0 = grid.index_of(np.zeros(grid.dim) if anchor is None else anchor)
    A = Q.tolil()
    A[i0, :] = 0
    A[i0, i0] = 1.0
    rhs = theta_d - V1
    rhs[i0] = 0.0
    u = spla.spsolve(A.tocsc(), rhs)
    r = Q @ u + V1 - theta
    res = float(np.max(np.abs(r[grid.inner_mask(0.6)])))
    return PoissonSolution(gamma=float(gamma), theta=float(theta),
                           u=ScalarField(grid, u, anchor=tuple(grid.points[i0])),
                           v1=ScalarField(grid, V1), residual=res,
                           normalization_error=m.normalization_error, accuracy_warning=warn)


def theta_at(spec: ModelSpec, gamma: float, grid: Grid, schedule=None) -> float:
    """chi'(gamma) through the ergodic solve, the invariant measure and the integral formula."""
    sol = extract_ergodic(spec, gamma, grid, schedule)
    m = invariant_measure(spec, gamma, sol.w)
    return chi_prime(spec, gamma, sol.w, m).theta


def chi_prime_fd_check(spec: ModelSpec, gamma: float, delta: float, grid: Grid,
                       schedule=None) -> float:
    """Centered difference ``(chi(g + d) - chi(g - d)) / (2 d)`` of PDE values of chi."""
    if not gamma + delta < 0:
        raise ConfigurationError("gamma + delta must stay negative")
    hi = extract_ergodic(spec, gamma + delta, grid, schedule).chi
    lo = extract_ergodic(spec, gamma - delta, grid, schedule).chi
    return (hi - lo) / (2.0 * delta)


@dataclass
class ConditionCheck:
    ok: bool
    max_ratio: float
    worst_node: Optional[list]


def check_gradient_condition(spec: ModelSpec, gamma: float, w: ScalarField, grid=None) -> ConditionCheck:
    """Check ``(Dw)^* lam sig^* (sig sig^*)^{-1} sig lam^* Dw < theta^2`` on interior nodes.

    Nodes where both sides vanish count as ratio 0.
    """
    grid = w.grid
    d = derived_gamma(spec, grid.points, gamma)
    y = np.einsum("nij,nkj,nk->ni", d.sigma, d.lam, w.gradient())
    lhs = np.einsum("ni,nij,nj->n", y, d.ss_inv, y)
    rhs = d.theta_sq
    interior = ~grid.boundary_mask()
    tiny = 1e-12 * max(1.0, float(np.max(rhs)))
    ratio = np.where(rhs > tiny, lhs / np.where(rhs > tiny, rhs, 1.0),
                     np.where(lhs > tiny, np.inf, 0.0))
    ratio = np.where(interior, ratio, 0.0)
    k = int(np.argmax(ratio))
    ok = bool(ratio[k] < 1.0)
    return ConditionCheck(ok, float(ratio[k]), grid.points[k].tolist())


def chi_zero(spec: ModelSpec, grid: Grid) -> float:
    """``int 0.5 theta^2 dm`` for the invariant measure of ``0.5 tr[a D^2] + G.D``.

    Upper bound for ``-chi(gamma)`` over all gamma < 0.
    """
    d = derived_gamma(spec, grid.points, 0.0)
    m = stationary_distribution(grid, d.a, d.G)
    return m.integrate(0.5 * d.theta_sq)
