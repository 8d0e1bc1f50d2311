"""Estimator-style front end.

Each class keeps its settings as constructor parameters (so ``get_params`` /
``set_params`` and cloning work) and stores results in attributes ending in
an underscore after ``fit``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checks import check_gammas, check_horizons, check_kappas, resolve_model
from .duality import ChiCurve, build_chi_curve, rate_function_table
from .ergodic import chi_prime, invariant_measure
from .grid import Grid
from .hjb import extract_ergodic
from .model import check_assumptions
from .montecarlo import SimConfig, Strategy, estimate_downside, ld_slope, simulate_paths


def _grid_for(spec, half_width, num):
    if half_width is None:
        half_width = check_assumptions(spec).default_half_width()
    return Grid.box(half_width, spec.n, num)


class ErgodicHJB(BaseEstimator):
    """Solve the ergodic HJB equation at a set of gammas.

    Parameters
    ----------
    model : ModelSpec, dict, path or reference name
    half_width : float, optional
        Half-width of the square PDE box; by default derived from the
        coercivity constants.
    num : int
        Nodes per axis.
    schedule : sequence of float, optional
        Discount rates for the vanishing-discount extrapolation.
    with_derivative : bool
        Also compute chi'(gamma) through the invariant measure.
    """

    def __init__(self, model="lgq", half_width=None, num=201, schedule=None, with_derivative=True):
        self.model = model
        self.half_width = half_width
        self.num = num
        self.schedule = schedule
        self.with_derivative = with_derivative

    def fit(self, X, y=None):
        spec = resolve_model(self.model)
        gammas = check_gammas(X)
        self.grid_ = _grid_for(spec, self.half_width, self.num)
        self.solutions_ = {}
        chi, dchi = [], []
        for g in gammas:
            sol = extract_ergodic(spec, g, self.grid_, self.schedule)
            self.solutions_[float(g)] = sol
            chi.append(sol.chi)
            if self.with_derivative:
                m = invariant_measure(spec, g, sol.w)
                dchi.append(chi_prime(spec, g, sol.w, m).theta)
            else:
                dchi.append(np.nan)
        self.gammas_ = gammas
        self.chi_ = np.array(chi)
        self.chi_prime_ = np.array(dchi)
        return self

    def predict(self, X):
        """chi at each gamma; gammas not seen in ``fit`` are solved on the fitted grid."""
        check_is_fitted(self, "solutions_")
        spec = resolve_model(self.model)
        out = []
        for g in check_gammas(X):
            sol = self.solutions_.get(float(g))
            if sol is None:
                sol = extract_ergodic(spec, g, self.grid_, self.schedule)
            out.append(sol.chi)
        return np.array(out)

    def transform(self, X):
        """Columns ``[chi, chi']`` for fitted gammas."""
        check_is_fitted(self, "solutions_")
        g = check_gammas(X)
        idx = [int(np.flatnonzero(self.gammas_ == v)[0]) if np.any(self.gammas_ == v) else -1 for v in g]
        if min(idx, default=0) < 0:
            raise ValueError("transform only accepts gammas passed to fit")
        return np.column_stack([self.chi_[idx], self.chi_prime_[idx]])


class ChiCurveEstimator(BaseEstimator):
    """Build a certified chi curve over a gamma grid."""

    def __init__(self, model="lgq", half_width=None, num=201, schedule=None,
                 use_poisson_derivative=True, threads=1):
        self.model = model
        self.half_width = half_width
        self.num = num
        self.schedule = schedule
        self.use_poisson_derivative = use_poisson_derivative
        self.threads = threads

    def fit(self, X, y=None):
        spec = resolve_model(self.model)
        gammas = check_gammas(X)
        grid = _grid_for(spec, self.half_width, self.num)
        self.curve_ = build_chi_curve(spec, gammas, grid, self.use_poisson_derivative,
                                      self.schedule, self.threads)
        return self

    def predict(self, X):
        """Interpolated chi (monotone-cubic chi' integrated) inside the fitted range."""
        check_is_fitted(self, "curve_")
        return np.asarray(self.curve_.chi_at(check_gammas(X)), dtype=float)


class RateFunction(BaseEstimator, TransformerMixin):
    """Legendre transform of a chi curve.

    ``fit`` takes either a :class:`ChiCurve` or an array with columns
    ``gamma, chi, chi_prime``; ``transform`` maps kappas to columns
    ``I, J, gamma_star``.
    """

    def __init__(self, allow_uncertified=False):
        self.allow_uncertified = allow_uncertified

    def fit(self, X, y=None):
        if isinstance(X, ChiCurve):
            self.curve_ = X
        else:
            arr = np.asarray(X, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise ValueError("expected an array with columns gamma, chi, chi_prime")
            self.curve_ = ChiCurve(arr[:, 0], arr[:, 1], arr[:, 2], source="external-csv")
        return self

    def transform(self, X):
        check_is_fitted(self, "curve_")
        self.results_ = rate_function_table(self.curve_, check_kappas(X), self.allow_uncertified)
        return np.array([[r.I, r.J, r.gamma_star] for r in self.results_]).reshape(-1, 3)


class DownsideProbability(BaseEstimator):
    """Monte Carlo downside probabilities ``P(L_T <= kappa)`` along a horizon ladder.

    Parameters
    ----------
    model : ModelSpec, dict, path or reference name
    strategy : {"stationary", "zero", "constant"}
    gamma : float
        Risk sensitivity of the stationary feedback (and of the tilt).
    h : array-like, optional
        Allocation for the constant strategy.
    tilted : bool
        Simulate under the tilted measure and reweight.
    """

    def __init__(self, model="merton", strategy="stationary", gamma=-0.5, h=None, n_paths=10_000,
                 dt=None, seed=0, tilted=False, threads=1, half_width=None, num=201):
        self.model = model
        self.strategy = strategy
        self.gamma = gamma
        self.h = h
        self.n_paths = n_paths
        self.dt = dt
        self.seed = seed
        self.tilted = tilted
        self.threads = threads
        self.half_width = half_width
        self.num = num

    def _setup(self):
        spec = resolve_model(self.model)
        w = None
        if self.strategy == "stationary" or self.tilted:
            grid = _grid_for(spec, self.half_width, self.num)
            w = extract_ergodic(spec, self.gamma, grid).w
        if self.strategy == "stationary":
            strat = Strategy.stationary(spec, self.gamma, w)
        elif self.strategy == "zero":
            strat = Strategy.zero()
        elif self.strategy == "constant":
            strat = Strategy.constant(self.h)
        else:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        return spec, strat, w

    def _config(self, T, stream, w):
        kw = dict(T=T, n_paths=self.n_paths, seed=self.seed, dt=self.dt, threads=self.threads,
                  stream=stream)
        if self.tilted:
            kw.update(measure="tilted", tilt_gamma=self.gamma, tilt_w=w)
        return SimConfig(**kw)

    def fit(self, X, y=None):
        """Simulate one batch of paths per horizon in ``X``."""
        spec, strat, w = self._setup()
        self.horizons_ = check_horizons(X)
        self.samples_ = [simulate_paths(spec, strat, self._config(T, i, w))
                         for i, T in enumerate(self.horizons_)]
        self.spec_, self.strategy_, self.w_ = spec, strat, w
        return self

    def predict(self, X):
        """``p_hat`` with shape (n_horizons, n_kappas)."""
        check_is_fitted(self, "samples_")
        kappas = check_kappas(X)
        return np.array([[estimate_downside(s, k).p_hat for k in kappas] for s in self.samples_])

    def estimates(self, kappa):
        check_is_fitted(self, "samples_")
        return [estimate_downside(s, kappa) for s in self.samples_]

    def slope(self, kappa, J_ref=float("nan")):
        """Large-deviation slope at ``kappa`` from fresh simulations on the fitted ladder."""
        check_is_fitted(self, "samples_")
        cfg = self._config(float(self.horizons_[0]), 0, self.w_)
        return ld_slope(self.spec_, self.strategy_, kappa, self.horizons_, cfg, J_ref)
