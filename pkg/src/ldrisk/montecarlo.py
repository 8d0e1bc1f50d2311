"""Monte Carlo for the log wealth ratio and downside probabilities.

Paths follow Euler-Maruyama for the factor ``dX = beta dt + lambda dW`` and
accumulate ``d log(V / S0) = (h.alpha_hat - 0.5 h sigma sigma^* h) dt + h sigma dW``
directly in log form.  Under the tilted measure ``dW = dW~ + k(X) dt`` with

    k = (g / (1-g)) Sigma^* alpha_hat + N_g^{-1} lambda^* Dw,

and each path carries ``log dP/dP~ = -int k.dW~ - 0.5 int |k|^2 dt``.

Paths are simulated in fixed-size batches, each with its own random stream
derived from ``(seed, stream, batch)``, so results do not depend on how many
threads run the batches.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .exceptions import ConfigurationError, EstimationError, NumericalDegeneracyError
from .grid import ScalarField, ValueSurface, VectorField
from .hjb import feedback_h
from .model import ModelSpec, derived_gamma

BATCH_SIZE = 16384
SIM_SCHEMA = "ldrisk-sim/1"
SLOPE_SCHEMA = "ldrisk-slope/1"
_Z95 = float(stats.norm.ppf(0.975))


# -- strategies -----------------------------------------------------------------

@dataclass
class Strategy:
    """Allocation rule ``h(t, x)`` in the risky assets.

    Feedback kinds interpolate precomputed node values; points outside the
    grid take the boundary value and are counted.
    """

    kind: str
    h: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    fields: list = field(default_factory=list, repr=False)
    times: Optional[np.ndarray] = None

    KINDS = ("zero_benchmark", "constant", "finite_horizon_feedback", "stationary_feedback")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigurationError(f"unknown strategy kind {self.kind!r}")

    @classmethod
    def zero(cls):
        return cls("zero_benchmark")

    @classmethod
    def constant(cls, h):
        return cls("constant", h=np.atleast_1d(np.asarray(h, dtype=float)))

    @classmethod
    def stationary(cls, spec: ModelSpec, gamma: float, w: ScalarField):
        return cls("stationary_feedback", gamma=float(gamma), fields=[feedback_h(spec, gamma, w, "w")])

    @classmethod
    def finite_horizon(cls, spec: ModelSpec, gamma: float, surface: ValueSurface):
        fs = [feedback_h(spec, gamma, surface.slice(k), "vbar") for k in range(len(surface.times))]
        return cls("finite_horizon_feedback", gamma=float(gamma), fields=fs,
                   times=np.asarray(surface.times, dtype=float))

    def __call__(self, t: float, X: np.ndarray, m: int):
        """Allocations at time ``t`` for states ``X`` (P, n); returns (h (P, m), clamped)."""
        P = X.shape[0]
        if self.kind == "zero_benchmark":
            return np.zeros((P, m)), 0
        if self.kind == "constant":
            if self.h.size != m:
                raise ConfigurationError(f"constant strategy has {self.h.size} entries, model has m={m}")
            return np.broadcast_to(self.h, (P, m)), 0
        if self.kind == "stationary_feedback":
            return self.fields[0](X)
        # finite horizon: slice at the last stored time <= t
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.fields) - 1))
        return self.fields[k](X)


# -- configuration --------------------------------------------------------------

@dataclass
class SimConfig:
    T: float
    n_paths: int = 10_000
    seed: int = 0
    dt: Optional[float] = None
    measure: str = "physical"
    tilt_gamma: Optional[float] = None
    tilt_w: Optional[ScalarField] = None
    record_likelihood: bool = True
    threads: int = 1
    x0: Optional[Sequence[float]] = None
    stream: int = 0

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError("T must be positive")
        if not 0 < self.step <= self.T / 100.0 + 1e-15:
            raise ConfigurationError(f"dt={self.step} must satisfy 0 < dt <= T/100")
        if self.n_paths < 100:
            raise ConfigurationError("n_paths must be at least 100")
        if self.measure not in ("physical", "tilted"):
            raise ConfigurationError(f"unknown measure {self.measure!r}")
        if self.measure == "tilted" and (self.tilt_gamma is None or self.tilt_w is None):
            raise ConfigurationError("tilted measure needs tilt_gamma and tilt_w")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")

    @property
    def step(self):
        """Requested step, defaulting to ``min(1e-2, T/1000)``."""
        return min(1e-2, self.T / 1000.0) if self.dt is None else float(self.dt)

    @property
    def steps(self):
        return max(1, int(round(self.T / self.step)))

    def with_T(self, T, stream=None):
        return replace(self, T=float(T), stream=self.stream if stream is None else stream)


# -- simulation -----------------------------------------------------------------

@dataclass
class SimResult:
    L: np.ndarray                   # (1/T) log(V_T / S0_T) per path
    X_T: np.ndarray
    log_lr: np.ndarray              # log dP/dP~ (zeros under the physical measure)
    T: float
    measure: str
    clamp_count: int
    meta: dict = field(default_factory=dict)


class _Coefs:
    """Coefficient evaluation with constant fields hoisted out of the time loop."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        n = spec.n
        z = np.zeros((1, n))
        self.const = {}
        for name in ("r", "alpha", "sigma", "beta", "lam"):
            f = getattr(spec, name)
            if f.kind == "constant":
                self.const[name] = f(z, n)[0]

    def __call__(self, name, X):
        v = self.const.get(name)
        if v is not None:
            return v
        return getattr(self.spec, name)(X, self.spec.n)


def _tilt_field(spec: ModelSpec, gamma: float, w: ScalarField) -> VectorField:
    grid = w.grid
    d = derived_gamma(spec, grid.points, gamma)
    k = gamma / (1.0 - gamma)
    a = k * np.einsum("nij,ni->nj", d.Sigma, d.alpha_hat)
    b = np.einsum("nij,nkj,nk->ni", d.N_inv, d.lam, w.gradient())
    return VectorField(grid, a + b, grid.boundary_mask())


def _run_batch(spec, coefs, strategy, cfg, tilt, batch, size):
    n, m, d = spec.n, spec.m, spec.noise_dim
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(cfg.stream, batch))
    rng = np.random.Generator(np.random.SFC64(ss))
    steps = cfg.steps
    dt = cfg.T / steps
    sq = math.sqrt(dt)
    X = np.zeros((size, n)) if cfg.x0 is None else np.tile(np.asarray(cfg.x0, float), (size, 1))
    logw = np.zeros(size)
    loglr = np.zeros(size)
    clamps = 0
    const_market = all(nm in coefs.const for nm in ("r", "alpha", "sigma"))
    if const_market:
        sigma = coefs.const["sigma"]
        ahat = coefs.const["alpha"] - coefs.const["r"]
    lam_c, beta_c = coefs.const.get("lam"), coefs.const.get("beta")
    for k in range(steps):
        t = k * dt
        dW = rng.standard_normal((size, d))
        dW *= sq
        if tilt is not None:
            kx, c = tilt(X)
            clamps += c
            if cfg.record_likelihood:
                loglr -= np.einsum("pi,pi->p", kx, dW) + (0.5 * dt) * np.einsum("pi,pi->p", kx, kx)
            dW += kx * dt
        h, c = strategy(t, X, m)
        clamps += c
        if strategy.kind != "zero_benchmark":
            if const_market:
                hs = h @ sigma                              # (P, d)
                drift = h @ ahat
            else:
                sig = coefs("sigma", X)
                ah = coefs("alpha", X) - np.expand_dims(coefs("r", X), -1)
                hs = np.einsum("pi,pij->pj", h, sig) if sig.ndim == 3 else h @ sig
                drift = np.einsum("pi,pi->p", h, np.broadcast_to(ah, h.shape))
            drift -= 0.5 * np.einsum("pj,pj->p", hs, hs)
            logw += drift * dt + np.einsum("pj,pj->p", hs, dW)
        beta = beta_c if beta_c is not None else coefs("beta", X)
        lam = lam_c if lam_c is not None else coefs("lam", X)
        X += beta * dt
        X += dW @ lam.T if lam.ndim == 2 else np.einsum("pij,pj->pi", lam, dW)
        if not (np.isfinite(X).all() and np.isfinite(logw).all()):
            raise NumericalDegeneracyError(f"non-finite path state at step {k} (t={t:.4g}), batch {batch}")
    return X, logw, loglr, clamps


def simulate_paths(spec: ModelSpec, strategy: Strategy, cfg: SimConfig) -> SimResult:
    """Simulate ``cfg.n_paths`` paths to ``cfg.T``; deterministic for a given config."""
    x0 = np.zeros(spec.n) if cfg.x0 is None else np.asarray(cfg.x0, float)
    try:
        derived_gamma(spec, x0, 0.0)
    except NumericalDegeneracyError as exc:
        raise ConfigurationError(f"degenerate market volatility: {exc}") from exc
    coefs = _Coefs(spec)
    tilt = _tilt_field(spec, cfg.tilt_gamma, cfg.tilt_w) if cfg.measure == "tilted" else None
    sizes = [BATCH_SIZE] * (cfg.n_paths // BATCH_SIZE)
    if cfg.n_paths % BATCH_SIZE:
        sizes.append(cfg.n_paths % BATCH_SIZE)

    def job(b):
        return _run_batch(spec, coefs, strategy, cfg, tilt, b, sizes[b])

    if cfg.threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    else:
        parts = [job(b) for b in range(len(sizes))]
    X = np.concatenate([p[0] for p in parts])
    logw = np.concatenate([p[1] for p in parts]) + math.log(spec.v0)
    loglr = np.concatenate([p[2] for p in parts])
    clamps = int(sum(p[3] for p in parts))
    return SimResult(L=logw / cfg.T, X_T=X, log_lr=loglr, T=cfg.T, measure=cfg.measure,
                     clamp_count=clamps, meta={"dt": cfg.T / cfg.steps, "steps": cfg.steps,
                                               "seed": cfg.seed, "batches": len(sizes)})


# -- estimation -----------------------------------------------------------------

@dataclass
class DownsideEstimate:
    kappa: float
    T: float
    p_hat: float
    ci_low: float
    ci_high: float
    n_paths: int
    boundary_clamp_count: int
    measure: str = "physical"
    ess: float = float("nan")

    @property
    def half_width(self):
        return 0.5 * (self.ci_high - self.ci_low)

    def row(self):
        return [repr(float(self.T)), repr(float(self.kappa)), repr(float(self.p_hat)),
                repr(float(self.ci_low)), repr(float(self.ci_high)), str(self.n_paths),
                self.measure, str(self.boundary_clamp_count)]


def estimate_downside(samples: SimResult, kappa: float) -> DownsideEstimate:
    """Fraction of paths with ``L_T <= kappa`` and its 95% normal interval.

    Tilted samples use the self-normalised likelihood-weighted mean with a
    delta-method interval.
    """
    ind = (samples.L <= kappa).astype(float)
    n = ind.size
    if samples.measure == "physical":
        p = float(ind.mean())
        se = math.sqrt(max(p * (1.0 - p), 0.0) / n)
        ess = float(n)
    else:
        lr = samples.log_lr
        if not np.all(np.isfinite(lr)):
            raise EstimationError("non-finite likelihood weights")
        wts = np.exp(lr - lr.max())
        s1 = wts.sum()
        if not s1 > 0:
            raise EstimationError("zero effective sample size")
        p = float(np.dot(wts, ind) / s1)
        se = float(math.sqrt(np.sum(wts ** 2 * (ind - p) ** 2)) / s1)
        ess = float(s1 ** 2 / np.sum(wts ** 2))
    lo, hi = max(0.0, p - _Z95 * se), min(1.0, p + _Z95 * se)
    return DownsideEstimate(float(kappa), samples.T, p, lo, hi, n, samples.clamp_count,
                            samples.measure, ess)


@dataclass
class SlopeReport:
    kappa: float
    T: list
    log_p: list
    slope: float
    stderr: float
    J_ref: float
    rel_gap: float
    estimates: list = field(default_factory=list)

    def row(self):
        return [repr(float(self.kappa)), repr(float(self.slope)), repr(float(self.stderr)),
                repr(float(self.J_ref)), repr(float(self.rel_gap))]


def _ols(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    res = stats.linregress(x, y)
    se = float(res.stderr) if len(x) > 2 else float("nan")
    return float(res.slope), se


def ld_slope(spec: ModelSpec, strategy: Strategy, kappa: float, T_ladder: Sequence[float],
             cfg: SimConfig, J_ref: float = float("nan")) -> SlopeReport:
    """OLS slope of ``log p_hat(T)`` against ``T``; each T uses its own random stream.

    ``strategy`` may also be a callable ``T -> Strategy`` for horizon-dependent
    feedback.
    """
    Ts = [float(t) for t in T_ladder]
    if len(Ts) < 2:
        raise ConfigurationError("slope regression needs at least two horizons")
    ests = []
    for i, T in enumerate(Ts):
        st = strategy if isinstance(strategy, Strategy) else strategy(T)
        res = simulate_paths(spec, st, cfg.with_T(T, stream=cfg.stream + i))
        ests.append(estimate_downside(res, kappa))
    zero = [e.T for e in ests if e.p_hat <= 0]
    if zero:
        raise EstimationError(f"p_hat = 0 at T={zero}; use the tilted estimator")
    logp = [math.log(e.p_hat) for e in ests]
    slope, se = _ols(Ts, logp)
    gap = (slope - J_ref) / abs(J_ref) if np.isfinite(J_ref) and J_ref != 0 else float("nan")
    return SlopeReport(float(kappa), Ts, logp, slope, se, float(J_ref), gap, ests)


@dataclass
class AgreementReport:
    plain: DownsideEstimate
    tilted: DownsideEstimate
    agree: bool
    mean_weight: float
    weight_se: float
    weight_ok: bool
    mean_L_tilted: float

    @property
    def ok(self):
        return self.agree and self.weight_ok


def tilted_vs_plain_check(spec: ModelSpec, strategy: Strategy, kappa: float, cfg: SimConfig,
                          gamma: float, w: ScalarField) -> AgreementReport:
    """Plain and importance-sampled estimates from the same seed, and the mean weight."""
    plain = simulate_paths(spec, strategy, replace(cfg, measure="physical"))
    tilted = simulate_paths(spec, strategy, replace(cfg, measure="tilted", tilt_gamma=gamma,
                                                    tilt_w=w, record_likelihood=True))
    ep, et = estimate_downside(plain, kappa), estimate_downside(tilted, kappa)
    wts = np.exp(tilted.log_lr)
    mw = float(wts.mean())
    se = float(wts.std(ddof=1) / math.sqrt(wts.size))
    agree = abs(ep.p_hat - et.p_hat) <= ep.half_width + et.half_width
    return AgreementReport(ep, et, bool(agree), mw, se, bool(abs(mw - 1.0) <= 3 * se + 1e-15),
                           float(tilted.L.mean()))


# -- files ----------------------------------------------------------------------

def write_sim_csv(path, estimates: Sequence[DownsideEstimate], meta: Optional[dict] = None):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SIM_SCHEMA}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["T", "kappa", "p_hat", "ci_low", "ci_high", "n_paths", "measure", "clamp_count"])
        for e in estimates:
            wr.writerow(e.row())


def write_slope_csv(path, reports: Sequence[SlopeReport], meta: Optional[dict] = None):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SLOPE_SCHEMA}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["kappa", "slope", "stderr", "J_ref", "rel_gap"])
        for r in reports:
            wr.writerow(r.row())
