"""Market/factor model, gamma-dependent coefficients and assumption checks.

The model is

    dS^0_t / S^0_t = r(X_t) dt
    dS^i_t / S^i_t = alpha^i(X_t) dt + sigma^i_k(X_t) dW^k_t,   i = 1..m
    dX_t = beta(X_t) dt + lambda(X_t) dW_t,                    X in R^n

driven by an (n + m)-dimensional Brownian motion W.  Every coefficient is a
:class:`CoefficientField` that evaluates either at a single point ``x`` of
shape ``(n,)`` or at a batch of points of shape ``(N, n)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .exceptions import ConfigurationError, NumericalDegeneracyError

COND_LIMIT = 1e12

_CALLBACKS: dict[str, Callable] = {}


def register_callback(name: str, func: Callable) -> None:
    """Register ``func`` so that configs can refer to it by ``name``.

    ``func`` receives a batch of points with shape ``(N, n)`` and must return
    an array of shape ``(N,) + field_shape``.
    """
    _CALLBACKS[name] = func


def _as_batch(x, n):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and x.size == n)
    xb = x.reshape(-1, n) if x.ndim <= 1 else x
    if xb.ndim != 2 or xb.shape[-1] != n:
        raise ConfigurationError(f"point dimension {xb.shape[-1]} does not match n={n}")
    return xb, single


@dataclass(frozen=True)
class CoefficientField:
    """A coefficient r, alpha, sigma, beta or lambda as a function of x.

    ``kind`` is ``"constant"``, ``"affine"`` or ``"callback"``.  For affine
    fields ``field(x) = linear @ x + offset`` where ``linear`` has shape
    ``shape + (n,)``.
    """

    kind: str
    shape: tuple
    offset: Optional[np.ndarray] = None
    linear: Optional[np.ndarray] = None
    func: Optional[Callable] = field(default=None, compare=False)
    name: Optional[str] = None

    @classmethod
    def constant(cls, value):
        value = np.asarray(value, dtype=float)
        return cls("constant", value.shape, offset=value)

    @classmethod
    def affine(cls, linear, offset):
        linear = np.asarray(linear, dtype=float)
        offset = np.asarray(offset, dtype=float)
        if linear.shape[:-1] != offset.shape:
            raise ConfigurationError(
                f"affine field: linear part {linear.shape} incompatible with offset {offset.shape}")
        return cls("affine", offset.shape, offset=offset, linear=linear)

    @classmethod
    def callback(cls, func, shape, name=None):
        return cls("callback", tuple(shape), func=func, name=name)

    def __call__(self, x, n=None):
        x = np.asarray(x, dtype=float)
        if n is None:
            n = x.shape[-1] if x.ndim else 1
        xb, single = _as_batch(x, n)
        if self.kind == "constant":
            out = np.broadcast_to(self.offset, (xb.shape[0],) + self.shape).copy()
        elif self.kind == "affine":
            if self.linear.shape[-1] != n:
                raise ConfigurationError(
                    f"affine field expects x of dimension {self.linear.shape[-1]}, got {n}")
            out = np.einsum("...k,nk->n...", self.linear, xb) + self.offset
        elif self.kind == "callback":
            out = np.asarray(self.func(xb), dtype=float)
            if out.shape != (xb.shape[0],) + self.shape:
                raise ConfigurationError(
                    f"callback {self.name!r} returned shape {out.shape}, "
                    f"expected {(xb.shape[0],) + self.shape}")
        else:
            raise ConfigurationError(f"unknown field kind {self.kind!r}")
        return out[0] if single else out

    def to_dict(self, linear_key="A", offset_key="a"):
        if self.kind == "constant":
            return {"type": "constant", "value": self.offset.tolist()}
        if self.kind == "affine":
            return {"type": "affine", linear_key: self.linear.tolist(),
                    offset_key: self.offset.tolist()}
        return {"type": "callback", "name": self.name}


# config key names for the linear part / offset of affine fields
_AFFINE_KEYS = {"r": ("A", "a"), "alpha": ("A", "a"), "sigma": ("A", "a"),
                "beta": ("B", "b"), "lambda": ("A", "a")}


@dataclass(frozen=True)
class ModelSpec:
    """Full market/factor model with ``n`` factors and ``m`` risky assets."""

    n: int
    m: int
    r: CoefficientField
    alpha: CoefficientField
    sigma: CoefficientField
    beta: CoefficientField
    lam: CoefficientField
    v0: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ConfigurationError("n and m must be positive")
        if self.v0 < 1.0:
            raise ConfigurationError(f"initial wealth v0={self.v0} must be >= 1")
        d = self.n + self.m
        expected = {"r": (), "alpha": (self.m,), "sigma": (self.m, d),
                    "beta": (self.n,), "lam": (self.n, d)}
        for name, shape in expected.items():
            f = getattr(self, name)
            if tuple(f.shape) != shape:
                raise ConfigurationError(
                    f"coefficient {name} has shape {tuple(f.shape)}, expected {shape}")
            if f.kind == "affine" and f.linear.shape[-1] != self.n:
                raise ConfigurationError(
                    f"affine coefficient {name} has linear part for dimension "
                    f"{f.linear.shape[-1]}, expected n={self.n}")

    @property
    def noise_dim(self):
        return self.n + self.m

    # -- serialization -----------------------------------------------------
    @classmethod
    def from_dict(cls, cfg):
        allowed = {"n", "m", "v0", "r", "alpha", "sigma", "beta", "lambda"}
        unknown = set(cfg) - allowed
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        missing = {"n", "m", "r", "alpha", "sigma", "beta", "lambda"} - set(cfg)
        if missing:
            raise ConfigurationError(f"missing config keys: {sorted(missing)}")
        fields = {}
        for key in ("r", "alpha", "sigma", "beta", "lambda"):
            fields["lam" if key == "lambda" else key] = _field_from_dict(key, cfg[key])
        try:
            n, m = int(cfg["n"]), int(cfg["m"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"n and m must be integers: {exc}") from None
        return cls(n=n, m=m, v0=float(cfg.get("v0", 1.0)), **fields)

    def to_dict(self):
        out = {"n": self.n, "m": self.m, "v0": self.v0}
        for key in ("r", "alpha", "sigma", "beta", "lambda"):
            f = getattr(self, "lam" if key == "lambda" else key)
            out[key] = f.to_dict(*_AFFINE_KEYS[key])
        return out


def _field_from_dict(key, d):
    if not isinstance(d, dict) or "type" not in d:
        raise ConfigurationError(f"field {key!r} must be an object with a 'type'")
    kind = d["type"]
    lin_key, off_key = _AFFINE_KEYS[key]
    allowed = {"constant": {"type", "value"}, "affine": {"type", lin_key, off_key},
               "callback": {"type", "name", "shape"}}
    if kind not in allowed:
        raise ConfigurationError(f"field {key!r}: unknown type {kind!r}")
    unknown = set(d) - allowed[kind]
    if unknown:
        raise ConfigurationError(f"field {key!r}: unknown keys {sorted(unknown)}")
    try:
        if kind == "constant":
            return CoefficientField.constant(d["value"])
        if kind == "affine":
            return CoefficientField.affine(d[lin_key], d[off_key])
    except KeyError as exc:
        raise ConfigurationError(f"field {key!r}: missing key {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(f"field {key!r}: {exc}") from None
    name = d.get("name")
    if name not in _CALLBACKS:
        raise ConfigurationError(f"field {key!r}: callback {name!r} is not registered")
    return CoefficientField.callback(_CALLBACKS[name], d.get("shape", ()), name=name)


def load_model(path) -> ModelSpec:
    """Read a JSON model config; parse errors carry line and column."""
    with open(path) as fh:
        text = fh.read()
    return loads_model(text)


def loads_model(text: str) -> ModelSpec:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigurationError("model config must be a JSON object")
    return ModelSpec.from_dict(cfg)


def dump_model(spec: ModelSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)


# -- coefficient evaluation -------------------------------------------------

@dataclass(frozen=True)
class Coefficients:
    r: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    beta: np.ndarray
    lam: np.ndarray


def eval_coefficients(spec: ModelSpec, x) -> Coefficients:
    """Raw coefficients at ``x`` (shape ``(n,)`` or ``(N, n)``)."""
    x = np.asarray(x, dtype=float)
    if x.ndim > 2 or (x.ndim == 2 and x.shape[-1] != spec.n) or (
            x.ndim == 1 and spec.n > 1 and x.size != spec.n):
        raise ConfigurationError(f"x has shape {x.shape}, expected ({spec.n},) or (N, {spec.n})")
    if spec.n == 1 and x.ndim == 1 and x.size > 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("x must be finite")
    n = spec.n
    return Coefficients(spec.r(x, n), spec.alpha(x, n), spec.sigma(x, n),
                        spec.beta(x, n), spec.lam(x, n))


@dataclass(frozen=True)
class DerivedCoefficients:
    """Gamma-dependent coefficients of the risk-sensitive HJB equations.

    All arrays carry a leading batch axis when evaluated at several points.
    """

    gamma: float
    alpha_hat: np.ndarray   # alpha - r 1
    Sigma: np.ndarray       # (sigma sigma^*)^{-1} sigma
    N_inv: np.ndarray       # I + gamma/(1-gamma) sigma^*(sigma sigma^*)^{-1} sigma
    beta_gamma: np.ndarray
    U_gamma: np.ndarray
    G: np.ndarray           # beta - lambda sigma^*(sigma sigma^*)^{-1} alpha_hat
    theta_sq: np.ndarray    # alpha_hat^*(sigma sigma^*)^{-1} alpha_hat
    ss_inv: np.ndarray      # (sigma sigma^*)^{-1}
    a: np.ndarray           # lambda lambda^*
    Q: np.ndarray           # lambda N_inv lambda^*
    sigma: np.ndarray
    lam: np.ndarray


def spd_inverse(S, x=None):
    """Inverse of a (stack of) SPD matrices via Cholesky, guarding conditioning."""
    S = np.asarray(S, dtype=float)
    eig = np.linalg.eigvalsh(S)
    lo, hi = eig[..., 0], eig[..., -1]
    bad = (lo <= 0) | (hi > COND_LIMIT * np.where(lo > 0, lo, np.inf))
    bad = bad | ~np.isfinite(hi)
    if np.any(bad):
        where = ""
        if x is not None:
            xb = np.atleast_2d(np.asarray(x, dtype=float))
            idx = int(np.argmax(np.atleast_1d(bad)))
            where = f" at x={xb[idx].tolist()}"
        raise NumericalDegeneracyError(f"sigma sigma^* is singular or ill-conditioned{where}")
    L = np.linalg.cholesky(S)
    Linv = np.linalg.inv(L)
    return np.swapaxes(Linv, -1, -2) @ Linv


def derived_gamma(spec: ModelSpec, x, gamma: float) -> DerivedCoefficients:
    """Evaluate the gamma-dependent coefficients at ``x``."""
    gamma = float(gamma)
    if not gamma < 1:
        raise ConfigurationError(f"gamma={gamma} must be < 1")
    c = eval_coefficients(spec, x)
    sigma, lam = c.sigma, c.lam
    sT = np.swapaxes(sigma, -1, -2)
    ss = sigma @ sT
    ss_inv = spd_inverse(ss, x)
    alpha_hat = c.alpha - c.r[..., None]
    Sigma = ss_inv @ sigma
    proj = sT @ Sigma                      # sigma^*(sigma sigma^*)^{-1} sigma
    k = gamma / (1.0 - gamma)
    eye = np.eye(spec.noise_dim)
    N_inv = eye + k * proj
    ls = lam @ sT                           # lambda sigma^*
    ls_ah = (ls @ (ss_inv @ alpha_hat[..., None]))[..., 0]
    theta_sq = np.einsum("...i,...ij,...j->...", alpha_hat, ss_inv, alpha_hat)
    lT = np.swapaxes(lam, -1, -2)
    return DerivedCoefficients(
        gamma=gamma,
        alpha_hat=alpha_hat,
        Sigma=Sigma,
        N_inv=N_inv,
        beta_gamma=c.beta + k * ls_ah,
        U_gamma=-gamma / (2.0 * (1.0 - gamma)) * theta_sq,
        G=c.beta - ls_ah,
        theta_sq=theta_sq,
        ss_inv=ss_inv,
        a=lam @ lT,
        Q=lam @ N_inv @ lT,
        sigma=sigma,
        lam=lam,
    )


# -- assumption checks ------------------------------------------------------

@dataclass
class AssumptionReport:
    """Sampled certificate of ellipticity, inward drift and coercivity."""

    elliptic_ok: bool
    c1: float
    c2: float
    drift_ok: bool
    c_G: float
    c_G_prime: float
    coercive_ok: bool
    c0: float
    c0_prime: float
    sample_box: list
    n_samples: int
    seed: int
    elliptic_worst: Optional[list] = None
    drift_worst: Optional[list] = None
    coercive_worst: Optional[list] = None
    example_conditions: Optional[dict] = None
    gradient_condition: Optional[dict] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def all_ok(self):
        return self.elliptic_ok and self.drift_ok and self.coercive_ok

    def default_half_width(self):
        """Default PDE box half-width ``6 max(1, sqrt(c0'/c0))``."""
        if self.coercive_ok and self.c0 > 0:
            return 6.0 * max(1.0, float(np.sqrt(self.c0_prime / self.c0)))
        return 6.0

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "samples"}
        d["all_ok"] = self.all_ok
        return d

    def summary(self):
        lines = []
        mark = {True: "ok  ", False: "FAIL"}
        lines.append(f"[{mark[self.elliptic_ok]}] ellipticity: c1={self.c1:.4g}, c2={self.c2:.4g}"
                     + ("" if self.elliptic_ok else f"  worst x={self.elliptic_worst}"))
        lines.append(f"[{mark[self.drift_ok]}] inward drift G(x).x <= -c_G|x|^2 + c_G': "
                     f"c_G={self.c_G:.4g}, c_G'={self.c_G_prime:.4g}"
                     + ("" if self.drift_ok else f"  worst x={self.drift_worst}"))
        lines.append(f"[{mark[self.coercive_ok]}] coercivity theta^2 >= c0|x|^2 - c0': "
                     f"c0={self.c0:.4g}, c0'={self.c0_prime:.4g}"
                     + ("" if self.coercive_ok else f"  worst x={self.coercive_worst}"))
        if self.example_conditions is not None:
            ex = ", ".join(f"{k}={v}" for k, v in self.example_conditions.items())
            lines.append(f"       linear-Gaussian example conditions: {ex}")
        return "\n".join(lines)


def _box_bounds(box, n):
    if np.isscalar(box):
        L = float(box)
        return [(-L, L)] * n
    box = [tuple(map(float, b)) for b in box]
    if len(box) == 2 and n != 2 and all(np.isscalar(b) for b in box):
        box = [tuple(box)] * n
    if len(box) != n:
        raise ConfigurationError(f"box has {len(box)} axes, model has n={n}")
    for lo, hi in box:
        if not lo < hi:
            raise ConfigurationError(f"degenerate box axis ({lo}, {hi})")
    return box


def sample_box(box, n, samples, seed=0):
    """Scrambled Halton points in the box plus its vertices and the origin."""
    bounds = np.array(_box_bounds(box, n))
    pts = qmc.Halton(d=n, scramble=True, seed=seed).random(samples)
    pts = qmc.scale(pts, bounds[:, 0], bounds[:, 1])
    corners = np.array(np.meshgrid(*bounds, indexing="ij")).reshape(n, -1).T
    origin = np.clip(np.zeros((1, n)), bounds[:, 0], bounds[:, 1])
    return np.vstack([pts, corners, origin])


def _fit_quadratic_bound(s, y):
    """Least-squares slope of y against s = |x|^2."""
    A = np.column_stack([s, np.ones_like(s)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0])


def check_assumptions(spec: ModelSpec, box=10.0, samples=None, seed=0) -> AssumptionReport:
    """Check ellipticity, inward drift of G and coercivity of theta^2 on a box.

    Constants are fitted by least squares over the sample cloud; a flag is
    true only when the inequality holds at every sample.
    """
    n = spec.n
    if samples is None:
        samples = max(10 ** n, 256)
    bounds = _box_bounds(box, n)
    X = sample_box(bounds, n, samples, seed)
    s = np.sum(X ** 2, axis=1)

    c = eval_coefficients(spec, X)
    sT = np.swapaxes(c.sigma, -1, -2)
    e_l = np.linalg.eigvalsh(c.lam @ np.swapaxes(c.lam, -1, -2))
    e_s = np.linalg.eigvalsh(c.sigma @ sT)
    lo = np.minimum(e_l[:, 0], e_s[:, 0])
    hi = np.maximum(e_l[:, -1], e_s[:, -1])
    c1, c2 = float(lo.min()), float(hi.max())
    elliptic_ok = bool(c1 > 1e-10 and np.all(hi < COND_LIMIT * max(c1, 1e-300)))
    report = dict(elliptic_ok=elliptic_ok, c1=c1, c2=c2,
                  elliptic_worst=None if elliptic_ok else X[int(np.argmin(lo))].tolist())

    if not elliptic_ok:
        # derived quantities need an invertible sigma sigma^*
        report.update(drift_ok=False, c_G=float("nan"), c_G_prime=float("nan"),
                      coercive_ok=False, c0=float("nan"), c0_prime=float("nan"),
                      drift_worst=report["elliptic_worst"],
                      coercive_worst=report["elliptic_worst"])
    else:
        d = derived_gamma(spec, X, 0.0)
        gx = np.einsum("ni,ni->n", d.G, X)
        c_G = -_fit_quadratic_bound(s, gx)
        c_Gp = max(float(np.max(gx + c_G * s)), 1e-12)
        drift_ok = bool(c_G > 1e-10)
        ratio = np.where(s > 0, gx / np.where(s > 0, s, 1.0), -np.inf)
        c0 = _fit_quadratic_bound(s, d.theta_sq)
        c0p = max(float(np.max(c0 * s - d.theta_sq)), 1e-12)
        coercive_ok = bool(c0 > 1e-8)
        cratio = np.where(s > 0, d.theta_sq / np.where(s > 0, s, 1.0), np.inf)
        report.update(drift_ok=drift_ok, c_G=c_G, c_G_prime=c_Gp,
                      coercive_ok=coercive_ok, c0=c0, c0_prime=c0p,
                      drift_worst=None if drift_ok else X[int(np.argmax(ratio))].tolist(),
                      coercive_worst=None if coercive_ok else X[int(np.argmin(cratio))].tolist())

    return AssumptionReport(sample_box=[list(b) for b in bounds], n_samples=len(X), seed=seed,
                            example_conditions=example_conditions(spec), samples=X, **report)


def example_conditions(spec: ModelSpec, tol=1e-10):
    """Conditions (i)-(iii) of the linear-Gaussian class, or None if not applicable.

    Applies when alpha and beta are affine (or constant) and r, sigma, lambda
    are constant.
    """
    if not all(f.kind == "constant" for f in (spec.r, spec.sigma, spec.lam)):
        return None
    if spec.alpha.kind not in ("affine", "constant") or spec.beta.kind not in ("affine", "constant"):
        return None
    A = spec.alpha.linear if spec.alpha.kind == "affine" else np.zeros((spec.m, spec.n))
    B = spec.beta.linear if spec.beta.kind == "affine" else np.zeros((spec.n, spec.n))
    sigma, lam = spec.sigma.offset, spec.lam.offset
    AtA = A.T @ A
    cond_i = bool(np.linalg.eigvalsh(AtA)[0] > tol)
    cond_ii = bool(np.max(np.linalg.eigvals(B.T - AtA).real) < -tol)
    cond_iii = bool(np.max(np.abs(sigma @ (lam.T - sigma.T @ A)), initial=0.0) < 1e-8)
    return {"i": cond_i, "ii": cond_ii, "iii": cond_iii}
