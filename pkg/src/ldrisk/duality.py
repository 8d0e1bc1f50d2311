"""The chi(gamma) curve and its Legendre transform.

For ``0 < kappa < chi'(0-)`` the downside value is

    J(kappa) = -I(kappa),   I(kappa) = sup_{gamma < 0} {gamma kappa - chi(gamma)},

attained at ``gamma*`` with ``chi'(gamma*) = kappa``.  For ``kappa < 0`` the
value is ``-inf``; at and above the growth-rate limit it is 0.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .exceptions import CertificationError, ConfigurationError

log = logging.getLogger(__name__)

CHI_SCHEMA = "ldrisk-chi/1"
RATE_SCHEMA = "ldrisk-rate/1"
CURVE_TOL = 1e-6


class Branch(str, enum.Enum):
    INTERIOR = "interior"
    KAPPA_NEGATIVE = "kappa_negative"
    ABOVE_LIMIT = "kappa_at_or_above_chi_prime_limit"

    def __str__(self):
        return self.value


def _fmt(x):
    if isinstance(x, float) and math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return repr(float(x))


@dataclass
class RateResult:
    """Rate value ``I``, downside value ``J`` and maximiser ``gamma_star`` at ``kappa``."""

    kappa: float
    I: float
    J: float
    gamma_star: float
    branch: Branch
    flags: tuple = ()

    def row(self):
        return [_fmt(self.kappa), _fmt(self.I), _fmt(self.J), _fmt(self.gamma_star),
                str(self.branch)]


@dataclass
class ChiCurve:
    """Sampled chi and chi' on a strictly increasing grid of negative gammas."""

    gammas: np.ndarray
    chi: np.ndarray
    chi_prime: np.ndarray
    source: str = "pde"
    convexity_certified: bool = field(default=False, init=False)
    violations: list = field(default_factory=list, init=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=float).ravel()
        self.chi = np.asarray(self.chi, dtype=float).ravel()
        self.chi_prime = np.asarray(self.chi_prime, dtype=float).ravel()
        if not (len(self.gammas) == len(self.chi) == len(self.chi_prime)):
            raise ConfigurationError("gammas, chi and chi_prime differ in length")
        if len(self.gammas) < 2:
            raise ConfigurationError("a chi curve needs at least two points")
        if np.any(np.diff(self.gammas) <= 0):
            raise ConfigurationError("gammas must be strictly increasing")
        if np.any(self.gammas >= 0):
            raise ConfigurationError("gammas must be negative")
        if self.source not in ("pde", "oracle", "external-csv"):
            raise ConfigurationError(f"unknown source {self.source!r}")
        self.certify()
        self._build_interpolant()

    # -- certificate ------------------------------------------------------
    def second_differences(self):
        g, c = self.gammas, self.chi
        if len(g) < 3:
            return np.zeros(0)
        s = np.diff(c) / np.diff(g)
        return 2.0 * np.diff(s) / (g[2:] - g[:-2])

    def certify(self, tol: float = CURVE_TOL) -> bool:
        """Check chi <= 0, chi' >= 0 and nondecreasing, chi convex (all up to ``tol``)."""
        v = []
        i = int(np.argmax(self.chi))
        if self.chi[i] > tol:
            v.append(f"chi({self.gammas[i]:.6g}) = {self.chi[i]:.3g} > 0")
        i = int(np.argmin(self.chi_prime))
        if self.chi_prime[i] < -tol:
            v.append(f"chi'({self.gammas[i]:.6g}) = {self.chi_prime[i]:.3g} < 0")
        dp = np.diff(self.chi_prime)
        if dp.size and dp.min() < -tol:
            k = int(np.argmin(dp))
            v.append(f"chi' decreases between gamma={self.gammas[k]:.6g} and {self.gammas[k + 1]:.6g}")
        d2 = self.second_differences()
        if d2.size and d2.min() < -tol:
            k = int(np.argmin(d2))
            v.append("convexity violated on the triple gamma=("
                     + ", ".join(f"{x:.6g}" for x in self.gammas[k:k + 3])
                     + f"), second difference {d2[k]:.3g}")
        self.violations = v
        self.convexity_certified = not v
        return self.convexity_certified

    # -- interpolation ----------------------------------------------------
    def _build_interpolant(self):
        # monotone cubic on chi'; chi is its antiderivative shifted to fit the samples
        cp = np.maximum.accumulate(self.chi_prime) if self.convexity_certified else self.chi_prime
        self._dchi = PchipInterpolator(self.gammas, cp, extrapolate=False)
        anti = self._dchi.antiderivative()
        self._anti = anti
        self._shift = float(np.mean(self.chi - anti(self.gammas)))

    def chi_at(self, gamma):
        return self._anti(gamma) + self._shift

    def chi_prime_at(self, gamma):
        return self._dchi(gamma)

    @property
    def gamma_min(self):
        return float(self.gammas[0])

    @property
    def gamma_max(self):
        return float(self.gammas[-1])

    @property
    def chi_prime_limit(self):
        """chi' at the largest computed gamma, the stand-in for chi'(0-)."""
        return float(self.chi_prime[-1])

    # -- I/O --------------------------------------------------------------
    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema={CHI_SCHEMA}\n")
            fh.write(f"# convexity_certified={str(self.convexity_certified).lower()}\n")
            for v in self.violations:
                fh.write(f"# violation: {v}\n")
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["gamma", "chi", "chi_prime", "source"])
            for g, c, d in zip(self.gammas, self.chi, self.chi_prime):
                wr.writerow([repr(float(g)), repr(float(c)), repr(float(d)), self.source])

    @classmethod
    def from_csv(cls, path):
        """Read chi.csv; the certificate is recomputed from the numbers."""
        header, rows = _read_csv(path, ["gamma", "chi", "chi_prime", "source"])
        if header.get("schema") != CHI_SCHEMA:
            raise ConfigurationError(f"{path}: expected schema {CHI_SCHEMA}, got {header.get('schema')}")
        srcs = {r["source"] for r in rows}
        source = srcs.pop() if len(srcs) == 1 else "external-csv"
        curve = cls([float(r["gamma"]) for r in rows], [float(r["chi"]) for r in rows],
                    [float(r["chi_prime"]) for r in rows], source=source)
        curve.meta["declared_certified"] = header.get("convexity_certified") == "true"
        return curve


def _read_csv(path, columns):
    header = {}
    lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body and not body.startswith("violation"):
                    k, v = body.split("=", 1)
                    header[k.strip()] = v.strip()
            elif line.strip():
                lines.append(line)
    rd = csv.DictReader(lines)
    if rd.fieldnames is None or list(rd.fieldnames) != columns:
        raise ConfigurationError(f"{path}: expected columns {columns}, got {rd.fieldnames}")
    return header, list(rd)


def build_chi_curve(spec, gamma_grid: Sequence[float], grid, use_poisson_derivative: bool = True,
                    schedule=None, threads: int = 1, require_assumptions: bool = True,
                    report=None) -> ChiCurve:
    """chi from the ergodic HJB per gamma, chi' from the Poisson route or finite differences.

    Without ``use_poisson_derivative`` chi' is the second-order finite
    difference of chi along ``gamma_grid``.  A solver failure is re-raised
    with the failing gamma in the message.
    """
    from .ergodic import chi_prime, invariant_measure
    from .hjb import extract_ergodic
    from .model import check_assumptions

    gammas = np.asarray(sorted(gamma_grid), dtype=float)
    if gammas.size < 2:
        raise ConfigurationError("need at least two gamma values")
    if np.any(gammas >= 0):
        raise ConfigurationError("all gamma values must be negative")
    if require_assumptions:
        rep = report if report is not None else check_assumptions(spec)
        if not rep.coercive_ok:
            raise ConfigurationError("model fails the coercivity check required for the chi curve")

    def one(g):
        try:
            sol = extract_ergodic(spec, g, grid, schedule)
            if use_poisson_derivative:
                m = invariant_measure(spec, g, sol.w)
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always")
                    th = chi_prime(spec, g, sol.w, m).theta
                for wmsg in caught:
                    log.warning("gamma=%g: %s", g, wmsg.message)
            else:
                th = np.nan
            return sol.chi, th, sol.residual
        except Exception as exc:
            try:
                err = exc.__class__(f"at gamma={g}: {exc}")
            except Exception:
                raise exc
            raise err from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(one, gammas))
    else:
        out = [one(g) for g in gammas]
    chi = np.array([o[0] for o in out])
    dchi = np.array([o[1] for o in out])
    if not use_poisson_derivative:
        if gammas.size > 2:
            dchi = np.gradient(chi, gammas, edge_order=2)
        else:
            dchi = np.full(2, (chi[1] - chi[0]) / (gammas[1] - gammas[0]))
    curve = ChiCurve(gammas, chi, dchi, source="pde",
                     meta={"residuals": [o[2] for o in out], "derivative":
                           "poisson" if use_poisson_derivative else "finite_difference"})
    if not curve.convexity_certified:
        log.warning("chi curve not certified: %s", "; ".join(curve.violations))
    return curve


def legendre(curve: ChiCurve, kappa: float, allow_uncertified: bool = False) -> RateResult:
    """``I(kappa) = sup_{gamma<0} {gamma kappa - chi(gamma)}`` on the sampled range.

    Raises ``CertificationError`` for an uncertified curve.  When
    ``kappa <= chi'(gamma_min)`` the supremum sits at the truncation point; the
    result is flagged ``truncated`` and a warning suggests extending gamma_min.
    """
    if not curve.convexity_certified and not allow_uncertified:
        raise CertificationError("chi curve is not certified convex: " + "; ".join(curve.violations))
    kappa = float(kappa)
    if kappa < 0:
        return RateResult(kappa, math.inf, -math.inf, math.nan, Branch.KAPPA_NEGATIVE)
    lim = curve.chi_prime_limit
    if kappa >= lim:
        return RateResult(kappa, 0.0, 0.0, math.nan, Branch.ABOVE_LIMIT, flags=("out_of_range",))
    flags = ("kappa_zero_boundary",) if kappa == 0 else ()
    lo = float(curve.chi_prime[0])
    if kappa <= lo:
        warnings.warn(f"kappa={kappa:g} <= chi'(gamma_min)={lo:.4g}: the maximiser lies below "
                      f"gamma_min={curve.gamma_min:g}; extend the gamma range", RuntimeWarning)
        g = curve.gamma_min
        I = g * kappa - float(curve.chi[0])
        return RateResult(kappa, I, -I, g, Branch.INTERIOR, flags=flags + ("truncated",))
    g = brentq(lambda s: float(curve.chi_prime_at(s)) - kappa, curve.gamma_min, curve.gamma_max,
               xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    I = g * kappa - float(curve.chi_at(g))
    if I < 0:
        I = max(I, 0.0) if I > -CURVE_TOL else I
    return RateResult(kappa, float(I), float(-I), float(g), Branch.INTERIOR, flags=flags)


def rate_function_table(curve: ChiCurve, kappa_grid: Sequence[float],
                        allow_uncertified: bool = False) -> list:
    """:func:`legendre` at every kappa in ``kappa_grid`` (order preserved)."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = [legendre(curve, k, allow_uncertified) for k in kappa_grid]
    if caught:
        warnings.warn(f"{len(caught)} kappa value(s) fell below chi'(gamma_min); "
                      "results flagged 'truncated'", RuntimeWarning)
    return out


def inverse_legendre(kappas, I, gammas):
    """``chi(gamma) = sup_kappa {gamma kappa - I(kappa)}`` over the sampled kappas."""
    kappas = np.asarray(kappas, dtype=float)
    I = np.asarray(I, dtype=float)
    g = np.asarray(gammas, dtype=float)
    return np.max(g[:, None] * kappas[None, :] - I[None, :], axis=1)


def double_legendre_error(curve: ChiCurve, n_kappa: int = 4000) -> float:
    """Sup-norm error of chi recovered by transforming twice, on the interior range."""
    k = np.linspace(curve.chi_prime[0], curve.chi_prime[-1], n_kappa + 2)[1:-1]
    res = [legendre(curve, x) for x in k]
    I = np.array([r.I for r in res])
    rec = inverse_legendre(k, I, curve.gammas)
    return float(np.max(np.abs(rec - curve.chi)))


def write_rate_csv(path, results: Sequence[RateResult], meta: Optional[dict] = None):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={RATE_SCHEMA}\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["kappa", "I", "J", "gamma_star", "branch"])
        for r in results:
            wr.writerow(r.row())


def read_rate_csv(path) -> list:
    header, rows = _read_csv(path, ["kappa", "I", "J", "gamma_star", "branch"])
    if header.get("schema") != RATE_SCHEMA:
        raise ConfigurationError(f"{path}: expected schema {RATE_SCHEMA}")
    return [RateResult(float(r["kappa"]), float(r["I"]), float(r["J"]), float(r["gamma_star"]),
                       Branch(r["branch"])) for r in rows]
