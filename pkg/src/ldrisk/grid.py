"""Uniform grids, grid-sampled fields and finite-difference operators.

Operators act on node values flattened in C (row-major) order.  Two boundary
treatments are provided:

* ``"extrapolate"`` -- quadratic extrapolation through a ghost node (zero
  third normal derivative).  Exact for quadratics; used by the HJB solvers.
* ``"reflect"`` -- a Markov-chain generator (nonnegative off-diagonal rates,
  rows summing to zero) in which moves leaving the box are suppressed.  Used
  for invariant measures and Poisson equations.
"""
from __future__ import annotations

import csv
import functools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError

MIN_NODES = 16


@dataclass(frozen=True)
class Grid:
    lo: tuple
    hi: tuple
    num: tuple

    def __post_init__(self):
        lo, hi, num = tuple(map(float, self.lo)), tuple(map(float, self.hi)), tuple(map(int, self.num))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "num", num)
        if not (len(lo) == len(hi) == len(num)):
            raise ConfigurationError("grid lo/hi/num must have equal length")
        if len(num) not in (1, 2):
            raise ConfigurationError(f"grid dimension {len(num)} not supported (1 or 2)")
        for a, b, k in zip(lo, hi, num):
            if not a < b:
                raise ConfigurationError(f"grid axis requires lo < hi, got ({a}, {b})")
            if k < MIN_NODES:
                raise ConfigurationError(f"grid axis needs >= {MIN_NODES} nodes, got {k}")

    @classmethod
    def box(cls, half_width, dim=1, num=201):
        L = float(half_width)
        return cls((-L,) * dim, (L,) * dim, (int(num),) * dim)

    @property
    def dim(self):
        return len(self.num)

    @property
    def shape(self):
        return self.num

    @property
    def size(self):
        return int(np.prod(self.num))

    @property
    def spacing(self):
        return tuple((b - a) / (k - 1) for a, b, k in zip(self.lo, self.hi, self.num))

    @property
    def axes(self):
        return [np.linspace(a, b, k) for a, b, k in zip(self.lo, self.hi, self.num)]

    @property
    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def index_of(self, x):
        """Flat index of the node nearest to ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = [int(np.clip(np.rint((xi - a) / h), 0, k - 1))
               for xi, a, h, k in zip(x, self.lo, self.spacing, self.num)]
        return int(np.ravel_multi_index(idx, self.num))

    def boundary_mask(self):
        mask = np.zeros(self.num, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask.ravel()

    def inner_mask(self, fraction):
        """Nodes within ``fraction`` of the half-width of every axis, about the centre."""
        pts = self.points
        mid = 0.5 * (np.array(self.lo) + np.array(self.hi))
        half = 0.5 * (np.array(self.hi) - np.array(self.lo))
        return np.all(np.abs(pts - mid) <= fraction * half + 1e-12, axis=1)

    def cell_volume(self):
        return float(np.prod(self.spacing))

    def integrate(self, values):
        """Trapezoid quadrature of node values over the box."""
        v = np.asarray(values, dtype=float).reshape(self.num)
        for ax in self.axes:
            v = np.trapezoid(v, ax, axis=0)
        return float(v)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "num": list(self.num)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["num"]))


# -- 1-D building blocks ----------------------------------------------------

def _d1_central(k, h):
    """First derivative: central inside, second-order one-sided at the ends."""
    main = np.zeros(k)
    upper = np.full(k - 1, 0.5 / h)
    lower = np.full(k - 1, -0.5 / h)
    D = sp.diags([lower, main, upper], [-1, 0, 1], format="lil")
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[k - 1, k - 3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def _d2(k, h):
    """Second derivative; end rows use a zero third derivative ghost node."""
    D = sp.diags([np.ones(k - 1), -2 * np.ones(k), np.ones(k - 1)], [-1, 0, 1], format="lil")
    D[0, :3] = [1.0, -2.0, 1.0]
    D[k - 1, k - 3:] = [1.0, -2.0, 1.0]
    return (D / h ** 2).tocsr()


def _d1_forward(k, h):
    D = sp.diags([-np.ones(k), np.ones(k - 1)], [0, 1], format="lil")
    D[k - 1, :] = 0
    return (D / h).tocsr()


def _d1_backward(k, h):
    D = sp.diags([np.ones(k), -np.ones(k - 1)], [0, -1], format="lil")
    D[0, :] = 0
    return (D / h).tocsr()


def _on_axis(grid, k, op):
    mats = [sp.identity(n, format="csr") for n in grid.num]
    mats[k] = op
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


@functools.lru_cache(maxsize=32)
def _operators(grid):
    ops = {"Dc": [], "Df": [], "Db": [], "D2": []}
    for k, (n, h) in enumerate(zip(grid.num, grid.spacing)):
        ops["Dc"].append(_on_axis(grid, k, _d1_central(n, h)))
        ops["Df"].append(_on_axis(grid, k, _d1_forward(n, h)))
        ops["Db"].append(_on_axis(grid, k, _d1_backward(n, h)))
        ops["D2"].append(_on_axis(grid, k, _d2(n, h)))
    ops["Dxy"] = (ops["Dc"][0] @ ops["Dc"][1]).tocsr() if grid.dim == 2 else None
    return ops


def gradient_operators(grid):
    """Central (one-sided at the boundary) first-derivative operator per axis."""
    return _operators(grid)["Dc"]


def _axis_boundary(grid, k):
    idx = np.indices(grid.num)[k].ravel()
    return (idx == 0) | (idx == grid.num[k] - 1)


def diffusion_operator(grid, a):
    """``0.5 tr[a D^2]`` with extrapolating boundaries; ``a`` has shape (N, d, d)."""
    a = np.asarray(a, dtype=float).reshape(grid.size, grid.dim, grid.dim)
    ops = _operators(grid)
    out = sp.csr_matrix((grid.size, grid.size))
    for k in range(grid.dim):
        out = out + sp.diags(0.5 * a[:, k, k]) @ ops["D2"][k]
    if grid.dim == 2:
        out = out + sp.diags(a[:, 0, 1]) @ ops["Dxy"]
    return out.tocsr()


def drift_operator(grid, b, a):
    """``b . D`` with central differences where monotone, upwind elsewhere.

    Boundary nodes always use the second-order one-sided stencil.
    """
    b = np.asarray(b, dtype=float).reshape(grid.size, grid.dim)
    a = np.asarray(a, dtype=float).reshape(grid.size, grid.dim, grid.dim)
    ops = _operators(grid)
    out = sp.csr_matrix((grid.size, grid.size))
    for k, h in enumerate(grid.spacing):
        bk = b[:, k]
        central = (np.abs(bk) * h <= a[:, k, k]) | _axis_boundary(grid, k)
        Dc, Df, Db = ops["Dc"][k], ops["Df"][k], ops["Db"][k]
        up = ~central
        out = out + sp.diags(np.where(central, bk, 0.0)) @ Dc \
            + sp.diags(np.where(up, np.maximum(bk, 0.0), 0.0)) @ Df \
            + sp.diags(np.where(up, np.minimum(bk, 0.0), 0.0)) @ Db
    return out.tocsr()


def hjb_linear_operator(grid, a, b):
    return (diffusion_operator(grid, a) + drift_operator(grid, b, a)).tocsr()


def markov_generator(grid, a, b):
    """Monotone generator ``0.5 tr[a D^2] + b.D`` with reflecting boundaries.

    Returns a CSR matrix with nonnegative off-diagonal entries and zero row
    sums.  Moves that would leave the box are dropped.
    """
    a = np.asarray(a, dtype=float).reshape(grid.size, grid.dim, grid.dim)
    b = np.asarray(b, dtype=float).reshape(grid.size, grid.dim)
    idx = np.indices(grid.num).reshape(grid.dim, -1).T
    N = grid.size
    rows, cols, vals = [], [], []

    def add(shift, rate):
        tgt = idx + np.asarray(shift)
        ok = np.all((tgt >= 0) & (tgt < np.asarray(grid.num)), axis=1) & (rate != 0)
        src = np.nonzero(ok)[0]
        rows.append(src)
        cols.append(np.ravel_multi_index(tgt[ok].T, grid.num))
        vals.append(rate[ok])

    h = grid.spacing
    cross = np.zeros(N)
    if grid.dim == 2:
        cross = a[:, 0, 1] / (2 * h[0] * h[1])
    for k in range(grid.dim):
        diff = 0.5 * a[:, k, k] / h[k] ** 2 - np.abs(cross)
        bk = b[:, k]
        central = np.abs(bk) / (2 * h[k]) <= diff
        up = np.where(central, diff + bk / (2 * h[k]), diff + np.maximum(bk, 0) / h[k])
        down = np.where(central, diff - bk / (2 * h[k]), diff + np.maximum(-bk, 0) / h[k])
        e = np.zeros(grid.dim, dtype=int)
        e[k] = 1
        add(e, up)
        add(-e, down)
    if grid.dim == 2:
        pos, neg = np.maximum(cross, 0), np.maximum(-cross, 0)
        add((1, 1), pos)
        add((-1, -1), pos)
        add((1, -1), neg)
        add((-1, 1), neg)
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    return Q.tocsr()


# -- fields -----------------------------------------------------------------

def _interp_weights(grid, points):
    """Multilinear interpolation stencil with clamping; returns (idx, w, clamped)."""
    pts = np.asarray(points, dtype=float).reshape(-1, grid.dim)
    lo, h, num = np.array(grid.lo), np.array(grid.spacing), np.array(grid.num)
    s = (pts - lo) / h
    clamped = np.any((s < 0) | (s > num - 1), axis=1)
    s = np.clip(s, 0, num - 1)
    i0 = np.minimum(np.floor(s).astype(int), num - 2)
    t = s - i0
    corners, weights = [], []
    for bits in np.ndindex(*(2,) * grid.dim):
        bits = np.array(bits)
        corners.append(np.ravel_multi_index((i0 + bits).T, grid.num))
        weights.append(np.prod(np.where(bits, t, 1 - t), axis=1))
    return np.stack(corners, 1), np.stack(weights, 1), clamped


@dataclass
class ScalarField:
    """Node values of a function on a grid, optionally pinned at an anchor."""

    grid: Grid
    values: np.ndarray
    anchor: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.num)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def flat(self):
        return self.values.ravel()

    def gradient(self):
        """Array of shape (N, dim); interior nodes use central differences."""
        return np.stack([D @ self.flat for D in gradient_operators(self.grid)], axis=1)

    def hessian(self):
        ops = _operators(self.grid)
        d = self.grid.dim
        H = np.empty((self.grid.size, d, d))
        for k in range(d):
            H[:, k, k] = ops["D2"][k] @ self.flat
        if d == 2:
            H[:, 0, 1] = H[:, 1, 0] = ops["Dxy"] @ self.flat
        return H

    def __call__(self, points):
        """Multilinear interpolation; points outside the box are clamped."""
        idx, w, _ = _interp_weights(self.grid, points)
        return np.sum(self.flat[idx] * w, axis=1)

    def value_at(self, x):
        return float(self(np.atleast_1d(np.asarray(x, dtype=float))[None, :])[0])

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "values": self.flat.tolist(),
                "anchor": None if self.anchor is None else list(self.anchor)}

    @classmethod
    def from_dict(cls, d):
        anchor = d.get("anchor")
        return cls(Grid.from_dict(d["grid"]), np.asarray(d["values"]),
                   None if anchor is None else tuple(anchor))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path, name="value", extra=None):
        """Write ``x[, y], value`` rows; ``extra`` maps column name -> node values."""
        cols = ["x", "y"][: self.grid.dim] + [name] + list(extra or {})
        pts = self.grid.points
        data = [self.flat] + [np.asarray(v).ravel() for v in (extra or {}).values()]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for i in range(self.grid.size):
                wr.writerow([repr(float(p)) for p in pts[i]] + [repr(float(c[i])) for c in data])


@dataclass
class ValueSurface:
    """Values v(t, x) on ``times x grid``; ``values[k]`` is the slice at ``times[k]``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape((len(self.times),) + self.grid.num)

    def slice(self, k) -> ScalarField:
        return ScalarField(self.grid, self.values[k])

    def slice_at(self, t) -> ScalarField:
        """Slice at the last stored time not after ``t``."""
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1))
        return self.slice(k)

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "times": self.times.tolist(),
                "values": self.values.reshape(len(self.times), -1).tolist(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls(Grid.from_dict(d["grid"]), np.asarray(d["times"]), np.asarray(d["values"]),
                   d.get("meta", {}))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    def to_csv(self, path):
        cols = ["t"] + ["x", "y"][: self.grid.dim] + ["value"]
        pts = self.grid.points
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for k, t in enumerate(self.times):
                vals = self.values[k].ravel()
                for i in range(self.grid.size):
                    wr.writerow([repr(float(t))] + [repr(float(p)) for p in pts[i]] + [repr(float(vals[i]))])


@dataclass
class VectorField:
    """Vector values per node, e.g. a feedback allocation or a drift."""

    grid: Grid
    values: np.ndarray          # (N, k)
    one_sided: np.ndarray       # (N,) nodes whose gradient used one-sided differences

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.size, -1)

    def __call__(self, points):
        """Multilinear interpolation; returns (values, number of clamped points)."""
        if self.grid.dim == 1:
            # uniform axis: direct cell lookup, clamped at the ends
            x = np.asarray(points, dtype=float).reshape(-1)
            lo, h, num = self.grid.lo[0], self.grid.spacing[0], self.grid.num[0]
            s = (x - lo) * (1.0 / h)
            clamped = int(np.count_nonzero((s < 0) | (s > num - 1)))
            np.clip(s, 0, num - 1, out=s)
            i = np.minimum(s.astype(np.intp), num - 2)
            t = (s - i)[:, None]
            v = self.values
            return v[i] + t * (v[i + 1] - v[i]), clamped
        idx, w, clamped = _interp_weights(self.grid, points)
        out = np.einsum("pc,pck->pk", w, self.values[idx])
        return out, int(np.count_nonzero(clamped))
