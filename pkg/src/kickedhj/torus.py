"""Periodic grid fields on the flat torus [0,1)^d for d in {1, 2}.

Fields are stored flat in C order, so index ``i0 * n + i1`` in two
dimensions.  All arrays of points use shape ``(m, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

__all__ = [
    "GridSpec",
    "TorusField",
    "TorusPoint",
    "wrap",
    "centered",
    "torus_distance",
    "sup_norm_mod_const",
    "weighted_norm",
    "weighted_norm_mod_const",
    "gradient_fd",
    "hessian_fd",
    "periodic_interpolator",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with ``n_per_axis`` points on each axis."""

    d: int
    n_per_axis: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if self.n_per_axis < 8:
            raise ValueError(f"n_per_axis must be >= 8, got {self.n_per_axis}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_per_axis

    @property
    def size(self) -> int:
        return self.n_per_axis**self.d

    @property
    def shape(self) -> tuple:
        return (self.n_per_axis,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    def axis(self) -> np.ndarray:
        return np.arange(self.n_per_axis) * self.spacing

    def points(self) -> np.ndarray:
        """Grid coordinates in [0,1)^d, shape (size, d)."""
        axes = np.meshgrid(*([self.axis()] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    def centered_points(self) -> np.ndarray:
        """Grid coordinates lifted to [-1/2, 1/2)^d."""
        return centered(self.points())

    def index_of(self, coords) -> int:
        """Flat index of the grid point nearest to ``coords``."""
        c = np.atleast_1d(np.asarray(coords, dtype=float))
        idx = np.rint(wrap(c) * self.n_per_axis).astype(int) % self.n_per_axis
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def zeros(self) -> "TorusField":
        return TorusField(self, np.zeros(self.size))

    def ones(self) -> "TorusField":
        return TorusField(self, np.ones(self.size))

    def from_function(self, f: Callable[[np.ndarray], np.ndarray]) -> "TorusField":
        """Sample ``f`` (taking an (m, d) array of centered lifts) on the grid."""
        return TorusField(self, np.asarray(f(self.centered_points()), dtype=float))


@dataclass(frozen=True, eq=False)
class TorusField:
    """Samples of a periodic function on a :class:`GridSpec`."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.shape != (self.spec.size,):
            raise ValueError(f"expected {self.spec.size} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.spec.size

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.spec.shape)

    def with_values(self, values) -> "TorusField":
        return TorusField(self.spec, values)


@dataclass(frozen=True)
class TorusPoint:
    """A point of the torus with coordinates in [0,1)."""

    coords: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.coords))
        if not all(0.0 <= v < 1.0 for v in c):
            raise ValueError(f"torus coordinates must lie in [0,1), got {c}")
        object.__setattr__(self, "coords", c)

    @classmethod
    def wrap(cls, coords) -> "TorusPoint":
        return cls(tuple(wrap(np.atleast_1d(np.asarray(coords, dtype=float)))))

    @property
    def d(self) -> int:
        return len(self.coords)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


def wrap(x):
    """Reduce coordinates into [0, 1)."""
    r = np.mod(x, 1.0)
    # np.mod can return exactly 1.0 for tiny negative inputs
    return np.where(r >= 1.0, 0.0, r)


def centered(x):
    """Reduce coordinates into [-1/2, 1/2)."""
    return wrap(np.asarray(x) + 0.5) - 0.5


def torus_distance(x, y) -> float:
    """Distance ``min_k |x - y + k|`` on the torus.

    Accepts :class:`TorusPoint` or arbitrary lifts; broadcasts over leading
    axes of point arrays.
    """
    diff = centered(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return np.sqrt(np.sum(np.atleast_1d(diff) ** 2, axis=-1))


def sup_norm_mod_const(f) -> float:
    """``inf_C sup |f + C|``, which is half the oscillation of ``f``."""
    v = np.asarray(f, dtype=float)
    return 0.5 * float(v.max() - v.min())


def _check_weight(V, beta):
    V = np.asarray(V, dtype=float)
    if np.any(V < 0):
        raise ValueError("V must be non-negative")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if np.isinf(beta):
        # limit of 1/(1 + beta V): only the zero set of V carries weight
        return np.where(V == 0, 1.0, 0.0)
    return 1.0 / (1.0 + beta * V)


def weighted_norm(f, V, beta: float) -> float:
    """``sup |f| / (1 + beta V)``."""
    w = _check_weight(V, beta)
    return float(np.max(np.abs(np.asarray(f, dtype=float)) * w))


def weighted_norm_mod_const(f, V, beta: float, tol: float = 1e-12) -> float:
    """``inf_C sup |f + C| / (1 + beta V)``.

    The objective is convex in ``C`` and its minimizer lies in
    ``[-max f, -min f]``, so a ternary search is enough.
    """
    w = _check_weight(V, beta)
    v = np.asarray(f, dtype=float)

    def obj(c):
        return np.max(np.abs(v + c) * w)

    lo, hi = -v.max(), -v.min()
    while hi - lo > tol:
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if obj(m1) <= obj(m2):
            hi = m2
        else:
            lo = m1
    return float(min(obj(lo), obj(hi), obj(0.5 * (lo + hi))))


def gradient_fd(f: TorusField) -> np.ndarray:
    """Centered periodic differences, returns shape (size, d)."""
    g = np.asarray(f).reshape(f.spec.shape)
    h = f.spec.spacing
    comps = [(np.roll(g, -1, axis=a) - np.roll(g, 1, axis=a)) / (2 * h) for a in range(f.spec.d)]
    return np.stack([c.ravel() for c in comps], axis=-1)


def hessian_fd(f: TorusField) -> np.ndarray:
    """Centered second differences, returns shape (size, d, d)."""
    g = np.asarray(f).reshape(f.spec.shape)
    h = f.spec.spacing
    d = f.spec.d
    out = np.empty((f.spec.size, d, d))
    for a in range(d):
        out[:, a, a] = ((np.roll(g, -1, a) - 2 * g + np.roll(g, 1, a)) / h**2).ravel()
        for b in range(a + 1, d):
            pp = np.roll(np.roll(g, -1, a), -1, b)
            mm = np.roll(np.roll(g, 1, a), 1, b)
            pm = np.roll(np.roll(g, -1, a), 1, b)
            mp = np.roll(np.roll(g, 1, a), -1, b)
            out[:, a, b] = out[:, b, a] = ((pp + mm - pm - mp) / (4 * h**2)).ravel()
    return out


def periodic_interpolator(f: TorusField):
    """Cubic periodic interpolant of ``f``; returns ``interp(points, nu=0)``.

    In one dimension ``nu`` selects the derivative order of the periodic
    spline.  In two dimensions only values are available.
    """
    spec = f.spec
    n = spec.n_per_axis
    if spec.d == 1:
        xs = np.append(spec.axis(), 1.0)
        ys = np.append(np.asarray(f), f.values[0])
        spline = CubicSpline(xs, ys, bc_type="periodic")

        def interp(points, nu=0):
            p = wrap(np.asarray(points, dtype=float).reshape(-1))
            return spline(p, nu)

        return interp

    pad = 3
    ax = (np.arange(-pad, n + pad)) * spec.spacing
    g = np.pad(f.as_grid(), pad, mode="wrap")
    rgi = RegularGridInterpolator((ax, ax), g, method="cubic")

    def interp(points, nu=0):
        if nu != 0:
            raise NotImplementedError("derivatives are only provided for d=1")
        p = wrap(np.asarray(points, dtype=float).reshape(-1, 2))
        return rgi(p)

    return interp
