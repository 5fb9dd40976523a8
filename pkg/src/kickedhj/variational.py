"""Inviscid side: generating function, Lax-Oleinik operator, weak KAM solution.

The min-plus operator ``T(phi)(x) = min_y {phi(y) + A(y, x)}`` is evaluated
on the grid and each column minimum is refined by a quadratic fit on the
3^d stencil around the grid argmin.  Matrices indexed ``[y, x]`` hold the
source point on rows and the target point on columns throughout the
package.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import linregress

from .potential import Potential
from .torus import (
    GridSpec,
    TorusField,
    TorusPoint,
    centered,
    gradient_fd,
    hessian_fd,
    periodic_interpolator,
    sup_norm_mod_const,
    wrap,
)

__all__ = [
    "WeakKamSolution",
    "ContractionReport",
    "InviscidConvergence",
    "WeakKamConvergenceError",
    "generating_function",
    "periodic_action",
    "action_matrix",
    "lax_oleinik_apply",
    "solve_weak_kam",
    "backward_minimizer",
    "contraction_report",
    "semiconcavity_probe",
    "inviscid_convergence",
    "detect_cut_locus",
]


class WeakKamConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"value iteration did not converge: residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


def generating_function(y, x, F: Potential):
    """``h(y, x) = |x - y|^2 / 2 + F(y)`` for lifts ``y, x`` of shape (m, d)."""
    y = F._prep(y)
    x = F._prep(x)
    return 0.5 * np.sum((x - y) ** 2, axis=1) + F.value(y)


def periodic_action(y, x, F: Potential):
    """``A(y, x) = min_k h(y + k, x)`` over shifts with ``|k|_inf <= 1``."""
    y = F._prep(y)
    x = F._prep(x)
    best = None
    for k in itertools.product((-1, 0, 1), repeat=F.d):
        v = generating_function(y + np.asarray(k, dtype=float), x, F)
        best = v if best is None else np.minimum(best, v)
    return best


def _action_columns(spec: GridSpec, F: Potential, xs: np.ndarray) -> np.ndarray:
    """``A(y_j, x_i)`` for all grid ``y_j`` and the given points, shape (size, m)."""
    y = spec.points()
    xs = np.asarray(xs, dtype=float).reshape(-1, spec.d)
    sq = np.zeros((spec.size, xs.shape[0]))
    for a in range(spec.d):
        sq += centered(xs[None, :, a] - y[:, None, a]) ** 2
    return 0.5 * sq + F.value(y)[:, None]


def action_matrix(spec: GridSpec, F: Potential) -> np.ndarray:
    """Dense ``A[y, x]`` over the grid."""
    return _action_columns(spec, F, spec.points())


# stencil offsets and least-squares quadratic fit for d = 2
_OFFSETS_2D = np.array(list(itertools.product((-1, 0, 1), repeat=2)), dtype=float)
_DESIGN_2D = np.column_stack(
    [
        np.ones(9),
        _OFFSETS_2D[:, 0],
        _OFFSETS_2D[:, 1],
        0.5 * _OFFSETS_2D[:, 0] ** 2,
        _OFFSETS_2D[:, 0] * _OFFSETS_2D[:, 1],
        0.5 * _OFFSETS_2D[:, 1] ** 2,
    ]
)
_FIT_2D = np.linalg.pinv(_DESIGN_2D)


def _minimize_columns(phi: np.ndarray, A: np.ndarray, spec: GridSpec, count_ties=False):
    """Column minima of ``phi[:, None] + A`` with quadratic polish.

    Returns ``(values, ybar, ties)`` where ``ybar`` holds torus coordinates
    of the polished minimizers, shape (m, d).
    """
    G = phi[:, None] + A
    m = G.shape[1]
    cols = np.arange(m)
    j = np.argmin(G, axis=0)  # first occurrence = smallest flat index
    g0 = G[j, cols]
    n = spec.n_per_axis
    h = spec.spacing
    ties = 0
    if count_ties:
        tol = 1e-12 * (1.0 + np.abs(g0))
        ties = int(np.count_nonzero((G <= g0 + tol).sum(axis=0) > 1))

    if spec.d == 1:
        gp = G[(j + 1) % n, cols]
        gm = G[(j - 1) % n, cols]
        curv = gp - 2 * g0 + gm
        ok = curv > 0
        s = np.zeros(m)
        val = g0.copy()
        s[ok] = 0.5 * (gm[ok] - gp[ok]) / curv[ok]
        val[ok] = g0[ok] - (gp[ok] - gm[ok]) ** 2 / (8 * curv[ok])
        ybar = wrap(j * h + s * h)[:, None]
        return val, ybar, ties

    j0, j1 = np.unravel_index(j, spec.shape)
    nb = np.empty((9, m))
    for r, (s0, s1) in enumerate(_OFFSETS_2D.astype(int)):
        nb[r] = G[((j0 + s0) % n) * n + (j1 + s1) % n, cols]
    coef = _FIT_2D @ nb
    b = coef[1:3].T
    H = np.empty((m, 2, 2))
    H[:, 0, 0] = coef[3]
    H[:, 1, 1] = coef[5]
    H[:, 0, 1] = H[:, 1, 0] = coef[4]
    det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
    pd = (H[:, 0, 0] > 0) & (det > 0)
    s = np.zeros((m, 2))
    val = g0.copy()
    if np.any(pd):
        sol = -np.linalg.solve(H[pd], b[pd][..., None])[..., 0]
        v = coef[0, pd] + 0.5 * np.einsum("ij,ij->i", b[pd], sol)
        good = (np.abs(sol).max(axis=1) <= 1.0) & (v <= g0[pd])
        idx = np.flatnonzero(pd)[good]
        s[idx] = sol[good]
        val[idx] = v[good]
    base = np.stack([j0, j1], axis=1) * h
    return val, wrap(base + s * h), ties


def lax_oleinik_apply(phi: TorusField, F: Potential, action: np.ndarray | None = None,
                      polish: bool = True) -> TorusField:
    """One application of ``T(phi)(x) = min_y {phi(y) + A(y, x)}``.

    With ``polish=False`` the minimum is taken over grid ``y`` only; that
    operator is exactly monotone and non-expansive.  The quadratic polish
    is second-order accurate for smooth ``phi`` but can undershoot the
    grid minimum on rough input, so order preservation then holds only
    up to that correction.
    """
    A = action_matrix(phi.spec, F) if action is None else action
    if not polish:
        return phi.with_values((np.asarray(phi)[:, None] + A).min(axis=0))
    val, _, _ = _minimize_columns(np.asarray(phi), A, phi.spec)
    return phi.with_values(val)


def detect_cut_locus(psi: TorusField, factor: float = 5.0) -> np.ndarray:
    """Grid points where the discrete Hessian of ``psi`` spikes.

    A point is flagged when the largest absolute eigenvalue of the
    centered-difference Hessian exceeds ``factor`` times its median over
    the grid.  Direct neighbours of flagged points are flagged as well,
    since their centered differences straddle the singularity.
    """
    H = hessian_fd(psi)
    mag = np.abs(np.linalg.eigvalsh(H)).max(axis=1)
    flag = mag > factor * np.median(mag)
    g = flag.reshape(psi.spec.shape)
    grown = g.copy()
    for a in range(psi.spec.d):
        grown |= np.roll(g, 1, a) | np.roll(g, -1, a)
    return grown.ravel()


@dataclass(frozen=True, eq=False)
class WeakKamSolution:
    """Fixed point of the normalized Lax-Oleinik iteration.

    Attributes
    ----------
    psi : TorusField
        Weak KAM solution with ``psi(0) = 0``.
    grad_psi : ndarray, shape (size, d)
        Finite-difference gradient; NaN on the detected cut locus.
    ybar : ndarray, shape (size, d)
        Polished backward minimizers in torus coordinates.
    momentum : ndarray, shape (size, d)
        ``x - ybar(x)`` taken on the short lift, i.e. the second partial of
        ``h`` at the minimizer.  Valid everywhere, including the cut locus.
    residual : float
        ``||T psi - psi||_*`` for the returned ``psi``.
    iterations : int
    cut_locus : ndarray of bool
    ties : int
        Columns whose grid argmin was not unique.
    clamped : float
        Magnitude of the most negative iterate value clamped to zero.
    """

    psi: TorusField
    grad_psi: np.ndarray = field(repr=False)
    ybar: np.ndarray = field(repr=False)
    momentum: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    cut_locus: np.ndarray = field(repr=False)
    ties: int
    clamped: float
    potential: Potential

    @property
    def spec(self) -> GridSpec:
        return self.psi.spec

    @cached_property
    def interpolator(self):
        return periodic_interpolator(self.psi)

    def psi_at(self, points) -> np.ndarray:
        return self.interpolator(points)

    @cached_property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.momentum, axis=1).max())


def solve_weak_kam(
    F: Potential,
    spec: GridSpec,
    tol: float = 1e-10,
    max_iter: int = 5000,
    action: np.ndarray | None = None,
) -> WeakKamSolution:
    """Value iteration ``phi <- T(phi) - T(phi)(0)`` from ``phi = 0``.

    Raises
    ------
    WeakKamConvergenceError
        If ``||T(phi) - phi||_*`` stays above ``tol`` for ``max_iter`` steps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = action_matrix(spec, F) if action is None else action
    phi = np.zeros(spec.size)
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        nxt, _, _ = _minimize_columns(phi, A, spec)
        nxt -= nxt[0]
        res = sup_norm_mod_const(nxt - phi)
        phi = nxt
        if res < tol:
            break
    else:
        raise WeakKamConvergenceError(res, max_iter)

    clamped = float(max(0.0, -phi.min()))
    psi_vals = np.maximum(phi, 0.0)
    psi_vals[0] = 0.0
    val, ybar, ties = _minimize_columns(psi_vals, A, spec, count_ties=True)
    residual = sup_norm_mod_const(val - psi_vals)

    psi = TorusField(spec, psi_vals)
    cut = detect_cut_locus(psi)
    grad = gradient_fd(psi)
    grad[cut] = np.nan
    momentum = centered(spec.points() - ybar)
    return WeakKamSolution(
        psi=psi,
        grad_psi=grad,
        ybar=ybar,
        momentum=momentum,
        residual=residual,
        iterations=it,
        cut_locus=cut,
        ties=ties,
        clamped=clamped,
        potential=F,
    )


def backward_minimizer(x, sol: WeakKamSolution, F: Potential | None = None) -> TorusPoint:
    """Polished argmin of ``psi(y) + A(y, x)`` for a single point ``x``.

    ``x`` may be a flat grid index, a :class:`TorusPoint` or coordinates;
    off-grid points are allowed.
    """
    F = sol.potential if F is None else F
    spec = sol.spec
    if isinstance(x, (int, np.integer)):
        xs = spec.points()[int(x)]
    else:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
    A = _action_columns(spec, F, xs[None, :])
    _, ybar, _ = _minimize_columns(np.asarray(sol.psi), A, spec)
    return TorusPoint.wrap(ybar[0])


@dataclass(frozen=True)
class ContractionReport:
    """Empirical contraction of ``psi`` along one backward minimization step.

    ``kappa_sq_emp`` is the worst ratio ``psi(ybar(x)) / psi(x)`` where
    ``psi(x)`` exceeds the discretization floor; ``near_zero_ratios`` are
    the same ratios at the grid points closest to the origin, which should
    approach ``kappa0_sq``.
    """

    kappa_sq_emp: float
    kappa0_pred: float
    kappa0_sq: float
    quadratic_lower_c: float
    near_zero_ratios: np.ndarray
    far_ratio_max: float
    far_bound: float
    eps_floor: float


def contraction_report(sol: WeakKamSolution, hyp, n_near: int = 10, far_radius: float = 0.25) -> ContractionReport:
    spec = sol.spec
    psi = np.asarray(sol.psi)
    eps_floor = 10 * spec.spacing**2
    psi_y = np.maximum(sol.psi_at(sol.ybar), 0.0)
    r = np.linalg.norm(spec.centered_points(), axis=1)

    live = psi > eps_floor
    ratios = np.full(spec.size, np.nan)
    ratios[live] = psi_y[live] / psi[live]
    kappa_sq = float(np.nanmax(ratios))
    if not kappa_sq < 1:
        raise RuntimeError(f"contraction ratio {kappa_sq:.4f} >= 1; solve is broken or grid too coarse")

    order = np.argsort(r, kind="stable")
    near = order[1 : n_near + 1]
    near_ratios = psi_y[near] / psi[near]

    nz = r > 0
    c_low = float(np.min(psi[nz] / r[nz] ** 2))

    far = r >= far_radius
    if np.any(far):
        # on minimizers A(ybar(x), x) = psi(x) - psi(ybar(x)), so this is min A
        delta = float(np.min(psi[far] - psi_y[far]))
        far_bound = 1.0 / (1.0 + delta / psi.max())
        far_ratio = float(np.max(psi_y[far] / psi[far]))
    else:
        far_bound = far_ratio = np.nan

    return ContractionReport(
        kappa_sq_emp=kappa_sq,
        kappa0_pred=float(hyp.kappa0),
        kappa0_sq=float(hyp.kappa0) ** 2,
        quadratic_lower_c=c_low,
        near_zero_ratios=near_ratios,
        far_ratio_max=far_ratio,
        far_bound=far_bound,
        eps_floor=eps_floor,
    )


def semiconcavity_probe(f: TorusField) -> float:
    """Largest eigenvalue of the discrete Hessian over the grid."""
    return float(np.linalg.eigvalsh(hessian_fd(f))[:, -1].max())


@dataclass(frozen=True)
class InviscidConvergence:
    distances: np.ndarray
    burn_in: int
    window: np.ndarray
    slope: float
    fit_r2: float
    halving_r2: float  # R^2 when the window starts at the first d_n < d_0/2


def _fit(dist, window):
    if window.size < 3:
        return np.nan, np.nan
    fit = linregress(window, np.log(dist[window]))
    return float(fit.slope), float(fit.rvalue**2)


def inviscid_convergence(
    phi0: TorusField,
    sol: WeakKamSolution,
    n_iter: int = 25,
    floor: float = 1e-11,
    action: np.ndarray | None = None,
    settle: float = 0.1,
) -> InviscidConvergence:
    """Track ``||T^n phi0 - psi||_*`` and fit its exponential decay.

    The transient ends at the first ``n`` with ``d_n < d_0 / 2`` after
    which two consecutive one-step rates ``log(d_k / d_{k+1})`` agree to
    within the relative tolerance ``settle``.  Some fields drop much
    faster than the asymptotic rate for a few steps before settling, and
    fitting across that kink says nothing about the rate.  Distances at or
    below ``floor`` are excluded.
    """
    F = sol.potential
    A = action_matrix(phi0.spec, F) if action is None else action
    psi = np.asarray(sol.psi)
    phi = np.asarray(phi0, dtype=float).copy()
    dist = np.empty(n_iter + 1)
    for k in range(n_iter + 1):
        dist[k] = sup_norm_mod_const(phi - psi)
        if k < n_iter:
            phi, _, _ = _minimize_columns(phi, A, phi0.spec)
    n = np.arange(n_iter + 1)
    below = np.flatnonzero(dist < dist[0] / 2)
    halving = int(below[0]) if below.size else 0
    live = dist > floor
    _, halving_r2 = _fit(dist, n[(n >= halving) & live])

    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log(dist[:-1] / dist[1:])
    burn = halving
    for k in range(halving, n_iter - 1):
        if not (live[k + 2] and live[k + 1]):
            break
        if abs(rates[k + 1] - rates[k]) <= settle * abs(rates[k]):
            burn = k
            break
    window = n[(n >= burn) & live]
    slope, r2 = _fit(dist, window)
    return InviscidConvergence(dist, burn, window, slope, r2, halving_r2)
