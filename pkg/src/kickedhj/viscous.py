"""Viscous side: Hopf-Cole kernels, partition functions and the set U.

The kernel ``K(y, x) = (4 pi nu)^{-d/2} exp(-h(y, x) / (2 nu))`` is stored
as its logarithm on the grid, with the Gaussian factor periodized over
integer shifts.  The conjugated kernel adds ``(psi(x) - psi(y)) / (2 nu)``.
All iterations run on log-values so that ``exp(-1/(2 nu))`` never has to
be formed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .hessian import assemble_hessian, build_action_path, det_dense
from .potential import Potential
from .torus import GridSpec, TorusField, centered, sup_norm_mod_const

__all__ = [
    "KernelOperator",
    "DomainPartition",
    "PartitionTrace",
    "StationarySolution",
    "LaplaceCrosscheck",
    "NumericalError",
    "wrap_count",
    "build_kernel",
    "apply",
    "apply_log",
    "partition_trace",
    "partition_growth",
    "build_domain_partition",
    "chi_ratio",
    "stationary_log_solution",
    "laplace_hessian_crosscheck",
]


class NumericalError(ArithmeticError):
    pass


def wrap_count(nu: float, d: int) -> int:
    """Smallest ``K`` with ``(K - sqrt(d)/2)^2 / (4 nu) > 45``."""
    K = math.ceil(math.sqrt(d) / 2 + math.sqrt(180 * nu))
    while (K - math.sqrt(d) / 2) ** 2 / (4 * nu) <= 45:
        K += 1
    return K


def _log_wrapped_gauss_1d(n: int, nu: float, K: int) -> np.ndarray:
    """``log sum_k exp(-(delta + k)^2 / (4 nu))`` for index offsets ``delta``."""
    delta = centered(np.arange(n) / n)
    k = np.arange(-K, K + 1)
    return logsumexp(-((delta[:, None] + k[None, :]) ** 2) / (4 * nu), axis=1)


@dataclass(frozen=True, eq=False)
class KernelOperator:
    """Discretized (conjugated) Hopf-Cole kernel ``log K[y, x]``."""

    spec: GridSpec
    nu: float
    log_kernel: np.ndarray = field(repr=False)
    conjugated: bool
    wrap: int
    potential: Potential = field(repr=False)
    psi: np.ndarray | None = field(default=None, repr=False)

    @property
    def log_weight(self) -> float:
        return self.spec.d * math.log(self.spec.spacing)

    @cached_property
    def weighted_kernel(self) -> np.ndarray:
        """``spacing^d * K[y, x]`` as a linear matrix."""
        return np.exp(self.log_kernel + self.log_weight)


def build_kernel(F: Potential, psi, nu: float, spec: GridSpec) -> KernelOperator:
    """Build ``log K`` (``psi is None``) or the conjugated ``log K~``.

    ``psi`` may be a :class:`WeakKamSolution`, a :class:`TorusField` or an
    array of grid values.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    n, d = spec.n_per_axis, spec.d
    K = wrap_count(nu, d)
    lg = _log_wrapped_gauss_1d(n, nu, K)
    idx = np.arange(n)
    off = (idx[None, :] - idx[:, None]) % n  # [y, x] -> index of x - y
    L1 = lg[off]
    if d == 1:
        L = L1.copy()
    else:
        L = (L1[:, None, :, None] + L1[None, :, None, :]).reshape(spec.size, spec.size)
    L -= 0.5 * d * math.log(4 * math.pi * nu)
    L -= (F.value(spec.points()) / (2 * nu))[:, None]
    vals = None
    if psi is not None:
        vals = np.asarray(getattr(psi, "psi", psi), dtype=float)
        L += (vals[None, :] - vals[:, None]) / (2 * nu)
    if not np.all(np.isfinite(L)):
        raise NumericalError("kernel has non-finite entries")
    return KernelOperator(spec, float(nu), L, psi is not None, K, F, vals)


def apply_log(op: KernelOperator, logu) -> np.ndarray:
    """``log L(e^{logu})`` with per-column max subtraction.

    ``logu`` may have shape (size,) or (size, k) for several fields.
    """
    w = np.asarray(logu, dtype=float)
    if w.ndim == 1:
        out = logsumexp(op.log_kernel + w[:, None], axis=0) + op.log_weight
    else:
        out = np.stack([logsumexp(op.log_kernel + w[:, j, None], axis=0) for j in range(w.shape[1])], axis=1)
        out += op.log_weight
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite output in log-space application")
    return out


def apply(op: KernelOperator, u, log: bool = False):
    """Apply the kernel by trapezoid quadrature.

    With ``log=True`` the input and output are log-values; otherwise the
    linear representation is used and any sign is accepted.
    """
    if log:
        out = apply_log(op, u)
    else:
        out = op.weighted_kernel.T @ np.asarray(u, dtype=float)
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite output")
    if isinstance(u, TorusField):
        return u.with_values(out)
    return out


@dataclass(frozen=True, eq=False)
class DomainPartition:
    """Neighbourhood ``U`` of the backward-minimizer image and the weight chi.

    ``chi`` is 1 on ``U`` and ``nu^{-d/2}`` elsewhere.
    """

    U_mask: np.ndarray = field(repr=False)
    r_U: float
    nu: float
    chi: TorusField = field(repr=False)

    @property
    def log_chi(self) -> np.ndarray:
        return np.log(np.asarray(self.chi))


def build_domain_partition(sol, r_U: float, nu: float, chunk: int = 256) -> DomainPartition:
    if not r_U > 0:
        raise ValueError("r_U must be positive")
    spec = sol.spec
    pts = spec.points()
    image = np.asarray(sol.ybar)
    dist = np.empty(spec.size)
    for s in range(0, spec.size, chunk):
        diff = centered(pts[s : s + chunk, None, :] - image[None, :, :])
        dist[s : s + chunk] = np.sqrt((diff**2).sum(axis=-1)).min(axis=1)
    U = dist < r_U
    if U.all():
        warnings.warn("U covers the whole torus; chi is trivial", RuntimeWarning, stacklevel=2)
    chi = np.where(U, 1.0, nu ** (-spec.d / 2))
    return DomainPartition(U, float(r_U), float(nu), TorusField(spec, chi))


@dataclass(frozen=True, eq=False)
class PartitionTrace:
    """Iterates ``log L~^n 1`` for ``n = 0..n_max`` and their statistics.

    ``Qn[n]`` is the grid minimum of ``L~^n 1``, ``ratio_hi[n]`` the
    maximum of ``L~^n 1 / (Q_n chi)`` and ``growth[n] = Q_{n+1}/Q_n``.
    ``flagged`` lists the ``n`` whose ratio exceeds ``c_budget``.
    """

    log_Z: np.ndarray = field(repr=False)
    log_Qn: np.ndarray
    ratio_hi: np.ndarray
    growth: np.ndarray
    flagged: tuple
    c_budget: float

    @property
    def Qn(self) -> np.ndarray:
        return np.exp(self.log_Qn)

    @property
    def Rn(self) -> np.ndarray:
        return self.Qn

    @property
    def n_max(self) -> int:
        return self.log_Z.shape[0] - 1


def partition_trace(op: KernelOperator, n_max: int, part: DomainPartition, c_budget: float = 100.0) -> PartitionTrace:
    if not op.conjugated:
        raise ValueError("partition_trace expects the conjugated kernel")
    logZ = np.zeros((n_max + 1, op.spec.size))
    for k in range(1, n_max + 1):
        logZ[k] = apply_log(op, logZ[k - 1])
    logQ = logZ.min(axis=1)
    ratio = np.exp((logZ - logQ[:, None] - part.log_chi[None, :]).max(axis=1))
    growth = np.exp(np.diff(logQ))
    flagged = tuple(int(k) for k in np.flatnonzero(ratio > c_budget))
    return PartitionTrace(logZ, logQ, ratio, growth, flagged, float(c_budget))


def partition_growth(trace: PartitionTrace, mask: np.ndarray, n_min: int = 1):
    """Least-squares slopes of ``log L~^n 1(x)`` in ``n`` for ``x`` in ``mask``.

    Returns ``(median, min, max)`` of the per-point slopes.
    """
    n = np.arange(n_min, trace.n_max + 1)
    Y = trace.log_Z[n][:, mask]
    nc = n - n.mean()
    slopes = nc @ (Y - Y.mean(axis=0)) / (nc @ nc)
    return float(np.median(slopes)), float(slopes.min()), float(slopes.max())


def chi_ratio(op: KernelOperator, part: DomainPartition) -> float:
    """``max L~chi / chi``."""
    return float(np.exp((apply_log(op, part.log_chi) - part.log_chi).max()))


@dataclass(frozen=True, eq=False)
class StationarySolution:
    log_u: TorusField
    psi_nu: TorusField
    residual: float
    iterations: int
    log_eigenvalue: float


def stationary_log_solution(op: KernelOperator, tol: float = 1e-11, max_iter: int = 10000) -> StationarySolution:
    """Positive eigenfunction of the unconjugated kernel by log-space power iteration.

    ``psi_nu = -2 nu log u`` is normalized to vanish at the origin.
    """
    if op.conjugated:
        raise ValueError("stationary_log_solution expects the unconjugated kernel")
    w = np.zeros(op.spec.size)
    res = np.inf
    shift = 0.0
    for it in range(1, max_iter + 1):
        nxt = apply_log(op, w)
        shift = float(nxt.min())
        nxt -= shift
        res = sup_norm_mod_const(nxt - w)
        w = nxt
        if res < tol:
            break
    else:
        raise NumericalError(f"power iteration did not converge (residual {res:.3e})")
    psi_nu = -2 * op.nu * w
    psi_nu -= psi_nu[0]
    return StationarySolution(TorusField(op.spec, w), TorusField(op.spec, psi_nu), res, it, shift)


@dataclass(frozen=True)
class LaplaceCrosscheck:
    """Quadrature partition function against the Gaussian (Laplace) prediction."""

    n: int
    nu: float
    quadrature: float
    laplace: float
    ratio: float
    action: float
    direct: float | None = None


def laplace_hessian_crosscheck(x, n: int, nu: float, sol, op: KernelOperator | None = None) -> LaplaceCrosscheck:
    """Compare ``L~^n 1(x)`` with ``exp(-H/2nu) det(Hess H)^{-1/2}``.

    For ``n = 1`` and ``d = 1`` an adaptive quadrature of the one-step
    integral (using the spline of ``psi``) is reported as ``direct``.
    """
    F = sol.potential
    spec = sol.spec
    idx = int(x) if isinstance(x, (int, np.integer)) else spec.index_of(np.asarray(x))
    if op is None:
        op = build_kernel(F, sol, nu, spec)
    w = np.zeros(spec.size)
    for _ in range(n):
        w = apply_log(op, w)
    quad = float(np.exp(w[idx]))
    path = build_action_path(idx, n, sol, F)
    A = assemble_hessian(path, sol, F)
    ld = det_dense(A)
    lap = float(np.exp(-path.H_value / (2 * nu) - 0.5 * ld.logabs))

    direct = None
    if n == 1 and spec.d == 1:
        x0 = spec.centered_points()[idx, 0]
        psi_x = float(np.asarray(sol.psi)[idx])

        def integrand(y):
            yy = np.array([y])
            ht = 0.5 * (x0 - y) ** 2 + F.value(yy)[0] + sol.psi_at(yy)[0] - psi_x
            return math.exp(-ht / (2 * nu)) / math.sqrt(4 * math.pi * nu)

        ybar = x0 + float(centered(sol.ybar[idx, 0] - x0))
        val, _ = integrate.quad(integrand, x0 - 0.5, x0 + 0.5, points=[ybar], limit=400, epsabs=0, epsrel=1e-11)
        direct = float(val)
    return LaplaceCrosscheck(n, float(nu), quad, lap, quad / lap, float(path.H_value), direct)
