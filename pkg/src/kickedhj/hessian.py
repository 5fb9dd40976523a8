"""The n-step action along minimizing paths and its block-tridiagonal Hessian.

For a terminal point ``x`` and ``X = (x_{-n}, ..., x_{-1})``::

    H(X) = sum_{i=-n}^{-1} h(x_i, x_{i+1}) + psi(x_{-n}) - psi(x),   x_0 = x

The Hessian at the minimizer has diagonal blocks ``I + D2(F + psi)(x_{-n})``
(first) and ``2I + D2F(x_k)`` (others), with ``-I`` off the diagonal.  Its
determinant is computed three ways: dense LU, a product of 2d x 2d
transfer matrices, and the product of ``det(I + D2F + D2psi)`` along the
orbit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .potential import Potential
from .torus import hessian_fd
from .twist import backward_orbit

__all__ = [
    "LogDet",
    "ActionPath",
    "HessianAssembly",
    "action_value",
    "build_action_path",
    "assemble_hessian",
    "det_dense",
    "det_transfer",
    "det_orbit_product",
    "dropped_factor_logdet",
    "min_eigenvalue",
    "eigenvalue_interlacing_check",
    "perturbed_det_ratio",
    "perturbed_det_bounds",
]


class LogDet(NamedTuple):
    sign: float
    logabs: float

    @property
    def value(self) -> float:
        return self.sign * float(np.exp(self.logabs))


@dataclass(frozen=True, eq=False)
class ActionPath:
    """Minimizing path ``x_{-n}..x_{-1}`` ending at ``x`` (all lifts).

    ``hess_psi[k]`` holds ``D^2 psi`` at ``X_star[k]`` from the Riccati
    bundle; ``el_residual`` is the worst discrete Euler-Lagrange defect at
    interior points.
    """

    x_index: int
    x: np.ndarray
    n: int
    X_star: np.ndarray = field(repr=False)
    H_value: float
    hess_psi: np.ndarray = field(repr=False)
    el_residual: float


def action_value(X, x, sol, F: Potential | None = None) -> float:
    """``H_{n,x}(X)`` for a path ``X`` of shape (n, d) ending at lift ``x``."""
    F = sol.potential if F is None else F
    X = np.asarray(X, dtype=float).reshape(-1, F.d)
    pts = np.vstack([X, np.asarray(x, dtype=float).reshape(1, F.d)])
    steps = 0.5 * np.sum(np.diff(pts, axis=0) ** 2, axis=1) + F.value(pts[:-1])
    psi_x = float(sol.psi_at(pts[-1:])[0])
    return float(steps.sum() + sol.psi_at(pts[:1])[0] - psi_x)


def build_action_path(x, n: int, sol, F: Potential | None = None) -> ActionPath:
    F = sol.potential if F is None else F
    orbit = backward_orbit(x, n, sol, F)
    idx = sol.spec.index_of(np.asarray(orbit.source))
    x0 = orbit.x[0]
    X = orbit.x[1:][::-1].copy()
    S = orbit.hess_psi[1:][::-1].copy()
    H = action_value(X, x0, sol, F)
    full = np.vstack([X, x0[None, :]])
    if n >= 2:
        el = full[2:] - 2 * full[1:-1] + full[:-2] - F.grad(full[1:-1])
        el_res = float(np.abs(el).max())
    else:
        el_res = 0.0
    return ActionPath(idx, x0, n, X, H, S, el_res)


@dataclass(frozen=True, eq=False)
class HessianAssembly:
    """Symmetric block-tridiagonal matrix with ``-I`` off-diagonal blocks."""

    diag: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    @property
    def d(self) -> int:
        return self.diag.shape[1]

    @property
    def size(self) -> int:
        return self.n * self.d

    def dense(self) -> np.ndarray:
        n, d = self.n, self.d
        A = np.zeros((n * d, n * d))
        I = np.eye(d)
        for k in range(n):
            A[k * d : (k + 1) * d, k * d : (k + 1) * d] = self.diag[k]
            if k + 1 < n:
                A[k * d : (k + 1) * d, (k + 1) * d : (k + 2) * d] = -I
                A[(k + 1) * d : (k + 2) * d, k * d : (k + 1) * d] = -I
        return A

    def sparse(self):
        return scipy.sparse.csc_matrix(self.dense()) if self.size <= 400 else self._sparse()

    def _sparse(self):
        n, d = self.n, self.d
        blocks = [[None] * n for _ in range(n)]
        I = scipy.sparse.identity(d)
        for k in range(n):
            blocks[k][k] = scipy.sparse.csc_matrix(self.diag[k])
            if k + 1 < n:
                blocks[k][k + 1] = -I
                blocks[k + 1][k] = -I
        return scipy.sparse.bmat(blocks, format="csc")

    def leading(self, n_keep: int) -> "HessianAssembly":
        return HessianAssembly(self.diag[:n_keep].copy())


def assemble_hessian(path: ActionPath, sol, F: Potential | None = None, d2psi: str = "bundle") -> HessianAssembly:
    """Hessian of ``H_{n,x}`` at the minimizing path.

    ``d2psi="bundle"`` takes ``D^2 psi(x_{-n})`` from the Riccati bundle of
    the orbit; ``"fd"`` uses centered differences of the grid ``psi``
    interpolated linearly to ``x_{-n}``.
    """
    F = sol.potential if F is None else F
    spec = sol.spec
    d = spec.d
    X = path.X_star
    j = spec.index_of(X[0] % 1.0)
    if sol.cut_locus[j]:
        raise ValueError("x_{-n} lies on the detected cut locus")
    D2F = F.hess(X)
    diag = 2 * np.eye(d)[None] + D2F
    if d2psi == "bundle":
        S0 = path.hess_psi[0]
    elif d2psi == "fd":
        S0 = _interp_hessian_fd(sol, X[0])
    else:
        raise ValueError(f"unknown d2psi source {d2psi!r}")
    diag[0] = np.eye(d) + D2F[0] + S0
    return HessianAssembly(diag)


def _interp_hessian_fd(sol, point):
    spec = sol.spec
    H = hessian_fd(sol.psi).reshape(spec.shape + (spec.d, spec.d))
    u = (np.asarray(point) % 1.0) * spec.n_per_axis
    i0 = np.floor(u).astype(int)
    t = u - i0
    n = spec.n_per_axis
    out = np.zeros((spec.d, spec.d))
    for corner in np.ndindex(*([2] * spec.d)):
        c = np.asarray(corner)
        w = np.prod(np.where(c == 1, t, 1 - t))
        out += w * H[tuple((i0 + c) % n)]
    return out


def det_dense(A: HessianAssembly) -> LogDet:
    sign, logabs = np.linalg.slogdet(A.dense())
    if sign == 0 or not np.isfinite(logabs):
        raise np.linalg.LinAlgError("matrix is singular to machine precision")
    return LogDet(float(sign), float(logabs))


def det_transfer(A: HessianAssembly) -> LogDet:
    """Top-left d x d block of ``prod [[A_i, -I], [I, 0]]``, rescaled each step."""
    d = A.d
    I = np.eye(d)
    Z = np.zeros((d, d))
    P = np.eye(2 * d)
    log_scale = 0.0
    for k in range(A.n):
        T = np.block([[A.diag[k], -I], [I, Z]])
        P = T @ P
        s = np.abs(P).max()
        P /= s
        log_scale += np.log(s)
    sign, logabs = np.linalg.slogdet(P[:d, :d])
    return LogDet(float(sign), float(logabs + d * log_scale))


def det_orbit_product(path: ActionPath, sol=None, F: Potential | None = None) -> LogDet:
    """``sum log det(I + D2F(x_i) + D2psi(x_i))`` over the path points."""
    F = (sol.potential if sol is not None else None) if F is None else F
    if F is None:
        raise ValueError("a potential is required")
    if sol is not None:
        spec = sol.spec
        for p in path.X_star:
            if sol.cut_locus[spec.index_of(p % 1.0)]:
                raise ValueError("path meets the detected cut locus")
    return _factor_logdet(path.X_star, path.hess_psi, F)


def _factor_logdet(X, S, F) -> LogDet:
    d = F.d
    factors = np.eye(d)[None] + F.hess(X) + S
    signs, logs = np.linalg.slogdet(factors)
    return LogDet(float(np.prod(signs)), float(logs.sum()))


def dropped_factor_logdet(path: ActionPath, N_cut: int, F: Potential) -> LogDet:
    """Orbit factors for ``x_{-N}..x_{-1}``, the blocks removed by truncation."""
    if N_cut == 0:
        return LogDet(1.0, 0.0)
    return _factor_logdet(path.X_star[-N_cut:], path.hess_psi[-N_cut:], F)


def min_eigenvalue(A, dense_limit: int = 400) -> float:
    """Smallest eigenvalue; shift-invert Lanczos beyond ``dense_limit``."""
    if isinstance(A, HessianAssembly):
        size = A.size
        if size <= dense_limit:
            return float(np.linalg.eigvalsh(A.dense())[0])
        M = A._sparse()
    else:
        M = np.asarray(A)
        if M.shape[0] <= dense_limit:
            return float(np.linalg.eigvalsh(M)[0])
    try:
        val = scipy.sparse.linalg.eigsh(M, k=1, sigma=0.0, which="LM", return_eigenvectors=False, maxiter=5000)
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise RuntimeError("inverse iteration stagnated") from exc
    return float(val[0])


def eigenvalue_interlacing_check(A, N_cut: int, tol: float = 1e-10) -> bool:
    """Cauchy interlacing between ``A`` and its truncation.

    The truncation keeps the leading blocks and drops the last ``N_cut``
    (the variables ``x_{-N}..x_{-1}`` closest to the terminal point), which
    leaves the Hessian of the shorter problem ending at ``x_{-N}``.  A
    plain symmetric array is treated as having 1 x 1 blocks.
    """
    if isinstance(A, HessianAssembly):
        M = A.dense()
        r = N_cut * A.d
    else:
        M = np.asarray(A, dtype=float)
        r = N_cut
    k = M.shape[0] - r
    la = np.linalg.eigvalsh(M)
    lb = np.linalg.eigvalsh(M[:k, :k]) if k > 0 else np.array([])
    scale = tol * max(1.0, np.abs(la).max())
    lower = np.all(la[:k] <= lb + scale)
    upper = np.all(lb <= la[r : r + k] + scale)
    return bool(lower and upper)


def perturbed_det_ratio(A: HessianAssembly, eps: float):
    """``(det(A - eps I)/det A, det(A + eps I)/det A)``."""
    lam = np.linalg.eigvalsh(A.dense())
    if eps >= lam[0]:
        raise ValueError("eps must be below the smallest eigenvalue")
    lo = float(np.exp(np.sum(np.log1p(-eps / lam))))
    hi = float(np.exp(np.sum(np.log1p(eps / lam))))
    return lo, hi


def perturbed_det_bounds(A: HessianAssembly, C: float):
    """Ratios at ``eps = 1/(C n)`` with their a-priori bounds.

    Returns ``(lo, hi, lo_bound, hi_bound)``; the bounds are
    ``(1 - 1/(C lmin))^d <= lo`` and ``hi <= exp(d / (C lmin))``.
    """
    lmin = min_eigenvalue(A)
    eps = 1.0 / (C * A.n)
    lo, hi = perturbed_det_ratio(A, eps)
    a = 1.0 / (C * lmin)
    return lo, hi, (1 - a) ** A.d, float(np.exp(A.d * a))
