"""The twist map generated by ``h`` and its hyperbolic fixed point.

``Phi(x, p) = (x + p + grad F(x), p + grad F(x))`` acts on lifts.  Minimizing
backward orbits are contracted towards the origin at rate ``1/mu``, so
iterating ``Phi^{-1}`` directly amplifies the seed error by ``mu`` per
step.  :func:`backward_orbit` therefore solves a shooting problem: it
starts on the linear unstable subspace next to the origin and adjusts that
start point until the forward orbit lands on ``x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .potential import Potential
from .torus import TorusPoint, centered
from .variational import backward_minimizer

__all__ = [
    "PhasePoint",
    "HyperbolicData",
    "BackwardOrbit",
    "OrbitError",
    "twist_forward",
    "twist_backward",
    "twist_jacobian",
    "hyperbolic_linearization",
    "backward_orbit",
    "naive_backward_orbit",
    "riccati_bundle",
]


class OrbitError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PhasePoint:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if x.shape != p.shape:
            raise ValueError("x and p must have the same shape")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            raise ValueError("phase point must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.p])


def twist_forward(q: PhasePoint, F: Potential) -> PhasePoint:
    g = F.grad(q.x)[0]
    return PhasePoint(q.x + q.p + g, q.p + g)


def twist_backward(q: PhasePoint, F: Potential) -> PhasePoint:
    x0 = q.x - q.p
    return PhasePoint(x0, q.p - F.grad(x0)[0])


def twist_jacobian(q: PhasePoint, F: Potential) -> np.ndarray:
    d = q.x.shape[0]
    D2 = F.hess(q.x)[0]
    I = np.eye(d)
    return np.block([[I + D2, I], [D2, I]])


@dataclass(frozen=True, eq=False)
class HyperbolicData:
    """Linearization of the twist map at the fixed point (0, 0).

    ``S_plus`` and ``S_minus`` solve ``S^2 + S M - M = 0``; the graph of
    ``S_plus`` is the unstable subspace.  ``mu`` is the determinant of the
    expansion ``I + M + S_plus`` and ``kappa0`` the norm of its inverse.
    """

    M: np.ndarray
    S_plus: np.ndarray
    S_minus: np.ndarray
    mu: float
    kappa0: float
    riccati_residual: float
    conjugacy_residual: float
    commutation_residual: float
    graph_residual: float

    @property
    def expansion(self) -> np.ndarray:
        return np.eye(self.M.shape[0]) + self.M + self.S_plus


def hyperbolic_linearization(F: Potential, tol: float = 1e-10) -> HyperbolicData:
    M = F.curvature_at_min()
    M = 0.5 * (M + M.T)
    lam, Q = np.linalg.eigh(M)
    if lam.min() <= 0:
        raise ValueError("D^2 F(0) is not positive definite")
    root = np.sqrt(lam**2 + 4 * lam)
    Sp = (Q * (0.5 * (-lam + root))) @ Q.T
    Sm = (Q * (0.5 * (-lam - root))) @ Q.T
    d = M.shape[0]
    I = np.eye(d)
    E = I + M + Sp
    mu = float(np.linalg.det(E))
    kappa0 = float(np.linalg.norm(np.linalg.inv(E), 2))

    scale = max(1.0, np.linalg.norm(M))
    ric = float(np.linalg.norm(Sp @ Sp + Sp @ M - M)) / scale
    conj = float(np.linalg.norm(E @ (I + M + Sm) - I))
    comm = float(np.linalg.norm(Sp @ M - M @ Sp)) / scale
    # DPhi(0,0) maps (h, S+ h) to (E h, (M + S+) h); invariance needs (M + S+) = S+ E
    graph = float(np.linalg.norm(M + Sp - Sp @ E)) / scale
    hyp = HyperbolicData(M, Sp, Sm, mu, kappa0, ric, conj, comm, graph)
    bad = {k: v for k, v in (("riccati", ric), ("conjugacy", conj), ("commutation", comm), ("graph", graph)) if v > tol}
    if bad or not mu > 1 or not 0 < kappa0 < 1:
        raise ArithmeticError(f"hyperbolic invariants violated: {bad}, mu={mu}, kappa0={kappa0}")
    return hyp


def riccati_bundle(xs: np.ndarray, F: Potential, S0: np.ndarray) -> np.ndarray:
    """Propagate ``S_{k+1} = (D2F_k + S_k)(I + D2F_k + S_k)^{-1}`` along ``xs``.

    ``xs`` has shape (m, d); returns ``S`` of shape (m + 1, d, d) with
    ``S[0] = S0``.  Along a minimizing orbit the result is ``D^2 psi``.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, F.d)
    D2 = F.hess(xs)
    I = np.eye(F.d)
    S = np.empty((xs.shape[0] + 1, F.d, F.d))
    S[0] = S0
    for k in range(xs.shape[0]):
        A = D2[k] + S[k]
        S[k + 1] = np.linalg.solve((I + A).T, A.T).T
        S[k + 1] = 0.5 * (S[k + 1] + S[k + 1].T)
    return S


@dataclass(frozen=True, eq=False)
class BackwardOrbit:
    """Minimizing backward orbit ``(x_{-k}, p_{-k})`` for ``k = 0..n``.

    Positions are lifts chained continuously from ``x`` (taken in
    [-1/2, 1/2)^d), so the orbit tends to the lift 0 of the fixed point.
    ``hess_psi[k]`` is ``D^2 psi(x_{-k})`` from the Riccati bundle.
    """

    x: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    hess_psi: np.ndarray = field(repr=False)
    source: TorusPoint
    depth: int
    newton_residual: float
    step_residual: float

    @property
    def n(self) -> int:
        return self.x.shape[0] - 1


def _forward_with_tangent(xi, S, m, F):
    """Forward orbit of ``(xi, S xi)`` and the derivative of the end position."""
    d = xi.shape[0]
    x = xi.copy()
    p = S @ xi
    J = np.vstack([np.eye(d), S])
    xs = [x.copy()]
    ps = [p.copy()]
    for _ in range(m):
        D2 = F.hess(x)[0]
        g = F.grad(x)[0]
        J = np.block([[np.eye(d) + D2, np.eye(d)], [D2, np.eye(d)]]) @ J
        x, p = x + p + g, p + g
        xs.append(x.copy())
        ps.append(p.copy())
    return np.array(xs), np.array(ps), J[:d]


def backward_orbit(x, n: int, sol, F: Potential | None = None, seed_radius: float = 1e-9,
                   max_newton: int = 50) -> BackwardOrbit:
    """Minimizing backward orbit of ``x`` by shooting from the unstable subspace.

    The seed momentum is ``x - ybar(x)`` from the polished variational
    minimizer; it fixes the initial guess and the branch, and the result
    is checked against it.

    Raises
    ------
    OrbitError
        If ``x`` is on the cut locus, Newton fails, the momentum leaves the
        ``2 Lip(psi) + 1`` envelope, or the orbit disagrees with ``ybar``.
    """
    F = sol.potential if F is None else F
    spec = sol.spec
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(x, (int, np.integer)):
        idx = int(x)
    else:
        idx = spec.index_of(np.asarray(x))
    if sol.cut_locus[idx]:
        raise OrbitError("seed lies on the detected cut locus")
    x0 = spec.centered_points()[idx]
    src = TorusPoint.wrap(x0)
    d = spec.d
    hyp = hyperbolic_linearization(F)
    pbound = 2 * sol.lipschitz + 1

    if np.all(x0 == 0):
        z = np.zeros((n + 1, d))
        S = np.broadcast_to(hyp.S_plus, (n + 1, d, d)).copy()
        return BackwardOrbit(z, z.copy(), S, src, 0, 0.0, 0.0)

    # initial guess: compose the variational minimizer until close to 0
    r0 = float(np.linalg.norm(x0))
    m = max(n, int(np.ceil(np.log(r0 / seed_radius) / -np.log(hyp.kappa0))) + 1)
    m = max(m, 2)
    y = x0.copy()
    guess = None
    for k in range(m):
        y_next = centered(np.asarray(backward_minimizer(centered(y) % 1.0, sol, F)))
        y = y + centered(y_next - y)
        if np.linalg.norm(y) < 50 * spec.spacing:
            guess = (k + 1, y.copy())
            break
    if guess is None:
        raise OrbitError("variational backward iteration did not approach the fixed point")
    k0, yk = guess
    # linear backward contraction from yk down to depth m
    Einv = np.linalg.inv(hyp.expansion)
    xi = np.linalg.matrix_power(Einv, m - k0) @ yk

    res = np.inf
    for _ in range(max_newton):
        xs, ps, J = _forward_with_tangent(xi, hyp.S_plus, m, F)
        err = xs[-1] - x0
        res = float(np.linalg.norm(err))
        if res < 1e-13:
            break
        step = np.linalg.solve(J, err)
        xi = xi - step
    else:
        if res > 1e-10:
            raise OrbitError(f"shooting did not converge (residual {res:.2e})")

    xs, ps, _ = _forward_with_tangent(xi, hyp.S_plus, m, F)
    if np.abs(ps).max() > pbound:
        raise OrbitError("orbit momentum exceeds 2 Lip(psi) + 1")
    xb = xs[::-1][: n + 1]
    pb = ps[::-1][: n + 1]
    # branch check against the variational minimizer
    yb = centered(np.asarray(sol.ybar[idx]))
    if np.linalg.norm(centered(xb[1] - yb)) > 2 * spec.spacing * np.sqrt(d):
        raise OrbitError("shooting converged to a non-minimizing branch")

    S = riccati_bundle(xs[:-1], F, hyp.S_plus)[::-1][: n + 1]
    step_res = 0.0
    for k in range(n):
        q = twist_forward(PhasePoint(xb[k + 1], pb[k + 1]), F)
        step_res = max(step_res, float(np.abs(q.x - xb[k]).max()), float(np.abs(q.p - pb[k]).max()))
    return BackwardOrbit(xb, pb, S, src, m, res, step_res)


def naive_backward_orbit(x, n: int, sol, F: Potential | None = None) -> BackwardOrbit:
    """Iterate ``Phi^{-1}`` from ``(x, x - ybar(x))``.

    Unstable: the seed error grows like ``mu^k``.  Kept as a reference
    construction; raises :class:`OrbitError` on escape.
    """
    F = sol.potential if F is None else F
    spec = sol.spec
    idx = int(x) if isinstance(x, (int, np.integer)) else spec.index_of(np.asarray(x))
    x0 = spec.centered_points()[idx]
    q = PhasePoint(x0, sol.momentum[idx])
    pbound = 2 * sol.lipschitz + 1
    xs, ps = [q.x], [q.p]
    for _ in range(n):
        q = twist_backward(q, F)
        if np.abs(q.p).max() > pbound:
            raise OrbitError("orbit escaped: momentum exceeds 2 Lip(psi) + 1")
        xs.append(q.x)
        ps.append(q.p)
    xs = np.array(xs)
    S = np.full((n + 1, spec.d, spec.d), np.nan)
    return BackwardOrbit(xs, np.array(ps), S, TorusPoint.wrap(x0), 0, np.nan, 0.0)
