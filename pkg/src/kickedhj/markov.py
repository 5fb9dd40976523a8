"""Markov normalization of the conjugated kernel and Harris-type contraction.

Layer ``n`` has density ``pi_n(y, x) = K~(y, x) Z_n(y) / Z_{n+1}(x)`` with
``Z_n = L~^n 1``; each column integrates to one against ``dy``.  The
layer acts on functions by ``(P u)(x) = int pi_n(y, x) u(y) dy`` and
``P_{n-1} ... P_0 u = L~^n u / L~^n 1``.

Drift and minorization constants are measured on the grid, then fed into
the Hairer-Mattingly recipe for the weighted seminorm
``||u||_{beta V,*} = inf_C sup |u + C| / (1 + beta V)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from .torus import TorusField, sup_norm_mod_const, weighted_norm_mod_const
from .viscous import KernelOperator, NumericalError, PartitionTrace, apply_log

__all__ = [
    "MarkovLayer",
    "DriftCertificate",
    "MinorizationCertificate",
    "DriftMinorizationParams",
    "LyapunovEstimate",
    "CertificationError",
    "build_markov_layers",
    "telescope_check",
    "certify_drift",
    "certify_minorization",
    "hm_parameters",
    "verify_hm_contraction",
    "lyapunov_exponent",
    "ratio_star_check",
    "random_smooth_fields",
]


class CertificationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MarkovLayer:
    """One normalized layer; ``log_pi`` is formed on demand."""

    n: int
    op: KernelOperator = field(repr=False)
    log_Z_in: np.ndarray = field(repr=False)  # log L~^n 1, indexed by y
    log_Z_out: np.ndarray = field(repr=False)  # log L~^{n+1} 1, indexed by x
    normalization_defect: float = 0.0

    @property
    def log_pi(self) -> np.ndarray:
        return self.op.log_kernel + self.log_Z_in[:, None] - self.log_Z_out[None, :]

    def weights(self) -> np.ndarray:
        """``spacing^d * pi[y, x]``: columns sum to one."""
        return np.exp(self.log_pi + self.op.log_weight)

    def apply(self, u, W: np.ndarray | None = None) -> np.ndarray:
        W = self.weights() if W is None else W
        return W.T @ np.asarray(u, dtype=float)


def build_markov_layers(op: KernelOperator, trace: PartitionTrace, n_max: int, tol: float = 1e-8) -> list:
    """Layers ``0..n_max``; needs the trace up to ``n_max + 1``.

    Raises
    ------
    NumericalError
        If some column integrates to one with a defect above ``tol``.
    """
    if not op.conjugated:
        raise ValueError("Markov layers need the conjugated kernel")
    if trace.n_max < n_max + 1:
        raise ValueError(f"trace has {trace.n_max} steps, need {n_max + 1}")
    layers = []
    for k in range(n_max + 1):
        layer = MarkovLayer(k, op, trace.log_Z[k], trace.log_Z[k + 1])
        mass = apply_log(op, layer.log_Z_in) - layer.log_Z_out
        defect = float(np.abs(np.expm1(mass)).max())
        if defect > tol:
            raise NumericalError(f"layer {k} normalization defect {defect:.2e}")
        layers.append(MarkovLayer(k, op, layer.log_Z_in, layer.log_Z_out, defect))
    return layers


def telescope_check(op: KernelOperator, layers, u, n: int) -> float:
    """Max relative gap between ``L~^n u / L~^n 1`` and ``P_{n-1}...P_0 u``.

    The left side is computed in log space from scratch; ``u`` must be
    positive.
    """
    if n > len(layers):
        raise ValueError("not enough layers")
    u = np.asarray(u, dtype=float)
    logu = np.log(u)
    logz = np.zeros_like(logu)
    for _ in range(n):
        logu = apply_log(op, logu)
        logz = apply_log(op, logz)
    lhs = np.exp(logu - logz)
    rhs = u.copy()
    for k in range(n):
        rhs = layers[k].apply(rhs)
    return float(np.max(np.abs(rhs / lhs - 1.0)))


@dataclass(frozen=True)
class DriftCertificate:
    gamma: float
    M_drift: float
    M_over_nu: float
    level: float  # 2 M / (1 - gamma)


def certify_drift(layer: MarkovLayer, V, nu: float, kappa_sq: float = 0.0, n_gamma: int = 200,
                  W: np.ndarray | None = None) -> DriftCertificate:
    """Smallest ``M`` with ``P V <= gamma V + M`` over a grid of ``gamma``.

    ``gamma`` runs over ``n_gamma`` points strictly inside
    ``(kappa_sq, 1)``; the pair minimizing ``M / (1 - gamma)`` is kept.
    A pair is admissible only when ``2M/(1 - gamma) < max V``, otherwise
    the sublevel set needed for minorization would be the whole grid.
    """
    V = np.asarray(V, dtype=float)
    if np.any(V < 0):
        raise ValueError("V must be non-negative")
    PV = layer.apply(V, W)
    if not np.all(np.isfinite(PV)):
        raise NumericalError("P V is not finite")
    if V.max() == 0:
        return DriftCertificate(float(kappa_sq), 0.0, 0.0, 0.0)
    gammas = kappa_sq + (1 - kappa_sq) * np.arange(1, n_gamma + 1) / (n_gamma + 1)
    M = np.maximum((PV[None, :] - gammas[:, None] * V[None, :]).max(axis=1), 0.0)
    level = 2 * M / (1 - gammas)
    ok = level < V.max()
    if not np.any(ok):
        raise CertificationError("no gamma < 1 gives a proper sublevel set")
    cost = np.where(ok, M / (1 - gammas), np.inf)
    i = int(np.argmin(cost))
    return DriftCertificate(float(gammas[i]), float(M[i]), float(M[i] / nu), float(level[i]))


@dataclass(frozen=True, eq=False)
class MinorizationCertificate:
    alpha0: float
    level: float
    level_set: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)  # empirical minorizing density


def certify_minorization(layer: MarkovLayer, V, R: float, nu: float, W: np.ndarray | None = None) -> MinorizationCertificate:
    """``alpha0 = int min_{V(x) <= R nu} pi(y, x) dy``."""
    V = np.asarray(V, dtype=float)
    level = R * nu
    S = V <= level
    if not np.any(S):
        raise CertificationError(f"level set {{V <= {level:.3g}}} is empty")
    W = layer.weights() if W is None else W
    G = W[:, S].min(axis=1)
    alpha0 = float(G.sum())
    g = G / alpha0 / layer.op.spec.cell_volume if alpha0 > 0 else G
    return MinorizationCertificate(alpha0, float(level), S, g)


@dataclass(frozen=True, eq=False)
class DriftMinorizationParams:
    """Hairer-Mattingly constants.

    ``R`` is the absolute level used for minorization.  With
    ``M_drift == 0`` the weight ``beta`` is infinite and ``alpha`` takes
    its limiting value ``max(1 - alpha0/2, gamma0)``.
    """

    gamma: float
    M_drift: float
    R: float
    alpha0: float
    alpha1: float
    gamma0: float
    beta: float
    alpha: float
    V: TorusField | None = field(default=None, repr=False)


def hm_parameters(gamma: float, M_drift: float, alpha0: float, R: float, V=None) -> DriftMinorizationParams:
    if not (0 <= gamma < 1 and M_drift >= 0 and 0 < alpha0 <= 1):
        raise ValueError("need 0 <= gamma < 1, M_drift >= 0 and 0 < alpha0 <= 1")
    if not R > 2 * M_drift / (1 - gamma):
        raise ValueError(f"R = {R} must exceed 2M/(1-gamma) = {2 * M_drift / (1 - gamma)}")
    alpha1 = alpha0 / 2
    gamma0 = (gamma + 2 * M_drift / R + 1) / 2
    if M_drift == 0:
        beta = np.inf
        alpha = max(1 - (alpha0 - alpha1), gamma0)
    else:
        beta = alpha0 / M_drift
        alpha = max(1 - (alpha0 - alpha1), (2 + R * beta * gamma0) / (2 + R * beta))
    return DriftMinorizationParams(gamma, M_drift, R, alpha0, alpha1, gamma0, beta, alpha, V)


def random_smooth_fields(spec, count: int, rng: np.random.Generator, modes: int = 5, scale: float = 1.0) -> np.ndarray:
    """Random trigonometric polynomials with ``1/|k|`` amplitudes, shape (size, count)."""
    x = spec.points()
    out = np.zeros((spec.size, count))
    ks = [k for k in np.ndindex(*([2 * modes + 1] * spec.d))]
    for k in ks:
        kk = np.asarray(k) - modes
        nk = np.linalg.norm(kk)
        if nk == 0 or nk > modes:
            continue
        phase = 2 * np.pi * (x @ kk)
        a = rng.normal(size=count) / nk
        b = rng.normal(size=count) / nk
        out += np.cos(phase)[:, None] * a + np.sin(phase)[:, None] * b
    return scale * out


def verify_hm_contraction(layer: MarkovLayer, params: DriftMinorizationParams, trials: int = 100,
                          rng: np.random.Generator | None = None, fields: np.ndarray | None = None,
                          W: np.ndarray | None = None, slack: float = 1e-6) -> float:
    """Worst ratio ``||P u||_{beta V,*} / ||u||_{beta V,*}`` over random ``u``.

    Raises
    ------
    CertificationError
        If the worst ratio exceeds ``alpha + slack``.
    """
    if params.V is None:
        raise ValueError("params must carry V")
    V = np.asarray(params.V)
    if fields is None:
        rng = np.random.default_rng(0) if rng is None else rng
        spec = layer.op.spec
        smooth = random_smooth_fields(spec, trials - trials // 4, rng)
        rough = rng.normal(size=(spec.size, trials // 4))
        fields = np.concatenate([smooth, rough], axis=1)
    W = layer.weights() if W is None else W
    Pu = W.T @ fields
    worst = 0.0
    for j in range(fields.shape[1]):
        den = weighted_norm_mod_const(fields[:, j], V, params.beta)
        if den == 0:
            continue
        worst = max(worst, weighted_norm_mod_const(Pu[:, j], V, params.beta) / den)
    if worst > params.alpha + slack:
        raise CertificationError(f"contraction ratio {worst:.6f} exceeds alpha = {params.alpha:.6f}")
    return worst


@dataclass(frozen=True, eq=False)
class LyapunovEstimate:
    nu: float
    lambda_hat: float
    fit_r2: float
    burn_in: int
    distances: np.ndarray = field(repr=False)
    window: np.ndarray = field(repr=False)
    flags: tuple = ()


def lyapunov_exponent(op: KernelOperator, log_u0, log_v0, n_max: int = 60, floor: float = 1e-13,
                      min_window: int = 8) -> LyapunovEstimate:
    """Exponential rate of ``d_n = ||log L~^n u - log L~^n v||_*``.

    Inputs are log-values of positive fields.  The fit window starts at
    the first ``n`` with ``d_n < d_0/2`` and ends before ``d_n`` drops
    below ``floor``; shorter windows than ``min_window`` are flagged.
    """
    a = np.asarray(log_u0, dtype=float).copy()
    b = np.asarray(log_v0, dtype=float).copy()
    dist = np.empty(n_max + 1)
    for k in range(n_max + 1):
        dist[k] = sup_norm_mod_const(a - b)
        if dist[k] < floor:
            dist[k + 1 :] = np.nan
            break
        if k < n_max:
            a = apply_log(op, a)
            b = apply_log(op, b)
            # keep values O(1); the seminorm ignores constants
            a -= a.min()
            b -= b.min()
    if dist[0] == 0:
        return LyapunovEstimate(op.nu, np.nan, np.nan, 0, dist, np.array([], int), ("degenerate",))
    n = np.arange(n_max + 1)
    below = np.flatnonzero(dist < dist[0] / 2)
    burn = int(below[0]) if below.size else 0
    window = n[(n >= burn) & (dist >= floor)]
    flags = []
    if window.size < min_window:
        flags.append("short_window")
    if window.size < 3:
        flags.append("no_fit")
        return LyapunovEstimate(op.nu, np.nan, np.nan, burn, dist, window, tuple(flags))
    fit = linregress(window, np.log(dist[window]))
    return LyapunovEstimate(op.nu, float(-fit.slope), float(fit.rvalue**2), burn, dist, window, tuple(flags))


def ratio_star_check(u, v, omega_bound: float = 0.25):
    """``||log(u/v)||_* <= 4 omega`` for ``min u, min v >= 1``.

    Returns ``None`` when the hypotheses fail (``min < 1`` or
    ``omega >= omega_bound``), otherwise whether the inequality holds.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.min() < 1 or v.min() < 1:
        return None
    omega = max(sup_norm_mod_const(u), sup_norm_mod_const(v))
    if omega >= omega_bound:
        return None
    return bool(sup_norm_mod_const(np.log(u / v)) <= 4 * omega * (1 + 1e-12) + 1e-15)
