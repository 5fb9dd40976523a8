"""The viscosity sweep and the per-nu diagnostics behind the CLI reports."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .markov import (
    CertificationError,
    build_markov_layers,
    certify_drift,
    certify_minorization,
    hm_parameters,
    lyapunov_exponent,
    random_smooth_fields,
    telescope_check,
    verify_hm_contraction,
)
from .torus import TorusField, sup_norm_mod_const
from .twist import hyperbolic_linearization
from .variational import contraction_report, solve_weak_kam
from .viscous import (
    NumericalError,
    build_domain_partition,
    build_kernel,
    chi_ratio,
    partition_growth,
    partition_trace,
    stationary_log_solution,
)

__all__ = ["Baseline", "SweepRow", "NuResult", "prepare", "run_nu", "run_sweep", "sweep_summary"]


@dataclass(frozen=True, eq=False)
class Baseline:
    """Inviscid objects shared by every nu of a sweep."""

    config: ExperimentConfig
    potential: object
    spec: object
    sol: object
    hyp: object
    report: object


def prepare(config: ExperimentConfig) -> Baseline:
    F = config.make_potential()
    spec = config.grid
    sol = solve_weak_kam(F, spec, config.weak_kam_tol, config.weak_kam_max_iter)
    hyp = hyperbolic_linearization(F)
    rep = contraction_report(sol, hyp)
    return Baseline(config, F, spec, sol, hyp, rep)


@dataclass
class SweepRow:
    nu: float
    lambda_hat: float = np.nan
    fit_r2: float = np.nan
    gamma: float = np.nan
    M_drift_over_nu: float = np.nan
    alpha0: float = np.nan
    alpha: float = np.nan
    kappa_sq_emp: float = np.nan
    mu: float = np.nan
    Q_ratio_max: float = np.nan
    partition_ratio_max: float = np.nan
    psi_nu_dist: float = np.nan
    hm_worst_ratio: float = np.nan
    growth_rate_U: float = np.nan
    fit_window: int = 0
    runtime_s: float = np.nan
    flag: str = ""


@dataclass(eq=False)
class NuResult:
    row: SweepRow
    trace: object = None
    lyapunov: object = None
    drift: list = field(default_factory=list)
    minorization: list = field(default_factory=list)
    params: list = field(default_factory=list)
    normalization_defect: float = np.nan
    telescope_defect: float = np.nan
    chi_ratio: float = np.nan
    n1_offU_const: float = np.nan


def _lyapunov_fields(base: Baseline):
    rng = np.random.default_rng([base.config.seed, 1])
    return random_smooth_fields(base.spec, 2, rng, scale=base.config.field_scale)


def run_nu(base: Baseline, nu: float, index: int = 0, certify: bool = True) -> NuResult:
    """Everything measured at one viscosity.  Failures become row flags."""
    cfg = base.config
    t0 = time.perf_counter()
    row = SweepRow(nu=float(nu), kappa_sq_emp=base.report.kappa_sq_emp, mu=base.hyp.mu)
    res = NuResult(row)
    flags = []
    psi = np.asarray(base.sol.psi)
    try:
        op = build_kernel(base.potential, base.sol, nu, base.spec)
        part = build_domain_partition(base.sol, cfg.r_U, nu)
        trace = partition_trace(op, cfg.n_max + 1, part, cfg.c_budget)
        res.trace = trace
        row.partition_ratio_max = float(trace.ratio_hi[: cfg.n_max + 1].max())
        g = trace.growth[: cfg.n_max]
        row.Q_ratio_max = float(np.max(np.maximum(g, 1 / g)))
        row.growth_rate_U = partition_growth(trace, part.U_mask)[0]
        if trace.flagged:
            flags.append("ratio_budget")
        off = ~part.U_mask
        if off.any():
            res.n1_offU_const = float(np.exp(trace.log_Z[1][off]).max() * nu ** (base.spec.d / 2))
        res.chi_ratio = chi_ratio(op, part)

        phi = _lyapunov_fields(base)
        lyap = lyapunov_exponent(
            op,
            (psi - phi[:, 0]) / (2 * nu),
            (psi - phi[:, 1]) / (2 * nu),
            cfg.lyapunov_steps,
            cfg.fit_floor,
            cfg.min_window,
        )
        res.lyapunov = lyap
        row.lambda_hat, row.fit_r2, row.fit_window = lyap.lambda_hat, lyap.fit_r2, int(lyap.window.size)
        flags.extend(lyap.flags)

        plain = build_kernel(base.potential, None, nu, base.spec)
        stat = stationary_log_solution(plain, cfg.stationary_tol)
        row.psi_nu_dist = sup_norm_mod_const(np.asarray(stat.psi_nu) - psi)
        del plain

        if certify:
            layers = build_markov_layers(op, trace, cfg.n_max)
            res.normalization_defect = max(l.normalization_defect for l in layers)
            rng = np.random.default_rng([cfg.seed, 3, index])
            u = np.exp(random_smooth_fields(base.spec, 1, rng, scale=cfg.field_scale)[:, 0])
            res.telescope_defect = max(telescope_check(op, layers, u, k) for k in range(1, min(cfg.telescope_n, cfg.n_max) + 1))
            _certify(base, nu, layers, res, flags, index)
    except (NumericalError, CertificationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        flags.append(f"error:{type(exc).__name__}")
    row.runtime_s = time.perf_counter() - t0
    row.flag = ";".join(flags)
    return res


def _certify(base, nu, layers, res, flags, index):
    cfg = base.config
    V = TorusField(base.spec, np.asarray(base.sol.psi) * np.asarray(build_domain_partition(base.sol, cfg.r_U, nu).chi) ** 2)
    rng = np.random.default_rng([cfg.seed, 2, index])
    n_smooth = cfg.hm_trials - cfg.hm_trials // 4
    fields = np.concatenate(
        [random_smooth_fields(base.spec, n_smooth, rng), rng.normal(size=(base.spec.size, cfg.hm_trials // 4))], axis=1
    )
    worst = 0.0
    for layer in layers:
        W = layer.weights()
        dr = certify_drift(layer, V, nu, base.report.kappa_sq_emp, W=W)
        R_abs = 2 * dr.level if dr.level > 0 else float(np.asarray(V).max()) / 2
        mn = certify_minorization(layer, V, R_abs / nu, nu, W=W)
        if mn.alpha0 <= 0:
            raise CertificationError(f"zero minorization mass on layer {layer.n}")
        params = hm_parameters(dr.gamma, dr.M_drift, min(mn.alpha0, 1.0), R_abs, V)
        try:
            w = verify_hm_contraction(layer, params, fields=fields, W=W)
        except CertificationError:
            flags.append(f"hm_violation@{layer.n}")
            w = np.nan
        worst = np.nanmax([worst, w])
        res.drift.append(dr)
        res.minorization.append(mn)
        res.params.append(params)
    row = res.row
    row.gamma = max(d.gamma for d in res.drift)
    row.M_drift_over_nu = max(d.M_over_nu for d in res.drift)
    row.alpha0 = min(p.alpha0 for p in res.params)
    row.alpha = max(p.alpha for p in res.params)
    row.hm_worst_ratio = float(worst)


def run_sweep(config: ExperimentConfig, base: Baseline | None = None, certify: bool = True) -> list:
    base = prepare(config) if base is None else base
    nus = list(config.nu_list)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            return list(pool.map(lambda a: run_nu(base, a[1], a[0], certify), enumerate(nus)))
    return [run_nu(base, nu, i, certify) for i, nu in enumerate(nus)]


def sweep_summary(rows) -> dict:
    lam = np.array([r.lambda_hat for r in rows], dtype=float)
    good = lam[np.isfinite(lam)]
    if good.size == 0:
        return {"min_lambda": np.nan, "median_lambda": np.nan, "uniformity": np.nan, "failed": len(rows)}
    med = float(np.median(good))
    return {
        "min_lambda": float(good.min()),
        "median_lambda": med,
        "uniformity": float(good.min() / med),
        "failed": int(np.sum(~np.isfinite(lam))),
    }
