"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed self-test.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, parse_overrides
from .experiments import Baseline, prepare, run_nu, run_sweep, sweep_summary
from .hessian import (
    assemble_hessian,
    build_action_path,
    det_dense,
    det_orbit_product,
    det_transfer,
    min_eigenvalue,
)
from .markov import (
    build_markov_layers,
    certify_drift,
    certify_minorization,
    hm_parameters,
    ratio_star_check,
    telescope_check,
    verify_hm_contraction,
)
from .potential import Potential
from .report import write_csv, write_gnuplot
from .torus import GridSpec, TorusField, sup_norm_mod_const, weighted_norm_mod_const
from .twist import OrbitError, PhasePoint, hyperbolic_linearization, twist_backward, twist_forward, twist_jacobian
from .variational import (
    WeakKamConvergenceError,
    action_matrix,
    contraction_report,
    lax_oleinik_apply,
    solve_weak_kam,
)
from .viscous import (
    NumericalError,
    apply_log,
    build_domain_partition,
    build_kernel,
    partition_trace,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4

SWEEP_HEADER = [
    "nu [1]",
    "lambda_hat [1/kick]",
    "fit_r2 [1]",
    "gamma [1]",
    "M_drift_over_nu [V/nu]",
    "alpha0 [1]",
    "alpha [1]",
    "kappa_sq_emp [1]",
    "mu [1]",
    "Q_ratio_max [1]",
    "partition_ratio_max [1]",
    "psi_nu_dist [action]",
    "hm_worst_ratio [1]",
    "growth_rate_U [1/kick]",
    "fit_window [kicks]",
    "flag [text]",
]


def _out(config: ExperimentConfig) -> Path:
    p = Path(config.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_weak_kam(config: ExperimentConfig) -> int:
    F = config.make_potential()
    spec = config.grid
    sol = solve_weak_kam(F, spec, config.weak_kam_tol, config.weak_kam_max_iter)
    hyp = hyperbolic_linearization(F)
    rep = contraction_report(sol, hyp)
    d = spec.d
    axes = "xy"[:d]
    header = (
        [f"{a} [torus]" for a in axes]
        + ["psi [action]"]
        + [f"grad_psi_{a} [action/torus]" for a in axes]
        + [f"ybar_{a} [torus]" for a in axes]
        + ["cut_locus [bool]"]
    )
    pts = spec.points()
    psi = np.asarray(sol.psi)
    rows = [
        [*pts[i], psi[i], *sol.grad_psi[i], *sol.ybar[i], bool(sol.cut_locus[i])]
        for i in range(spec.size)
    ]
    out = _out(config)
    write_csv(out / "psi.csv", header, rows)
    write_csv(
        out / "contraction_report.csv",
        [
            "residual [action]",
            "iterations [1]",
            "ties [1]",
            "kappa_sq_emp [1]",
            "kappa0 [1]",
            "kappa0_sq [1]",
            "quadratic_lower_c [action/torus^2]",
            "near_zero_ratio_max [1]",
            "far_ratio_max [1]",
            "far_bound [1]",
            "eps_floor [action]",
        ],
        [[
            sol.residual, sol.iterations, sol.ties, rep.kappa_sq_emp, rep.kappa0_pred, rep.kappa0_sq,
            rep.quadratic_lower_c, float(np.max(rep.near_zero_ratios)), rep.far_ratio_max, rep.far_bound,
            rep.eps_floor,
        ]],
    )
    print(f"weak KAM: residual {sol.residual:.3e} after {sol.iterations} iterations; kappa^2 = {rep.kappa_sq_emp:.6g}")
    return EXIT_OK


def cmd_hyperbolic(config: ExperimentConfig) -> int:
    hyp = hyperbolic_linearization(config.make_potential())
    d = config.d
    idx = [(i, j) for i in range(d) for j in range(i, d)]
    header = (
        [f"M_{i}{j} [1]" for i, j in idx]
        + [f"S_plus_{i}{j} [1]" for i, j in idx]
        + [f"S_minus_{i}{j} [1]" for i, j in idx]
        + ["mu [1]", "kappa0 [1]", "riccati_residual [1]", "conjugacy_residual [1]",
           "commutation_residual [1]", "graph_residual [1]"]
    )
    row = (
        [hyp.M[i, j] for i, j in idx]
        + [hyp.S_plus[i, j] for i, j in idx]
        + [hyp.S_minus[i, j] for i, j in idx]
        + [hyp.mu, hyp.kappa0, hyp.riccati_residual, hyp.conjugacy_residual,
           hyp.commutation_residual, hyp.graph_residual]
    )
    write_csv(_out(config) / "hyperbolic.csv", header, [row])
    print(f"mu = {hyp.mu:.10g}, kappa0 = {hyp.kappa0:.10g}")
    return EXIT_OK


def cmd_hessian(config: ExperimentConfig) -> int:
    base = prepare(config)
    x = np.asarray(config.hessian_x)
    idx = base.spec.index_of(x)
    rows = []
    for n in config.n_list:
        path = build_action_path(idx, n, base.sol)
        A = assemble_hessian(path, base.sol)
        dense = det_dense(A).logabs if A.size <= 400 else np.nan
        lt = det_transfer(A)
        lo = det_orbit_product(path, base.sol)
        rows.append([
            n, dense, lt.logabs, lo.logabs, min_eigenvalue(A),
            float(np.exp(lt.logabs - n * np.log(base.hyp.mu))), path.H_value, path.el_residual,
        ])
    write_csv(
        _out(config) / "hessian.csv",
        ["n [kicks]", "logdet_dense [1]", "logdet_transfer [1]", "logdet_orbit [1]", "min_eigenvalue [1]",
         "det_over_mu_n [1]", "H_value [action]", "el_residual [torus]"],
        rows,
    )
    print(f"hessian: {len(rows)} rows at x = {tuple(x)}")
    return EXIT_OK


def _sweep_row_values(r):
    return [
        r.nu, r.lambda_hat, r.fit_r2, r.gamma, r.M_drift_over_nu, r.alpha0, r.alpha, r.kappa_sq_emp, r.mu,
        r.Q_ratio_max, r.partition_ratio_max, r.psi_nu_dist, r.hm_worst_ratio, r.growth_rate_U, r.fit_window,
        r.flag or "ok",
    ]


def cmd_lyapunov_sweep(config: ExperimentConfig) -> int:
    results = run_sweep(config)
    rows = [res.row for res in results]
    out = _out(config)
    write_csv(out / "sweep.csv", SWEEP_HEADER, [_sweep_row_values(r) for r in rows])
    # wall-clock times live in their own file so that sweep.csv is reproducible
    write_csv(out / "sweep_timing.csv", ["nu [1]", "runtime_s [s]"], [[r.nu, r.runtime_s] for r in rows])
    write_gnuplot(out / "sweep.gp", "sweep.csv", 1, [2], title="decay rate against viscosity")
    s = sweep_summary(rows)
    print(f"sweep: min lambda_hat = {s['min_lambda']:.6g}, min/median = {s['uniformity']:.4f}, failed = {s['failed']}")
    return EXIT_NUMERICAL if s["failed"] == len(rows) else EXIT_OK


def cmd_partition_trace(config: ExperimentConfig) -> int:
    base = prepare(config)
    rows = []
    for nu in config.nu_list:
        op = build_kernel(base.potential, base.sol, nu, base.spec)
        part = build_domain_partition(base.sol, config.r_U, nu)
        tr = partition_trace(op, config.n_max, part, config.c_budget)
        for n in range(tr.n_max + 1):
            growth = tr.growth[n] if n < tr.n_max else np.nan
            rows.append([nu, n, tr.log_Qn[n], tr.ratio_hi[n], growth, n in tr.flagged])
    out = _out(config)
    write_csv(
        out / "partition_trace.csv",
        ["nu [1]", "n [kicks]", "log_Qn [1]", "ratio_hi [1]", "Q_growth [1]", "over_budget [bool]"],
        rows,
    )
    write_gnuplot(out / "partition_trace.gp", "partition_trace.csv", 2, [3], title="log Q_n")
    print(f"partition trace: {len(config.nu_list)} viscosities, n_max = {config.n_max}")
    return EXIT_OK


def cmd_markov_check(config: ExperimentConfig) -> int:
    base = prepare(config)
    rows = []
    for i, nu in enumerate(config.nu_list):
        res = run_nu(base, nu, i, certify=True)
        r = res.row
        rows.append([
            nu, res.normalization_defect, res.telescope_defect, r.gamma, r.M_drift_over_nu, r.alpha0, r.alpha,
            r.hm_worst_ratio, res.chi_ratio, r.flag or "ok",
        ])
    write_csv(
        _out(config) / "markov_check.csv",
        ["nu [1]", "normalization_defect [1]", "telescope_defect [1]", "gamma [1]", "M_drift_over_nu [V/nu]",
         "alpha0 [1]", "alpha [1]", "hm_worst_ratio [1]", "chi_ratio [1]", "flag [text]"],
        rows,
    )
    print(f"markov check: {len(rows)} viscosities")
    return EXIT_OK


# --- self-test -------------------------------------------------------------


def _selftest_checks(config: ExperimentConfig, inject_fault: bool):
    F = config.make_potential()
    spec = config.grid
    sol = solve_weak_kam(F, spec, config.weak_kam_tol, config.weak_kam_max_iter)
    if inject_fault:
        bump = 0.1 * np.sin(2 * np.pi * spec.points()[:, 0])
        sol = dataclasses.replace(sol, psi=TorusField(spec, np.asarray(sol.psi) + bump))
    hyp = hyperbolic_linearization(F)
    A = action_matrix(spec, F)
    rng = np.random.default_rng(config.seed)
    nu = config.nu_list[len(config.nu_list) // 2]
    psi = np.asarray(sol.psi)

    def fixed_point():
        Tpsi = lax_oleinik_apply(sol.psi, F, A)
        res = sup_norm_mod_const(np.asarray(Tpsi) - psi)
        return res < 10 * config.weak_kam_tol, f"residual {res:.2e}"

    def positivity():
        ok = psi[0] == 0 and np.all(psi[1:] > 0)
        return ok, f"min off 0 = {psi[1:].min():.2e}"

    def hyperbolic():
        worst = max(hyp.riccati_residual, hyp.conjugacy_residual, hyp.commutation_residual, hyp.graph_residual)
        return worst < 1e-10, f"worst residual {worst:.1e}"

    def twist():
        q = PhasePoint(rng.uniform(-0.5, 0.5, spec.d), rng.uniform(-1, 1, spec.d))
        back = twist_forward(twist_backward(q, F), F)
        err = float(np.abs(back.as_vector() - q.as_vector()).max())
        det = float(np.linalg.det(twist_jacobian(q, F)))
        return err < 1e-13 and abs(det - 1) < 1e-10, f"round trip {err:.1e}, det-1 {det - 1:.1e}"

    def contraction():
        rep = contraction_report(sol, hyp)
        return rep.kappa_sq_emp < 1, f"kappa^2 {rep.kappa_sq_emp:.4g}"

    def hessian():
        x = spec.index_of(np.full(spec.d, 0.3))
        path = build_action_path(x, 8, sol)
        H = assemble_hessian(path, sol)
        a, b, c = det_dense(H).logabs, det_transfer(H).logabs, det_orbit_product(path, sol).logabs
        err = max(abs(a - b), abs(a - c)) / abs(a)
        return err < 1e-6, f"relative spread {err:.1e}"

    def heat_mass():
        op = build_kernel(Potential.free(spec.d), None, nu, spec)
        err = float(np.abs(np.exp(apply_log(op, np.zeros(spec.size))) - 1).max())
        return err < 1e-8, f"mass defect {err:.1e}"

    def conjugation():
        opt = build_kernel(F, sol, nu, spec)
        op = build_kernel(F, None, nu, spec)
        logu = rng.normal(size=spec.size)
        lhs = apply_log(opt, logu)
        rhs = psi / (2 * nu) + apply_log(op, logu - psi / (2 * nu))
        err = float(np.abs(np.expm1(lhs - rhs)).max())
        return err < 1e-8, f"relative defect {err:.1e}"

    def markov():
        opt = build_kernel(F, sol, nu, spec)
        part = build_domain_partition(sol, config.r_U, nu)
        tr = partition_trace(opt, 4, part)
        layers = build_markov_layers(opt, tr, 3)
        tel = telescope_check(opt, layers, np.exp(rng.normal(size=spec.size)), 3)
        norm = max(l.normalization_defect for l in layers)
        return norm < 1e-10 and tel < 1e-8, f"normalization {norm:.1e}, telescope {tel:.1e}"

    def harris():
        opt = build_kernel(F, sol, nu, spec)
        part = build_domain_partition(sol, config.r_U, nu)
        tr = partition_trace(opt, 2, part)
        layer = build_markov_layers(opt, tr, 1)[0]
        V = psi * np.asarray(part.chi) ** 2
        dr = certify_drift(layer, V, nu, 0.0)
        R = 2 * dr.level if dr.level > 0 else V.max() / 2
        mn = certify_minorization(layer, V, R / nu, nu)
        p = hm_parameters(dr.gamma, dr.M_drift, min(mn.alpha0, 1.0), R, TorusField(spec, V))
        w = verify_hm_contraction(layer, p, trials=40, rng=rng)
        return w <= p.alpha + 1e-6, f"worst {w:.3g} <= alpha {p.alpha:.3g}"

    def decay():
        base = Baseline(config, F, spec, sol, hyp, contraction_report(sol, hyp))
        r = run_nu(base, nu, 0, certify=False).row
        return bool(r.lambda_hat > 0 and r.fit_r2 >= 0.99), f"lambda {r.lambda_hat:.3g}, R2 {r.fit_r2:.4f}"

    def norm_lemmas():
        bad = 0
        for _ in range(200):
            f = rng.normal(size=spec.size)
            V = rng.exponential(size=spec.size)
            beta = rng.exponential()
            a = weighted_norm_mod_const(f, V, beta)
            s = sup_norm_mod_const(f)
            bad += not (a <= s + 1e-12 and s <= (1 + beta * V.max()) * a + 1e-12)
            u = 1 + rng.uniform(0, 0.4) * rng.random(spec.size)
            v = 1 + rng.uniform(0, 0.4) * rng.random(spec.size)
            bad += ratio_star_check(u, v) is False
        return bad == 0, f"{bad} violations"

    return [
        ("weak KAM fixed point", fixed_point),
        ("psi positive off 0", positivity),
        ("hyperbolic invariants", hyperbolic),
        ("twist inverse and symplectic", twist),
        ("variational contraction", contraction),
        ("hessian determinants", hessian),
        ("heat kernel mass", heat_mass),
        ("conjugation identity", conjugation),
        ("markov normalization", markov),
        ("weighted contraction", harris),
        ("viscous decay rate", decay),
        ("norm lemmas", norm_lemmas),
    ]


def cmd_selftest(config: ExperimentConfig, inject_fault: bool = False) -> int:
    t0 = time.perf_counter()
    failed = 0
    print(f"{'check':32s} {'result':6s} detail")
    for name, fn in _selftest_checks(config, inject_fault):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failed += not ok
        print(f"{name:32s} {'pass' if ok else 'FAIL':6s} {detail}")
    print(f"{failed} failed, {time.perf_counter() - t0:.1f} s")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


SELFTEST_DEFAULTS = {"n_per_axis": 128, "nu_list": (0.05, 0.02, 0.01)}

COMMANDS = {
    "weak-kam": cmd_weak_kam,
    "hyperbolic": cmd_hyperbolic,
    "hessian": cmd_hessian,
    "lyapunov-sweep": cmd_lyapunov_sweep,
    "partition-trace": cmd_partition_trace,
    "markov-check": cmd_markov_check,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kickedhj",
        description="Numerical experiments for the kicked viscous Hamilton-Jacobi equation.",
        epilog="Any config key can be overridden as --key value (e.g. --n_per_axis 256).",
    )
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="parallel viscosities in the sweep")
    p.add_argument("--seed", type=int, help="seed for random test fields")
    p.add_argument("--inject-fault", action="store_true", help="selftest only: perturb psi before checking")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        overrides = parse_overrides(rest)
        for key in ("out", "threads", "seed"):
            val = getattr(args, key)
            if val is not None:
                overrides[key] = val
        if args.command == "selftest":
            for k, v in SELFTEST_DEFAULTS.items():
                overrides.setdefault(k, v)
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "selftest":
            return cmd_selftest(config, args.inject_fault)
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WeakKamConvergenceError as exc:
        print(f"numerical failure: {exc} (last residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalError, OrbitError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
