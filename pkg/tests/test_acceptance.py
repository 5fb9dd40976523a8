"""Acceptance gate: one PASS/FAIL line per criterion at the required tolerances."""
import math
import time

import numpy as np
import pytest

from kickedhj.config import ExperimentConfig
from kickedhj.experiments import prepare, run_sweep, sweep_summary
from kickedhj.hessian import (
    assemble_hessian,
    build_action_path,
    det_dense,
    det_orbit_product,
    det_transfer,
    min_eigenvalue,
)
from kickedhj.markov import build_markov_layers, random_smooth_fields, ratio_star_check
from kickedhj.potential import Potential
from kickedhj.torus import GridSpec, TorusField, sup_norm_mod_const, weighted_norm_mod_const
from kickedhj.twist import hyperbolic_linearization
from kickedhj.variational import action_matrix, contraction_report, inviscid_convergence, solve_weak_kam
from kickedhj.viscous import apply_log, build_domain_partition, build_kernel, partition_trace

pytestmark = pytest.mark.slow

CONFIG = ExperimentConfig()


@pytest.fixture(scope="module")
def base():
    return prepare(CONFIG)


@pytest.fixture(scope="module")
def sweep(base):
    t0 = time.perf_counter()
    results = run_sweep(CONFIG, base)
    return results, time.perf_counter() - t0


@pytest.fixture(scope="module")
def sweep_2048():
    cfg = CONFIG.replace(n_per_axis=2048)
    t0 = time.perf_counter()
    results = run_sweep(cfg, certify=False)
    return results, time.perf_counter() - t0


def test_criterion_01_weak_kam(criterion):
    t0 = time.perf_counter()
    sol = solve_weak_kam(Potential.cosine(1.0), GridSpec(1, 1024), tol=1e-8, max_iter=5000)
    dt = time.perf_counter() - t0
    psi = np.asarray(sol.psi)
    ok = sol.residual <= 1e-8 and dt < 30 and psi[0] == 0 and np.all(psi[1:] > 0)
    criterion(1, ok, f"residual {sol.residual:.2e} after {sol.iterations} it, {dt:.2f} s, min psi off 0 = {psi[1:].min():.2e}")
    assert ok


def test_criterion_02_hyperbolic(criterion):
    hyp = hyperbolic_linearization(Potential.cosine(1.0))
    s3 = hyperbolic_linearization(Potential.with_curvature(3.0)).S_plus[0, 0]
    err3 = abs(s3 - (-3 + math.sqrt(21)) / 2)
    ok = hyp.riccati_residual <= 1e-10 and hyp.conjugacy_residual <= 1e-10 and err3 <= 1e-5
    criterion(2, ok, f"riccati {hyp.riccati_residual:.1e}, conjugacy {hyp.conjugacy_residual:.1e}, M=3: S+ = {s3:.8f} (err {err3:.1e})")
    assert ok


def test_criterion_03_contraction(criterion, base):
    rep = contraction_report(base.sol, base.hyp)
    rel = np.abs(rep.near_zero_ratios / rep.kappa0_sq - 1)
    ok = rep.kappa_sq_emp < 1 and rel.max() <= 0.1
    criterion(3, ok, f"kappa_sq_emp {rep.kappa_sq_emp:.6f}, near-zero ratios within {rel.max():.2%} of kappa0^2 = {rep.kappa0_sq:.6f}")
    assert ok


def test_criterion_04_hessian(criterion, base):
    t0 = time.perf_counter()
    sol, mu = base.sol, base.hyp.mu
    U = np.flatnonzero(build_domain_partition(sol, CONFIG.r_U, 0.01).U_mask)
    U = U[U != 0]
    seeds = U[np.linspace(0, U.size - 1, 20).astype(int)]
    worst_rel = 0.0
    ratios = []
    eig_ok = True
    eig_worst = np.inf
    for s in seeds:
        lam = {}
        for n in range(1, 41):
            path = build_action_path(int(s), n, sol)
            A = assemble_hessian(path, sol)
            lt = det_transfer(A)
            if n <= 12:
                ld, lo = det_dense(A), det_orbit_product(path, sol)
                for other in (lt, lo):
                    worst_rel = max(worst_rel, abs(other.logabs - ld.logabs) / abs(ld.logabs))
            ratios.append(math.exp(lt.logabs - n * math.log(mu)))
            if n in (10, 40):
                lam[n] = min_eigenvalue(A)
        eig_worst = min(eig_worst, lam[40] / lam[10])
        eig_ok &= lam[40] >= 0.5 * lam[10]
    C_hat = max(max(ratios), 1 / min(ratios))
    dt = time.perf_counter() - t0
    ok = worst_rel <= 1e-6 and C_hat <= 10 and eig_ok and dt < 60
    criterion(4, ok, f"log-det rel spread {worst_rel:.1e} (n<=12), C_hat {C_hat:.5f} over 20 seeds x n<=40, "
                     f"min eig(40)/eig(10) {eig_worst:.4f}, {dt:.1f} s")
    assert ok


def test_criterion_05_operator_identities(criterion, base, sweep):
    results, _ = sweep
    spec, sol, F = base.spec, base.sol, base.potential
    mass_err = conj_err = norm_err = 0.0
    rng = np.random.default_rng([CONFIG.seed, 5])
    for nu in CONFIG.nu_list:
        heat = build_kernel(Potential.free(), None, nu, spec)
        mass_err = max(mass_err, np.abs(np.expm1(apply_log(heat, np.zeros(spec.size)))).max())
        plain = build_kernel(F, None, nu, spec)
        conj = build_kernel(F, sol, nu, spec)
        psi = np.asarray(sol.psi) / (2 * nu)
        a = rng.normal(size=spec.size)
        b = a - psi
        for _ in range(3):
            a, b = apply_log(conj, a), apply_log(plain, b)
            conj_err = max(conj_err, np.abs(np.expm1(a - psi - b)).max())
        part = build_domain_partition(sol, CONFIG.r_U, nu)
        layers = build_markov_layers(conj, partition_trace(conj, 6, part), 5)
        norm_err = max(norm_err, max(np.abs(l.weights().sum(axis=0) - 1).max() for l in layers))
    tele = max(r.telescope_defect for r in results)
    ok = mass_err <= 1e-8 and conj_err <= 1e-8 and norm_err <= 1e-10 and tele <= 1e-8
    criterion(5, ok, f"heat mass {mass_err:.1e}, conjugation {conj_err:.1e}, Markov columns {norm_err:.1e}, telescope {tele:.1e}")
    assert ok


def test_criterion_06_partition_scaling(criterion, base, sweep):
    results, _ = sweep
    row = next(r.row for r in results if r.row.nu == 0.01)
    log_mu = math.log(base.hyp.mu)
    rel = abs(row.growth_rate_U - log_mu) / log_mu
    rel_half = abs(row.growth_rate_U + 0.5 * log_mu) / (0.5 * log_mu)
    C_ratio = max(r.row.partition_ratio_max for r in results)
    flagged = any(r.trace.flagged for r in results)
    ok = rel <= 0.1 and np.isfinite(C_ratio) and C_ratio <= CONFIG.c_budget and not flagged
    criterion(6, ok, f"growth on U at nu=0.01: {row.growth_rate_U:.4f} vs log mu {log_mu:.4f} (rel {rel:.2f}); "
                     f"vs -log(mu)/2 rel {rel_half:.3f}; ratio bound {C_ratio:.4f} over n<=20 and sweep")
    assert ok


def test_criterion_07_hairer_mattingly(criterion, sweep):
    rows = [r.row for r in sweep[0]]
    certified = all(np.isfinite(r.gamma) and r.gamma < 1 and r.alpha0 > 0 and "error" not in r.flag for r in rows)
    m = np.array([r.M_drift_over_nu for r in rows])
    spread = m.max() / m.min()
    hm_ok = all(r.hm_worst_ratio <= r.alpha + 1e-6 for r in rows)
    ok = certified and spread <= 3 and hm_ok
    detail = ", ".join(f"{r.nu:g}:{r.M_drift_over_nu:.3f}" for r in rows)
    criterion(7, ok, f"certified {certified}, M_drift/nu spread {spread:.2f} ({detail}), "
                     f"HM worst/alpha max {max(r.hm_worst_ratio / r.alpha for r in rows):.3f}")
    assert ok


def test_criterion_08_uniform_rate(criterion, sweep, sweep_2048):
    results, dt = sweep
    rows = [r.row for r in results]
    summ = sweep_summary(rows)
    lam = np.array([r.lambda_hat for r in rows])
    r2 = np.array([r.fit_r2 for r in rows])
    lam2 = np.array([r.row.lambda_hat for r in sweep_2048[0]])
    drift = np.abs(lam2 / lam - 1)
    ok = np.all(lam > 0) and np.all(r2 >= 0.99) and summ["uniformity"] >= 0.5 and np.all(drift <= 0.1) and dt < 600
    detail = " ".join(f"{r.nu:g}:{r.lambda_hat:.3f}" for r in rows)
    criterion(8, ok, f"lambda_hat {detail}; min R^2 {r2.min():.4f}; uniformity {summ['uniformity']:.3f}; "
                     f"2048 drift {drift.max():.1e}; sweep {dt:.0f} s")
    assert ok


def test_criterion_09_norm_lemmas(criterion):
    rng = np.random.default_rng([CONFIG.seed, 9])
    bad_cmp = 0
    for _ in range(1000):
        m = int(rng.integers(2, 200))
        f = rng.normal(scale=rng.exponential(), size=m)
        V = rng.exponential(size=m) * rng.exponential()
        beta = rng.exponential() * 10 ** rng.uniform(-2, 2)
        a = weighted_norm_mod_const(f, V, beta)
        s = sup_norm_mod_const(f)
        bad_cmp += not (a <= s * (1 + 1e-12) and s <= (1 + beta * V.max()) * a * (1 + 1e-12))
    bad_ratio = 0
    tested = 0
    for _ in range(1000):
        m = int(rng.integers(2, 200))
        w = rng.uniform(0, 0.25)
        u = 1 + 2 * w * rng.random(m) * rng.uniform(0.01, 1)
        v = 1 + 2 * w * rng.random(m) * rng.uniform(0.01, 1)
        u, v = u / u.min(), v / v.min()
        r = ratio_star_check(u, v)
        tested += r is not None
        bad_ratio += r is False
    ok = bad_cmp == 0 and bad_ratio == 0 and tested == 1000
    criterion(9, ok, f"norm comparison violations {bad_cmp}/1000, ratio bound violations {bad_ratio}/{tested}")
    assert ok


def test_criterion_10_inviscid(criterion, base):
    spec, sol = base.spec, base.sol
    A = action_matrix(spec, base.potential)
    phi = random_smooth_fields(spec, 10, np.random.default_rng([CONFIG.seed, 10]))
    convs = [inviscid_convergence(TorusField(spec, phi[:, j]), sol, action=A) for j in range(10)]
    r2 = np.array([c.fit_r2 for c in convs])
    slopes = np.array([c.slope for c in convs])
    ok = np.all(slopes < 0) and np.all(r2 >= 0.99)
    criterion(10, ok, f"min R^2 {r2.min():.5f} (halving rule {min(c.halving_r2 for c in convs):.5f}), "
                      f"rate {-np.median(slopes):.3f} vs -log kappa0 {-math.log(base.hyp.kappa0):.3f}")
    assert ok
