import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kickedhj.potential import Potential
from kickedhj.torus import centered
from kickedhj.twist import (
    OrbitError,
    PhasePoint,
    backward_orbit,
    hyperbolic_linearization,
    naive_backward_orbit,
    riccati_bundle,
    twist_backward,
    twist_forward,
    twist_jacobian,
)
from kickedhj.variational import backward_minimizer

F1 = Potential.cosine(1.0)
F2 = Potential.cosine([1.0, 0.7], d=2, cross=0.1)
real = st.floats(-3, 3, allow_nan=False)


def test_twist_examples():
    q = twist_forward(PhasePoint([0.0], [0.0]), F1)
    assert q.x[0] == 0 and q.p[0] == 0
    q = twist_forward(PhasePoint([0.3, 0.1], [0.2, -0.5]), Potential.free(2))
    assert np.allclose(q.x, [0.5, -0.4]) and np.allclose(q.p, [0.2, -0.5])
    q = twist_forward(PhasePoint([0.25], [0.1]), F1)
    assert q.x[0] == pytest.approx(0.35 + np.pi, abs=1e-14)
    assert q.p[0] == pytest.approx(0.1 + np.pi, abs=1e-14)
    assert np.all(twist_backward(PhasePoint([0.0], [0.0]), F1).as_vector() == 0)


def test_phase_point_validation():
    with pytest.raises(ValueError):
        PhasePoint([0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        PhasePoint([np.inf], [0.0])


@given(real, real, real, real)
def test_round_trip(x0, x1, p0, p1):
    q = PhasePoint([x0, x1], [p0, p1])
    back = twist_forward(twist_backward(q, F2), F2)
    assert np.abs(back.as_vector() - q.as_vector()).max() <= 1e-14 * max(1.0, np.abs(q.as_vector()).max()) * 8


def test_jacobian_matches_finite_differences(rng):
    for _ in range(10):
        v = rng.uniform(-1, 1, 4)
        J = twist_jacobian(PhasePoint(v[:2], v[2:]), F2)
        num = np.zeros((4, 4))
        eps = 1e-6
        for j in range(4):
            e = np.zeros(4)
            e[j] = eps
            up = twist_forward(PhasePoint((v + e)[:2], (v + e)[2:]), F2).as_vector()
            dn = twist_forward(PhasePoint((v - e)[:2], (v - e)[2:]), F2).as_vector()
            num[:, j] = (up - dn) / (2 * eps)
        assert np.abs(J - num).max() < 1e-6
        assert np.linalg.det(J) == pytest.approx(1.0, abs=1e-10)


def test_jacobian_free():
    J = twist_jacobian(PhasePoint([0.1, 0.2], [0.0, 0.0]), Potential.free(2))
    I = np.eye(2)
    assert np.array_equal(J, np.block([[I, I], [0 * I, I]]))


def test_hyperbolic_scalar_oracle():
    hyp = hyperbolic_linearization(Potential.with_curvature(3.0))
    s = (-3 + np.sqrt(21)) / 2
    assert hyp.S_plus[0, 0] == pytest.approx(s, abs=1e-12)
    assert hyp.S_minus[0, 0] == pytest.approx((-3 - np.sqrt(21)) / 2, abs=1e-12)
    assert hyp.mu == pytest.approx(4 + s, abs=1e-12)
    assert hyp.kappa0 == pytest.approx(1 / (4 + s), abs=1e-12)
    assert hyp.riccati_residual < 1e-12
    assert hyp.conjugacy_residual < 1e-12


def test_hyperbolic_diagonal_and_invariants():
    F = Potential.cosine([1.0, 0.5], d=2)
    hyp = hyperbolic_linearization(F)
    assert hyp.S_plus[0, 1] == 0 and hyp.S_plus[1, 0] == 0
    for i, a in enumerate((1.0, 0.5)):
        m = 2 * np.pi**2 * a
        assert hyp.S_plus[i, i] == pytest.approx((-m + np.sqrt(m * m + 4 * m)) / 2, rel=1e-13)
    hyp2 = hyperbolic_linearization(F2)
    for r in (hyp2.riccati_residual, hyp2.conjugacy_residual, hyp2.commutation_residual, hyp2.graph_residual):
        assert r < 1e-10
    assert np.linalg.eigvalsh(hyp2.expansion).min() > 1
    assert hyp2.mu > 1 and 0 < hyp2.kappa0 < 1
    # graph of S+ is invariant under the linearized map
    J = twist_jacobian(PhasePoint([0.0, 0.0], [0.0, 0.0]), F2)
    h = np.array([0.3, -0.7])
    out = J @ np.concatenate([h, hyp2.S_plus @ h])
    assert np.allclose(out[2:], hyp2.S_plus @ out[:2], atol=1e-10)


def test_hyperbolic_rejects_degenerate():
    with pytest.raises(ValueError):
        hyperbolic_linearization(Potential.free())


def test_default_hyperbolic_values(hyp1):
    assert hyp1.S_plus[0, 0] == pytest.approx(0.95390242, abs=1e-8)
    assert hyp1.mu == pytest.approx(21.693111, abs=1e-6)


def test_orbit_at_zero(sol256):
    orb = backward_orbit(0, 5, sol256)
    assert np.all(orb.x == 0) and np.all(orb.p == 0)
    with pytest.raises(ValueError):
        backward_orbit(3, 0, sol256)


def test_orbit_decay_and_steps(sol1024, hyp1):
    for xc in (0.05, 0.2, -0.3, 0.42):
        i = sol1024.spec.index_of([xc % 1.0])
        orb = backward_orbit(i, 30, sol1024)
        assert orb.step_residual < 1e-9
        r = np.abs(orb.x[:, 0])
        assert np.all(np.diff(r[3:]) < 0)
        tail = r[10:25] / r[9:24]
        assert np.allclose(tail, hyp1.kappa0, rtol=1e-3)


def test_orbit_matches_composed_minimizer(sol1024):
    spec = sol1024.spec
    i = spec.index_of([0.3])
    orb = backward_orbit(i, 4, sol1024)
    y = spec.points()[i]
    for k in range(1, 5):
        y = np.asarray(backward_minimizer(y % 1.0, sol1024).coords)
        # the polish is second order and backward steps contract, so errors do not accumulate
        assert abs(centered(y[0] - orb.x[k, 0])) < spec.spacing**2


def test_naive_orbit_is_unstable(sol1024):
    i = sol1024.spec.index_of([0.3])
    good = backward_orbit(i, 12, sol1024)
    try:
        naive = naive_backward_orbit(i, 12, sol1024)
    except OrbitError:
        return
    assert np.abs(naive.x[-1] - good.x[-1]).max() > 1e3 * np.abs(good.x[-1]).max()


def test_orbit_on_cut_locus_rejected(sol1024):
    i = int(np.flatnonzero(sol1024.cut_locus)[0])
    with pytest.raises(OrbitError):
        backward_orbit(i, 3, sol1024)


def test_riccati_bundle_is_hess_psi(sol1024):
    orb = backward_orbit(sol1024.spec.index_of([0.2]), 6, sol1024)
    psi = sol1024.interpolator
    h = 1e-3
    for k in range(orb.n + 1):
        x = orb.x[k, 0]
        fd = (psi(np.array([x + h])) - 2 * psi(np.array([x])) + psi(np.array([x - h])))[0] / h**2
        assert orb.hess_psi[k, 0, 0] == pytest.approx(fd, abs=2e-3)
    S = riccati_bundle(np.zeros((3, 1)), F1, hyperbolic_linearization(F1).S_plus)
    assert np.allclose(S, hyperbolic_linearization(F1).S_plus, atol=1e-14)


def test_orbit_2d(sol2d):
    spec = sol2d.spec
    i = spec.index_of([0.125, 0.0625])
    orb = backward_orbit(i, 10, sol2d)
    assert orb.step_residual < 1e-9
    assert np.linalg.norm(orb.x[-1]) < 1e-3 * np.linalg.norm(orb.x[0])
